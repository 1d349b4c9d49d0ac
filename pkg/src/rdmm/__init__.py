"""Railway dynamic market mechanism: price-negotiated dispatch coupled to train trajectory optimisation."""
from .core import (AccDescriptor, AgentKind, DispatchableAgent, GradeProfile, HorizonGrid, InfeasibleError,
                   InvalidArgument, OutOfRange, PassiveProfiles, RdmmError, SpeedProfile, Station, Timetable,
                   TrainSpec, acc_of_position, build_time_grid)
from .dispatch import (DispatchResult, NegotiationState, StepSizes, agent_cost, agent_outputs, forecast_update,
                       kkt_report, negotiate, negotiation_step, qp_oracle, update_network_agent_cost)
from .dynamics import KinematicSample, Trace, davis_force, integrate_forward, power_from_kinematics, traction_limits
from .trajectory import (PriceFunction, SolverConfig, Trajectory, TripDefinition, evaluate_profile_cost,
                         min_work_profile, optimize_leg, optimize_trip, transcribe_leg)
from .scenario import (PriceSeries, Scenario, build_nec_scenario, load_gps_trace, load_price_series, load_scenario,
                       write_scenario)
from .coordinator import (ForecastIterate, Settlement, aggregate_traction, compose_train_prices, rolling_advance,
                          run_rdmm)
from .report import write_report

__version__ = "0.1.0"

__all__ = [
    "AccDescriptor",
    "AgentKind",
    "DispatchableAgent",
    "GradeProfile",
    "HorizonGrid",
    "InfeasibleError",
    "InvalidArgument",
    "OutOfRange",
    "PassiveProfiles",
    "RdmmError",
    "SpeedProfile",
    "Station",
    "Timetable",
    "TrainSpec",
    "acc_of_position",
    "build_time_grid",
    "DispatchResult",
    "NegotiationState",
    "StepSizes",
    "agent_cost",
    "agent_outputs",
    "forecast_update",
    "kkt_report",
    "negotiate",
    "negotiation_step",
    "qp_oracle",
    "update_network_agent_cost",
    "KinematicSample",
    "Trace",
    "davis_force",
    "integrate_forward",
    "power_from_kinematics",
    "traction_limits",
    "PriceFunction",
    "SolverConfig",
    "Trajectory",
    "TripDefinition",
    "evaluate_profile_cost",
    "min_work_profile",
    "optimize_leg",
    "optimize_trip",
    "transcribe_leg",
    "PriceSeries",
    "Scenario",
    "build_nec_scenario",
    "load_gps_trace",
    "load_price_series",
    "load_scenario",
    "write_scenario",
    "ForecastIterate",
    "Settlement",
    "aggregate_traction",
    "compose_train_prices",
    "rolling_advance",
    "run_rdmm",
    "write_report",
]
