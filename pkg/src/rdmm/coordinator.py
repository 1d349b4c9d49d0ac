"""Joint market/train iteration over forecast instances and the rolling horizon.

Each forecast iteration lets every train best-respond to the current
electric prices, aggregates their power into per-ACC traction forecasts,
and renegotiates every ACC's dispatch with warm-started prices. The loop
stops once successive equilibria agree; the first interval of the final
equilibrium is the binding settlement.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from .core import HorizonGrid, InvalidArgument, J_PER_KWH, acc_boundaries, usd_per_kwh_to_usd_per_j
from .dispatch import DispatchResult, NegotiationState, negotiate
from .scenario import PriceSeries, Scenario
from .trajectory import PriceFunction, Trajectory, min_work_profile, optimize_trip, trajectory_cost, trajectory_pieces

log = logging.getLogger(__name__)


class HorizonTruncationWarning(UserWarning):
    pass


# --- coupling between the layers ---------------------------------------------------------


def aggregate_traction(trajectories, grid: HorizonGrid, track) -> np.ndarray:
    """Interval-averaged train power per ACC in W, load-negative, shape ``(N, M)``.

    A train contributes to cell ``(n, K)`` the energy it draws while inside
    ACC ``n`` during interval ``K``, divided by the interval length.
    """
    edges = acc_boundaries(track)
    out = np.zeros((len(track), grid.num_intervals))
    for traj in trajectories:
        if traj.x.min() < edges[0] - 1e-6 or traj.x.max() > edges[-1] + 1e-6:
            raise InvalidArgument(f"trajectory {traj.train_id!r} leaves the track "
                                  f"[{edges[0]:g}, {edges[-1]:g}] m")
        pieces = trajectory_pieces(traj, track, grid.edges)
        mid = 0.5 * (pieces.t_start + pieces.t_end)
        inside = (mid >= grid.start_time) & (mid < grid.end_time)
        K = ((mid[inside] - grid.start_time) // grid.interval_length).astype(int)
        energy = pieces.power[inside] * pieces.duration[inside]
        np.add.at(out, (pieces.acc[inside] - 1, K), -energy)
    return out / grid.interval_length


def compose_train_prices(lambda_e, grid: HorizonGrid, track, trajectory: Trajectory | None = None) -> PriceFunction:
    """Train-side price field from per-ACC electric prices in $/kWh.

    The price a train pays at time ``t`` is that of the ACC it occupies in
    the interval containing ``t``; after the horizon the last interval's
    price is held.
    """
    lam = np.asarray(lambda_e, dtype=float)
    if trajectory is not None:
        edges = acc_boundaries(track)
        if trajectory.x.min() < edges[0] - 1e-6 or trajectory.x.max() > edges[-1] + 1e-6:
            raise InvalidArgument(f"trajectory {trajectory.train_id!r} leaves the priced track")
    return PriceFunction(grid, usd_per_kwh_to_usd_per_j(lam), track)


# --- results -----------------------------------------------------------------------------


@dataclass(eq=False)
class ForecastIterate:
    j: int
    results: dict[int, DispatchResult]
    trajectories: list[Trajectory]
    traction: np.ndarray  # W, (N, M), load-negative
    train_prices: np.ndarray  # $/kWh the trains responded to
    delta_y: float = float("inf")
    delta_lambda: float = float("inf")
    damping: float = 1.0

    @property
    def lambda_e(self) -> np.ndarray:
        return np.array([self.results[n].lambda_e for n in sorted(self.results)])

    @property
    def lambda_th(self) -> np.ndarray:
        return np.array([self.results[n].lambda_th for n in sorted(self.results)])

    def y_matrix(self) -> np.ndarray:
        return np.concatenate([self.results[n].y for n in sorted(self.results)])

    @property
    def train_cost(self) -> float:
        return float(sum(t.cost for t in self.trajectories))


@dataclass(eq=False)
class Settlement:
    """Binding outcome of one horizon.

    Prices are ``(N, M)`` in $/kWh; the first column is binding. Train
    payments are the exact cost of each trajectory at ``lambda_e`` (held
    past the horizon).
    """

    grid: HorizonGrid
    track: tuple
    lambda_e: np.ndarray
    lambda_th: np.ndarray
    y: dict[str, np.ndarray]
    traction: np.ndarray  # W
    train_costs: dict[str, float]
    agent_revenue: dict[str, np.ndarray]  # $ per interval
    passive_payment: np.ndarray  # $ per ACC and interval (electric + thermal)
    train_payment: np.ndarray  # $ per ACC and interval inside the horizon
    converged: bool
    iterations: int
    results: dict[int, DispatchResult] = field(default_factory=dict)
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def train_prices(self) -> PriceFunction:
        return compose_train_prices(self.lambda_e, self.grid, self.track)

    def payment_imbalance(self) -> np.ndarray:
        """Agent revenue minus payments of passive loads and trains per ACC and interval ($)."""
        rev = np.zeros_like(self.passive_payment)
        for n, acc in enumerate(self.track):
            for aid in acc.agent_ids:
                rev[n] += self.agent_revenue[aid]
        return rev - self.passive_payment - self.train_payment

    def binding(self) -> dict:
        """Setpoints, prices and traction of interval ``K = 1``."""
        return {"lambda_e": self.lambda_e[:, 0].copy(), "lambda_th": self.lambda_th[:, 0].copy(),
                "y": {k: float(v[0]) for k, v in self.y.items()}, "traction_w": self.traction[:, 0].copy()}


@dataclass(eq=False)
class RdmmRun:
    settlement: Settlement
    iterates: list[ForecastIterate]
    log: list[dict]
    converged: bool


def settle(scenario: Scenario, it: ForecastIterate, converged: bool) -> Settlement:
    grid, track = scenario.horizon, scenario.track
    h = grid.interval_hours
    lam_e, lam_th = it.lambda_e, it.lambda_th
    prices = compose_train_prices(lam_e, grid, track)
    y, revenue = {}, {}
    passive = np.zeros_like(lam_e)
    for n, acc in enumerate(track, start=1):
        res = it.results[n]
        agents = scenario.acc_agents(n)
        for agent, yi in zip(agents, res.y):
            y[agent.id] = yi.copy()
            revenue[agent.id] = lam_e[n - 1] * agent.d_e * yi + lam_th[n - 1] * agent.d_th * yi
        elec, therm = scenario.passive_loads(n)
        passive[n - 1] = -(lam_e[n - 1] * elec + lam_th[n - 1] * therm) * h
    # traction in W -> kWh per interval
    train_payment = -lam_e * it.traction * grid.interval_length / J_PER_KWH
    costs = {t.train_id: trajectory_cost(t, prices) for t in it.trajectories}
    return Settlement(grid, track, lam_e, lam_th, y, it.traction.copy(), costs, revenue, passive, train_payment,
                      converged, it.j, dict(it.results), list(it.trajectories))


# --- Algorithm ---------------------------------------------------------------------------


def _negotiate_all(scenario: Scenario, traction_w: np.ndarray, previous: dict | None,
                   executor: Executor | None) -> dict[int, DispatchResult]:
    h = scenario.horizon.interval_hours

    def run(n):
        elec, therm = scenario.passive_loads(n)
        loads = (elec + traction_w[n - 1] / 1000.0, therm)
        agents = scenario.acc_agents(n)
        warm = None if previous is None else previous[n].state
        if warm is not None:
            warm = NegotiationState(warm.y, warm.lambda_e, warm.lambda_th, warm.mu_plus, warm.mu_minus, 0)
        return n, negotiate(agents, loads, scenario.steps, warm_start=warm, interval_hours=h)

    idx = [acc.index for acc in scenario.track]
    pairs = list(executor.map(run, idx)) if executor is not None else [run(n) for n in idx]
    return dict(pairs)


def _solve_trains(scenario: Scenario, lam_e, warm: list | None, nlps: dict, executor: Executor | None):
    prices = compose_train_prices(lam_e, scenario.horizon, scenario.track)

    def run(i):
        trip = scenario.trains[i]
        w = None if warm is None else warm[i]
        traj = optimize_trip(trip, prices, scenario.solver, warm_start=w, nlps=nlps.get(trip.id))
        nlps[trip.id] = traj.info["nlps"]
        return traj

    idx = range(len(scenario.trains))
    # fill the solver cache sequentially on the first pass so threads never race on it
    if executor is None or any(t.id not in nlps for t in scenario.trains):
        return [run(i) for i in idx]
    return list(executor.map(run, idx))


def _relative(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return 0.0
    return float(np.abs(a - b).max() / max(float(np.abs(b).max()), 1e-12))


def run_rdmm(scenario: Scenario, executor: Executor | None = None, bootstrap=None) -> RdmmRun:
    """Interleave train dispatch and railway dispatch until successive equilibria agree.

    Trains see the network price at the first iteration. Afterwards they
    respond to ``(1 - rho) * old + rho * new`` prices, where ``rho`` is the
    scenario damping and drops to 0.5 once a period-two oscillation in the
    prices is detected.
    """
    steps = scenario.steps
    lam_train = scenario.network_prices() if bootstrap is None else np.asarray(bootstrap, float)
    rho = scenario.damping
    nlps: dict = {}
    iterates: list[ForecastIterate] = []
    records: list[dict] = []
    previous = None
    warm = None
    converged = False
    for j in range(1, int(steps.j_max) + 1):
        trajs = _solve_trains(scenario, lam_train, warm, nlps, executor)
        traction = aggregate_traction(trajs, scenario.horizon, scenario.track)
        results = _negotiate_all(scenario, traction, previous, executor)
        it = ForecastIterate(j, results, trajs, traction, lam_train.copy(), damping=rho)
        if iterates:
            prev = iterates[-1]
            it.delta_y = _relative(it.y_matrix(), prev.y_matrix())
            it.delta_lambda = max(_relative(it.lambda_e, prev.lambda_e), _relative(it.lambda_th, prev.lambda_th))
        iterates.append(it)
        rec = {"j": j, "delta_y": it.delta_y, "delta_lambda": it.delta_lambda, "damping": rho,
               "train_cost": it.train_cost, "negotiation_iterations": sum(r.iterations for r in results.values()),
               "negotiation_converged": all(r.converged for r in results.values())}
        records.append(rec)
        log.info("forecast iteration %d: dy=%.3g dlambda=%.3g train cost=%.2f", j, it.delta_y,
                 it.delta_lambda, it.train_cost)
        if j > 2 and it.train_cost > iterates[-2].train_cost * (1 + 1e-9):
            rec["cost_increase"] = True
            log.info("train cost rose at iteration %d", j)
        if not scenario.trains or (it.delta_y <= steps.tol_j_y and it.delta_lambda <= steps.tol_j_lambda):
            converged = True
            break
        if len(iterates) >= 3 and rho > 0.5:
            d1 = np.abs(it.lambda_e - iterates[-2].lambda_e).max()
            d2 = np.abs(it.lambda_e - iterates[-3].lambda_e).max()
            if d2 < 0.5 * d1:
                rho = 0.5
                rec["oscillation"] = True
                log.warning("price oscillation detected at iteration %d; damping with rho=0.5", j)
        lam_train = (1 - rho) * lam_train + rho * it.lambda_e
        previous = results
        warm = trajs
    if converged:
        best = iterates[-1]
    else:
        log.warning("rDMM did not converge in %d forecast iterations", len(iterates))
        best = min(iterates[1:] or iterates, key=lambda r: max(r.delta_y, r.delta_lambda))
    return RdmmRun(settle(scenario, best, converged), iterates, records, converged)


def min_work_comparison(scenario: Scenario, settlement: Settlement, executor: Executor | None = None) -> dict:
    """Cost of the work-minimal trajectories at the settlement prices, per train."""
    prices = settlement.train_prices
    out = {}
    for trip in scenario.trains:
        mw = min_work_profile(trip, scenario.solver, executor=None)
        rd = settlement.train_costs[trip.id]
        base = trajectory_cost(mw, prices)
        out[trip.id] = {"rdmm_cost": rd, "min_work_cost": base,
                        "reduction_pct": 100.0 * (base - rd) / base if base else 0.0,
                        "min_work_energy_j": mw.energy, "min_work_trajectory": mw}
    return out


# --- rolling horizon ---------------------------------------------------------------------


def rolling_advance(scenario: Scenario, passive=None, prices: dict[int, PriceSeries] | None = None,
                    agents=None) -> Scenario:
    """Shift the horizon by one interval, optionally replacing forecasts and price series.

    Series that end before the new horizon hold their last value and raise
    a :class:`HorizonTruncationWarning`.
    """
    grid = scenario.horizon.shifted(1)
    passive = dict(scenario.passive if passive is None else passive)
    agents = dict(scenario.agents if agents is None else agents)
    prices = dict(scenario.prices) | dict(prices or {})
    off = int(round((grid.start_time - scenario.epoch) / grid.interval_length))
    need = off + grid.num_intervals
    for pid, prof in list(passive.items()):
        if len(prof) < need:
            warnings.warn(f"passive profile {pid} ends before the horizon; holding its last value",
                          HorizonTruncationWarning, stacklevel=2)
            idx = np.minimum(np.arange(need), len(prof) - 1)
            passive[pid] = type(prof)(prof.renewable[idx], prof.electric[idx], prof.thermal[idx])
    for aid, agent in list(agents.items()):
        if agent.M < need:
            warnings.warn(f"agent {aid} profiles end before the horizon; holding the last value",
                          HorizonTruncationWarning, stacklevel=2)
            idx = np.minimum(np.arange(need), agent.M - 1)
            agents[aid] = agent.replace(**{k: getattr(agent, k)[idx] for k in
                                           ("d_e", "d_th", "a", "b", "c", "y_min", "y_max")})
    last_start = grid.end_time - grid.interval_length
    for n, series in list(prices.items()):
        if series.timestamps[-1] < last_start:
            warnings.warn(f"price series for ACC {n} ends before the horizon; holding its last value",
                          HorizonTruncationWarning, stacklevel=2)
            prices[n] = PriceSeries(n, np.append(series.timestamps, last_start),
                                    np.append(series.values, series.values[-1]))
    return scenario.replace(horizon=grid, passive=passive, agents=agents, prices=prices)
