import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rdmm.core import AccDescriptor, GradeProfile, Station, Timetable, TrainSpec  # noqa: E402
from rdmm.trajectory import TripDefinition  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_acc_track(length=40_000.0, split=20_000.0):
    return (AccDescriptor(1, 0.0, split, "west"), AccDescriptor(2, split, length, "east"))


def simple_trip(length=10_000.0, duration=400.0, track=None, grade=None, train=None, trip_id="t"):
    track = track or (AccDescriptor(1, 0.0, length, "only"),)
    tt = Timetable((Station("A", 0.0, 0.0, 0.0), Station("B", length, 0.0, duration)))
    grade = grade or GradeProfile.flat(0.0, track[-1].end)
    return TripDefinition(trip_id, train or TrainSpec.acela(), tt, grade, track)


@pytest.fixture(scope="session")
def nec_run():
    """One full NEC run shared by the slow tests."""
    import time

    from rdmm.coordinator import min_work_comparison, run_rdmm
    from rdmm.scenario import build_nec_scenario

    sc = build_nec_scenario()
    t0 = time.perf_counter()
    run = run_rdmm(sc)
    cmp = min_work_comparison(sc, run.settlement)
    elapsed = time.perf_counter() - t0
    return sc, run, cmp, elapsed


def market_scenario(c=1e-5, *, M=4, interval=300.0, with_train=True, network=False, length=None,
                    passive_kw=-5000.0, price=50.0, price_series=None, **kw):
    """Two ACCs, one agent each, a 20 km single-leg train.

    With ``network`` the agents are linear network connections priced from
    the series; otherwise they are quadratic generators with curvature ``c``.
    """
    from rdmm.core import AccDescriptor, DispatchableAgent, HorizonGrid, PassiveProfiles
    from rdmm.dispatch import StepSizes
    from rdmm.scenario import PriceSeries, Scenario

    length = length or M
    if network:
        agents = {g: DispatchableAgent.constant(g, "network-connection", length, d_e=1, d_th=0, b=0.0, c=0.0,
                                                y_max=1e5, y_min=-1e5) for g in ("G1", "G2")}
    else:
        agents = {g: DispatchableAgent.constant(g, "electric-gen", length, d_e=1, d_th=0, b=0.05, c=c,
                                                y_max=1e5) for g in ("G1", "G2")}
    passive = {p: PassiveProfiles(np.zeros(length), np.full(length, passive_kw), np.zeros(length))
               for p in ("P1", "P2")}
    track = (AccDescriptor(1, 0.0, 10_000.0, "west", ("G1",), ("P1",)),
             AccDescriptor(2, 10_000.0, 20_000.0, "east", ("G2",), ("P2",)))
    trains = ()
    if with_train:
        tt = Timetable((Station("A", 0.0, 0.0, 0.0), Station("B", 20_000.0, 0.0, 800.0)))
        trains = (TripDefinition("t1", TrainSpec.acela(), tt, GradeProfile.flat(0, 20_000), track),)
    if price_series is None:
        end = length * interval
        price_series = {n: PriceSeries(n, [0.0, end], [price, price]) for n in (1, 2)}
    kw.setdefault("steps", StepSizes(j_max=20))
    kw.setdefault("c_min", 0.0 if network else 1e-6)
    return Scenario(HorizonGrid(M, interval, 0.0), track, agents, passive, trains, price_series, **kw)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results.values():
            terminalreporter.write_line(line)
