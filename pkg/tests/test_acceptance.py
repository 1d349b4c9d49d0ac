"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary (see ``conftest.py``). Run alone with
``pytest tests/test_acceptance.py``.
"""
import functools
import json
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import market_scenario, simple_trip, two_acc_track
from oracles import cvxpy_dispatch, davis, random_dispatch_instance
from rdmm.cli import main
from rdmm.core import GRAVITY, HorizonGrid, TrainSpec
from rdmm.coordinator import run_rdmm
from rdmm.dispatch import kkt_report, negotiate, qp_oracle
from rdmm.dynamics import davis_force
from rdmm.report import write_report
from rdmm.scenario import load_gps_trace, trace_from_arrays, write_trace
from rdmm.trajectory import (PriceFunction, evaluate_profile_cost, min_work_profile, optimize_trip,
                             random_feasible_profile, transcribe_leg)

RESULTS: dict[str, str] = {}


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[name] = f"FAIL  {name}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                raise
            RESULTS[name] = f"PASS  {name}" + (f": {detail}" if detail else "")
        return run
    return wrap


@pytest.fixture(scope="module")
def instances():
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(100):
        h = float(rng.choice([1.0, 0.25]))
        agents, loads = random_dispatch_instance(rng, h=h)
        out.append((agents, loads, h))
    return out


@criterion("dispatch oracle equivalence")
def test_dispatch_oracle_equivalence(instances):
    elapsed = 0.0
    worst_y = worst_l = 0.0
    for agents, loads, h in instances:
        t0 = time.perf_counter()
        res = negotiate(agents, loads, interval_hours=h)
        elapsed += time.perf_counter() - t0
        assert res.converged
        ref = qp_oracle(agents, loads, h)
        for ref_y, ref_l in ((ref.y, ref.lambda_e), cvxpy_dispatch(agents, loads, h)[:2]):
            worst_y = max(worst_y, np.abs(res.y - ref_y).max() / max(1.0, np.abs(ref_y).max()))
            worst_l = max(worst_l, np.abs(res.lambda_e - ref_l).max() / np.abs(ref_l).max())
    assert worst_y <= 1e-3 and worst_l <= 1e-3
    assert elapsed < 10.0
    return f"100 instances, max rel dev y {worst_y:.1e}, lambda {worst_l:.1e}, {elapsed:.2f} s"


@criterion("KKT certificate")
def test_kkt_certificate(instances, nec_run):
    reports = []
    for agents, loads, h in instances:
        reports.append(kkt_report(agents, loads, negotiate(agents, loads, interval_hours=h)))
    sc, run, _, _ = nec_run
    s = run.settlement
    for acc in sc.track:
        elec, therm = sc.passive_loads(acc.index)
        loads = (elec + s.traction[acc.index - 1] / 1000.0, therm)
        res = s.results[acc.index]
        assert res.converged
        reports.append(kkt_report(sc.acc_agents(acc.index), loads, res))
    assert all(r.passes(1e-5, 1e-6, 1e-6) for r in reports)
    worst = max(r.stationarity for r in reports)
    return f"{len(reports)} results, worst stationarity {worst:.1e}"


@criterion("marginal-cost pricing")
def test_marginal_cost_pricing():
    t = 300.0 * np.arange(5)
    from rdmm.scenario import PriceSeries
    series = {n: PriceSeries(n, t, [31.0, 47.5, 120.0, 64.25, 64.25]) for n in (1, 2)}
    sc = market_scenario(network=True, price_series=series)
    run = run_rdmm(sc)
    assert run.converged
    pi = sc.network_prices()
    err = np.abs(run.settlement.lambda_e - pi).max()
    assert err <= 1e-9
    return f"max |lambda - pi| = {err:.1e} $/kWh"


@criterion("train physics")
def test_train_physics(nec_run, rng):
    spec = TrainSpec.acela()
    assert davis_force(spec, 0.0) == 10195.16
    assert davis_force(spec, 40.0) == pytest.approx(davis(10195.16, 65.81, 25.02, 40.0), rel=1e-15)

    # work-energy on every emitted trajectory, at every step boundary
    sc, run, cmp, _ = nec_run
    trajs = list(run.settlement.trajectories) + [c["min_work_trajectory"] for c in cmp.values()]
    worst_we = 0.0
    s = np.linspace(0.0, 1.0, 101)
    for traj in trajs:
        trip = next(t for t in sc.trains if t.id == traj.train_id)
        sp, grade = trip.train, trip.grade
        dt, dx = np.diff(traj.t), np.diff(traj.x)
        traction = traj.force[:-1] * dx
        resist = np.empty_like(dt)
        lift = np.empty_like(dt)
        for k in range(dt.size):
            tau = s * dt[k]
            v = traj.v[k] + traj.a[k] * tau
            xx = traj.x[k] + traj.v[k] * tau + 0.5 * traj.a[k] * tau * tau
            resist[k] = np.trapezoid(davis_force(sp, np.maximum(v, 0.0)) * v, tau)
            lift[k] = sp.mass * GRAVITY * np.trapezoid(np.sin(grade(xx)) * v, tau)
        kinetic = 0.5 * sp.mass * np.diff(traj.v ** 2)
        gap = np.cumsum(traction - resist - lift - kinetic)
        worst_we = max(worst_we, np.abs(gap).max() / np.abs(traction).sum())
    assert worst_we <= 0.01

    # optimiser gradient against central differences
    track = two_acc_track(12_000, 6_000)
    nlp = transcribe_leg(simple_trip(12_000, 480, track=track, grade=sc.trains[0].grade), 0)
    prices = PriceFunction(HorizonGrid(4, 120.0, 0.0), rng.uniform(1e-8, 4e-8, (2, 4)), track)
    params, _ = nlp.price_params(prices)
    worst_g = 0.0
    for _ in range(5):
        z = random_feasible_profile(nlp, rng)
        g = nlp.gradient(z, params)
        fd = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = 1e-6
            fd[i] = (nlp.objective(z + e, params) - nlp.objective(z - e, params)) / 2e-6
        worst_g = max(worst_g, np.linalg.norm(g - fd) / np.linalg.norm(g))
    assert worst_g <= 1e-5
    return f"work-energy gap {worst_we:.1e}, gradient rel err {worst_g:.1e}"


@criterion("uniform-price reduction")
def test_uniform_price_reduction(nec_run):
    sc = nec_run[0]
    trip = sc.trains[0]
    lam = 0.08 / 3.6e6
    opt = optimize_trip(trip, PriceFunction.uniform(lam, trip.track), sc.solver)
    mw = min_work_profile(trip, sc.solver)
    rel = abs(opt.energy - mw.energy) / abs(mw.energy)
    assert rel <= 1e-3
    return f"signed energy {opt.energy / 3.6e6:.2f} vs {mw.energy / 3.6e6:.2f} kWh, rel {rel:.1e}"


@criterion("NEC dominance")
def test_nec_dominance(nec_run):
    sc, run, cmp, elapsed = nec_run
    pi = sc.network_prices()
    assert np.all(pi.max(axis=0) >= 2 * pi.min(axis=0))
    assert len(sc.trains[0].timetable.legs()) == 3
    assert sc.solver.dt == 5.0 and sc.horizon.num_intervals == 12
    assert run.converged
    c = cmp[sc.trains[0].id]
    assert c["rdmm_cost"] <= c["min_work_cost"]
    assert c["reduction_pct"] >= 5.0
    assert elapsed < 300.0
    return (f"rDMM ${c['rdmm_cost']:.2f} vs min-work ${c['min_work_cost']:.2f}, "
            f"reduction {c['reduction_pct']:.1f}%, {elapsed:.0f} s")


@criterion("field-trace accounting")
def test_field_trace_accounting(nec_run, tmp_path):
    sc, run, _, _ = nec_run
    s = run.settlement
    traj, trip, prices = s.trajectories[0], sc.trains[0], s.train_prices

    def acc(t):
        k = np.clip(np.searchsorted(traj.t, t, side="right") - 1, 0, len(traj.t) - 2)
        return traj.a[k]

    ts = np.arange(traj.t[0], traj.t[-1] + 0.5, 1.0)
    sol = solve_ivp(lambda t, y: [y[1], acc(t)], (traj.t[0], traj.t[-1]), [traj.x[0], traj.v[0]],
                    t_eval=ts, max_step=0.5, rtol=1e-10, atol=1e-8)
    x, v = sol.y
    write_trace(trace_from_arrays(ts, x, np.maximum(v, 0.0), window=1), tmp_path / "trace.csv")
    res = evaluate_profile_cost(load_gps_trace(tmp_path / "trace.csv"), trip, prices)
    rel = abs(res.cost - traj.cost) / abs(traj.cost)
    assert rel <= 0.01
    return f"trace ${res.cost:.2f} vs optimiser ${traj.cost:.2f}, rel {rel:.1e}"


@criterion("determinism")
def test_determinism(nec_run, tmp_path, capsys):
    from rdmm.scenario import write_scenario
    f = tmp_path / "s.json"
    write_scenario(market_scenario(1e-4), f)
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "4")):
        assert main(["rdmm", "--scenario", str(f), "--out", str(tmp_path / name), "--jobs", jobs]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    for other in ("b", "c"):
        assert files == sorted(p.name for p in (tmp_path / other).iterdir())
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / other / name).read_bytes()
    # the NEC settlement written twice
    s = nec_run[1].settlement
    a = write_report(s, s.trajectories, tmp_path / "nec-a", log=nec_run[1].log)
    b = write_report(s, s.trajectories, tmp_path / "nec-b", log=nec_run[1].log)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    json.loads((tmp_path / "a" / "summary.json").read_text())
    return f"{len(files)} report files identical across 3 runs"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
