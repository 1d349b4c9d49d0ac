from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import market_scenario
from rdmm.coordinator import (HorizonTruncationWarning, aggregate_traction, compose_train_prices, rolling_advance,
                              run_rdmm)
from rdmm.core import AccDescriptor, HorizonGrid, InvalidArgument
from rdmm.dispatch import StepSizes, negotiate, qp_oracle
from rdmm.scenario import PriceSeries
from rdmm.trajectory import PriceFunction, Trajectory, optimize_trip

TRACK = (AccDescriptor(1, 0.0, 10_000.0), AccDescriptor(2, 10_000.0, 30_000.0))
GRID = HorizonGrid(3, 300.0, 0.0)


def parked(x, t, power, tid="p"):
    """A stationary 'trajectory' with prescribed step powers (W)."""
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    return Trajectory(tid, t, np.full_like(t, x), z, z.copy(), z.copy(), np.append(power, 0.0))


# --- aggregation -------------------------------------------------------------------------------


def test_constant_draw_for_a_full_interval():
    out = aggregate_traction([parked(20_000, [300, 600], [1e6])], GRID, TRACK)
    expected = np.zeros((2, 3))
    expected[1, 1] = -1e6
    np.testing.assert_array_equal(out, expected)


def test_half_interval_regeneration():
    out = aggregate_traction([parked(5_000, [0, 150, 300], [-6e6, 0.0])], GRID, TRACK)
    assert out[0, 0] == pytest.approx(3e6, rel=1e-12)
    assert np.count_nonzero(out) == 1


def test_no_trains_and_outside_horizon():
    np.testing.assert_array_equal(aggregate_traction([], GRID, TRACK), np.zeros((2, 3)))
    late = parked(5_000, [900, 1200], [1e6])
    np.testing.assert_array_equal(aggregate_traction([late], GRID, TRACK), np.zeros((2, 3)))


def test_trajectory_off_track_is_rejected():
    with pytest.raises(InvalidArgument):
        aggregate_traction([parked(31_000, [0, 10], [1.0])], GRID, TRACK)


def test_aggregation_conserves_energy_and_is_idempotent():
    sc = market_scenario()
    prices = compose_train_prices(sc.network_prices(), sc.horizon, sc.track)
    traj = optimize_trip(sc.trains[0], prices, sc.solver)
    a = aggregate_traction([traj], sc.horizon, sc.track)
    b = aggregate_traction([traj], sc.horizon, sc.track)
    assert a.tobytes() == b.tobytes()
    inside = traj.t[:-1] < sc.horizon.end_time
    energy = np.sum(traj.power[:-1][inside] * np.diff(traj.t)[inside])
    assert -a.sum() * sc.horizon.interval_length == pytest.approx(energy, rel=1e-9)
    # both ACCs see the train
    assert np.all(np.abs(a).sum(axis=1) > 0)


# --- prices ------------------------------------------------------------------------------------


def test_flat_prices_single_acc():
    track = (AccDescriptor(1, 0.0, 1e4),)
    p = compose_train_prices(np.full((1, 3), 0.072), GRID, track)
    vals = p.at(np.linspace(-100, 2_000, 50), np.linspace(0, 1e4, 50))
    np.testing.assert_allclose(vals, 0.072 / 3.6e6, rtol=1e-15)


def test_prices_jump_at_the_acc_boundary_and_hold_after_horizon():
    lam = np.array([[0.03, 0.04, 0.05], [0.09, 0.10, 0.11]])
    p = compose_train_prices(lam, GRID, TRACK)
    assert p.at(350.0, 9_999.0) == pytest.approx(0.04 / 3.6e6)
    assert p.at(350.0, 10_000.0) == pytest.approx(0.10 / 3.6e6)
    assert p.at(5_000.0, 20_000.0) == pytest.approx(0.11 / 3.6e6)


def test_price_composition_rejects_foreign_trajectory():
    with pytest.raises(InvalidArgument):
        compose_train_prices(np.zeros((2, 3)), GRID, TRACK, parked(40_000, [0, 1], [0.0]))


# --- the loop ----------------------------------------------------------------------------------


def test_no_trains_is_pure_dispatch_in_one_iteration():
    sc = market_scenario(1e-4, with_train=False)
    run = run_rdmm(sc)
    assert run.converged and len(run.iterates) == 1
    s = run.settlement
    for n in (1, 2):
        agents = sc.acc_agents(n)
        loads = sc.passive_loads(n)
        ref = qp_oracle(agents, loads, sc.horizon.interval_hours)
        np.testing.assert_allclose(s.lambda_e[n - 1], ref.lambda_e, rtol=1e-6)
        direct = negotiate(agents, loads, sc.steps, interval_hours=sc.horizon.interval_hours)
        np.testing.assert_array_equal(s.lambda_e[n - 1], direct.lambda_e)
    np.testing.assert_array_equal(s.traction, 0.0)


def test_linear_network_agent_fixes_the_price():
    sc = market_scenario(network=True, price=50.0)
    run = run_rdmm(sc)
    assert run.converged
    np.testing.assert_allclose(run.settlement.lambda_e, 0.05, rtol=0, atol=1e-9)
    alone = optimize_trip(sc.trains[0], PriceFunction.uniform(0.05 / 3.6e6, sc.track), sc.solver)
    assert run.settlement.train_costs["t1"] == pytest.approx(alone.cost, rel=1e-6)


def test_payments_balance():
    run = run_rdmm(market_scenario(1e-4))
    s = run.settlement
    assert np.abs(s.payment_imbalance()).max() <= 1e-6
    # the train's payment matches its trajectory cost inside the horizon
    assert s.train_payment.sum() == pytest.approx(s.train_costs["t1"], rel=1e-6)


def test_oscillation_engages_damping_and_converges():
    run = run_rdmm(market_scenario(1e-4))
    flagged = [r["j"] for r in run.log if r.get("oscillation")]
    assert flagged, "expected the undamped loop to alternate"
    j0 = flagged[0]
    assert all(r["damping"] == 0.5 for r in run.log if r["j"] > j0)
    assert run.converged
    # oscillation grows before damping kicks in
    dl = [r["delta_lambda"] for r in run.log]
    assert dl[j0 - 1] > dl[1]


def test_gentle_coupling_needs_no_damping():
    run = run_rdmm(market_scenario(1e-5))
    assert run.converged
    assert all(r["damping"] == 1.0 for r in run.log)
    dl = [r["delta_lambda"] for r in run.log[1:]]
    assert all(b < a for a, b in zip(dl, dl[1:]))


def test_cost_increase_flags_match_log():
    run = run_rdmm(market_scenario(1e-4))
    costs = [r["train_cost"] for r in run.log]
    for i, r in enumerate(run.log):
        rose = i >= 2 and costs[i] > costs[i - 1] * (1 + 1e-9)
        assert bool(r.get("cost_increase")) == rose


def test_non_convergence_returns_best_iterate():
    sc = market_scenario(1e-4, steps=StepSizes(j_max=3))
    run = run_rdmm(sc)
    assert not run.converged and not run.settlement.converged
    best = min(run.iterates[1:], key=lambda r: max(r.delta_y, r.delta_lambda))
    np.testing.assert_array_equal(run.settlement.lambda_e, best.lambda_e)


def test_determinism_and_parallel_equivalence():
    sc = market_scenario(1e-5)
    a = run_rdmm(sc).settlement
    b = run_rdmm(sc).settlement
    with ThreadPoolExecutor(4) as ex:
        c = run_rdmm(sc, executor=ex).settlement
    for other in (b, c):
        assert a.lambda_e.tobytes() == other.lambda_e.tobytes()
        assert a.traction.tobytes() == other.traction.tobytes()
        assert a.train_costs == other.train_costs


# --- rolling horizon ---------------------------------------------------------------------------


def test_start_moves_by_whole_intervals():
    sc = market_scenario(with_train=False, length=10)
    for _ in range(5):
        sc = rolling_advance(sc)
    assert sc.horizon.start_time == 5 * 300.0
    assert sc.horizon.num_intervals == 4


def test_stationary_inputs_give_identical_settlements():
    sc = market_scenario(1e-4, with_train=False, length=8)
    first = run_rdmm(sc).settlement
    for _ in range(3):
        sc = rolling_advance(sc)
        s = run_rdmm(sc).settlement
        assert s.lambda_e.tobytes() == first.lambda_e.tobytes()
        assert s.y["G1"].tobytes() == first.y["G1"].tobytes()


def test_price_spike_only_binds_when_it_reaches_the_first_interval():
    t = 300.0 * np.arange(12)
    vals = np.full(12, 40.0)
    vals[6] = 400.0
    series = {n: PriceSeries(n, t, vals) for n in (1, 2)}
    sc = market_scenario(network=True, with_train=False, length=12, price_series=series)
    binding = []
    for _ in range(7):
        binding.append(run_rdmm(sc).settlement.binding()["lambda_e"][0])
        sc = rolling_advance(sc)
    np.testing.assert_allclose(binding[:6], 0.04, atol=1e-9)
    assert binding[6] == pytest.approx(0.4, abs=1e-9)


def test_exhausted_series_warn():
    sc = market_scenario(with_train=False)
    with pytest.warns(HorizonTruncationWarning):
        nxt = rolling_advance(sc)
    assert nxt.horizon.start_time == 300.0
    run_rdmm(nxt)


# --- NEC ---------------------------------------------------------------------------------------


def test_nec_run_balances_and_converges(nec_run):
    sc, run, cmp, _ = nec_run
    s = run.settlement
    assert run.converged
    assert np.abs(s.payment_imbalance()).max() <= 1e-6
    traj = s.trajectories[0]
    assert set(traj.crossing_times(sc.track)) == {1, 2, 3, 4}
    # the train faces the stepped price field: at least three distinct ACC prices along the trip
    lam = s.train_prices.at(traj.t, traj.x)
    assert len(np.unique(np.round(lam * 3.6e9, 6))) >= 3
