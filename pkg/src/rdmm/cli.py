"""Command line: ``rdmm {dispatch,train,rdmm,nec}``.

Exit codes: 0 success, 1 input error, 2 solver non-convergence or
infeasibility.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import replace
import logging
import os
from pathlib import Path
import sys

import numpy as np

from .coordinator import aggregate_traction, compose_train_prices, min_work_comparison, run_rdmm
from .core import HorizonGrid, InfeasibleError, InvalidArgument
from .dispatch import kkt_report, negotiate, qp_oracle
from .report import _outdir, money, phys, write_dispatch, write_report, write_trajectory
from .scenario import Scenario, build_nec_scenario, load_gps_trace, load_scenario, write_price_series, write_scenario
from .trajectory import (OptimizationFailure, evaluate_profile_cost, min_work_profile, optimize_trip,
                         trajectory_cost)

log = logging.getLogger("rdmm")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


def _range(lo, hi, kind=float):
    def parse(text):
        v = kind(text)
        if not lo <= v <= hi:
            raise argparse.ArgumentTypeError(f"{v} outside [{lo}, {hi}]")
        return v
    return parse


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; 2 is reserved for the solvers
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rdmm", description="Railway dynamic market mechanism toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
    common.add_argument("--out", type=Path, default=Path("rdmm-out"), help="output directory")
    common.add_argument("--dt", type=_range(0.1, 60.0), help="train time step (s)")
    common.add_argument("--intervals", type=_range(1, 288, int), help="number of dispatch intervals M")
    common.add_argument("--interval-len", type=_positive, help="dispatch interval length (s)")
    common.add_argument("--tol-k", type=_positive, help="negotiation exit tolerance")
    common.add_argument("--tol-j", type=_positive, help="forecast exit tolerance")
    common.add_argument("--damping", type=_range(1e-6, 1.0), help="price damping rho in (0, 1]")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--seed", type=int, help="seed for multi-start initialisation")

    d = sub.add_parser("dispatch", parents=[common], help="negotiate every ACC with fixed train forecasts")
    d.add_argument("--oracle", action="store_true", help="also solve the QP directly and print the deviation")

    t = sub.add_parser("train", parents=[common], help="optimise train trajectories at network prices")
    t.add_argument("--min-work", action="store_true", help="minimise work instead of cost")
    t.add_argument("--trace", type=Path, help="evaluate a recorded t_s,x_m,v_mps trace instead")

    r = sub.add_parser("rdmm", parents=[common], help="full market/train iteration")
    r.add_argument("--trace", type=Path, help="recorded trace to include in the comparison")

    n = sub.add_parser("nec", help="write the Northeast Corridor scenario")
    n.add_argument("--out", type=Path, default=Path("nec"), help="output directory")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--dt", type=_range(0.1, 60.0), default=5.0)
    return p


def apply_overrides(sc: Scenario, args) -> Scenario:
    grid = sc.horizon
    if args.intervals is not None or args.interval_len is not None:
        grid = HorizonGrid(args.intervals or grid.num_intervals, args.interval_len or grid.interval_length,
                           grid.start_time)
    solver, steps = sc.solver, sc.steps
    if args.dt is not None:
        solver = replace(solver, dt=args.dt)
    if args.seed is not None:
        solver = replace(solver, seed=args.seed)
    if args.tol_k is not None:
        steps = replace(steps, tol_k_y=args.tol_k, tol_k_lambda=args.tol_k)
    if args.tol_j is not None:
        steps = replace(steps, tol_j_y=args.tol_j, tol_j_lambda=args.tol_j)
    changes = {"horizon": grid, "solver": solver, "steps": steps}
    if args.interval_len is not None:
        changes["epoch"] = grid.start_time
    if args.damping is not None:
        changes["damping"] = args.damping
    if args.seed is not None:
        changes["seed"] = args.seed
    return sc.replace(**changes)


def _pool(jobs):
    return ThreadPoolExecutor(max_workers=jobs) if jobs and jobs > 1 else nullcontext()


def cmd_dispatch(sc: Scenario, args) -> int:
    traction = np.zeros((len(sc.track), sc.horizon.num_intervals))
    if sc.trains:
        prices = compose_train_prices(sc.network_prices(), sc.horizon, sc.track)
        trajs = [optimize_trip(t, prices, sc.solver) for t in sc.trains]
        traction = aggregate_traction(trajs, sc.horizon, sc.track)
    h = sc.horizon.interval_hours
    results, ids = {}, {}
    worst = 0.0
    ok = True
    for acc in sc.track:
        agents = sc.acc_agents(acc.index)
        elec, therm = sc.passive_loads(acc.index)
        loads = (elec + traction[acc.index - 1] / 1000.0, therm)
        res = negotiate(agents, loads, sc.steps, interval_hours=h)
        results[acc.index], ids[acc.index] = res, [a.id for a in agents]
        rep = kkt_report(agents, loads, res)
        if not res.converged:
            ok = False
            print(f"ACC {acc.index}: not converged after {res.iterations} iterations; balance residual "
                  f"{phys(max(np.abs(res.residual_e).max(), np.abs(res.residual_th).max()))} kWh")
        print(f"ACC {acc.index}: lambda_e[K=1] = {phys(res.lambda_e[0])} $/kWh, iterations {res.iterations}, "
              f"stationarity {phys(rep.stationarity)}")
        if args.oracle:
            ref = qp_oracle(agents, loads, h)
            dev = max(np.abs(res.y - ref.y).max() / max(np.abs(ref.y).max(), 1.0),
                      np.abs(res.lambda_e - ref.lambda_e).max() / max(np.abs(ref.lambda_e).max(), 1e-12))
            worst = max(worst, dev)
    write_dispatch(results, ids, sc.horizon, args.out)
    if args.oracle:
        print(f"max relative deviation from QP oracle: {phys(worst)}")
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_train(sc: Scenario, args) -> int:
    prices = compose_train_prices(sc.network_prices(), sc.horizon, sc.track)
    out = _outdir(args.out)
    if not sc.trains:
        raise InvalidArgument("scenario has no trains")
    if args.trace is not None:
        trip = sc.trains[0]
        trace = load_gps_trace(args.trace)
        res = evaluate_profile_cost(trace, trip, prices)
        print(f"{trip.id}: trace cost {money(res.cost)} $, work {phys(res.work)} J, "
              f"energy {phys(res.energy)} J, regen samples clipped {res.clipped}")
        lines = ["t_s,power_w"] + [f"{phys(t)},{phys(p)}" for t, p in zip(res.t, res.power)]
        (out / f"trace_power_{trip.id}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return EXIT_OK
    for trip in sc.trains:
        traj = min_work_profile(trip, sc.solver) if args.min_work else optimize_trip(trip, prices, sc.solver)
        cost = trajectory_cost(traj, prices)
        write_trajectory(traj, out / f"trajectory_{trip.id}.csv", prices)
        print(f"{trip.id}: total trip cost {money(cost)} $, work {phys(traj.work)} J, "
              f"energy {phys(traj.energy)} J")
    return EXIT_OK


def cmd_rdmm(sc: Scenario, args) -> int:
    with _pool(args.jobs) as ex:
        run = run_rdmm(sc, executor=ex)
    s = run.settlement
    cmp = min_work_comparison(sc, s)
    trace_costs = None
    if args.trace is not None and sc.trains:
        trace = load_gps_trace(args.trace)
        trace_costs = {sc.trains[0].id: evaluate_profile_cost(trace, sc.trains[0], s.train_prices).cost}
    write_report(s, s.trajectories, args.out, log=run.log, comparison=cmp, trace_costs=trace_costs)
    for tid, c in sorted(cmp.items()):
        print(f"{tid}: rDMM {money(c['rdmm_cost'])} $, min-work {money(c['min_work_cost'])} $, "
              f"reduction {money(c['reduction_pct'])} %")
        if trace_costs and tid in trace_costs:
            tc = trace_costs[tid]
            print(f"{tid}: trace {money(tc)} $, reduction {money(100 * (tc - c['rdmm_cost']) / tc)} %")
    if not run.converged:
        print(f"rDMM did not converge in {len(run.iterates)} forecast iterations; best iterate written")
        return EXIT_SOLVER
    return EXIT_OK


def cmd_nec(args) -> int:
    out = _outdir(args.out)
    sc = build_nec_scenario(seed=args.seed, dt=args.dt)
    for n, series in sorted(sc.prices.items()):
        write_price_series(series, out / f"prices_acc{n}.csv")
    write_scenario(sc, out / "scenario.json")
    print(f"wrote {out / 'scenario.json'}")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("RDMM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "nec":
            return cmd_nec(args)
        sc = apply_overrides(load_scenario(args.scenario), args)
        return {"dispatch": cmd_dispatch, "train": cmd_train, "rdmm": cmd_rdmm}[args.command](sc, args)
    except (InfeasibleError, OptimizationFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
