"""Deterministic CSV/JSON writers for runs and trajectories."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import J_PER_MWH, InvalidArgument
from .trajectory import PriceFunction, Trajectory


def phys(v) -> str:
    """Physical quantity with 6 significant digits."""
    v = float(v)
    if v == 0:
        return "0"
    return f"{v:.6g}"


def money(v) -> str:
    return f"{float(v):.2f}"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise InvalidArgument(f"cannot write {path}: {exc}") from exc


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgument(f"cannot create output directory {out}: {exc}") from exc
    return out


def trajectory_table(traj: Trajectory, prices: PriceFunction | None = None) -> str:
    """Columns ``t_s, price_usd_per_mwh, x_m, v_mps, power_w``; price and power hold over each step."""
    lines = ["t_s,price_usd_per_mwh,x_m,v_mps,power_w"]
    lam = prices.at(traj.t, traj.x) * J_PER_MWH if prices is not None else np.zeros(len(traj.t))
    for t, p, x, v, pw in zip(traj.t, np.atleast_1d(lam), traj.x, traj.v, traj.power):
        lines.append(",".join((phys(t), phys(p), phys(x), phys(v), phys(pw))))
    return "\n".join(lines) + "\n"


def write_trajectory(traj: Trajectory, path, prices: PriceFunction | None = None) -> None:
    _write(Path(path), trajectory_table(traj, prices))


def write_dispatch(results: dict, agent_ids: dict, grid, path) -> list[Path]:
    """One CSV per ACC with prices, balance residuals and agent setpoints."""
    out = _outdir(path)
    files = []
    for n in sorted(results):
        res = results[n]
        ids = list(agent_ids[n])
        head = ["interval", "t_start_s", "lambda_e_usd_per_kwh", "lambda_th_usd_per_kwh",
                "residual_e_kwh", "residual_th_kwh"] + [f"y_{a}_kwh" for a in ids]
        lines = [",".join(head)]
        for K in range(grid.num_intervals):
            row = [str(K + 1), phys(grid.edges[K]), phys(res.lambda_e[K]), phys(res.lambda_th[K]),
                   phys(res.residual_e[K]), phys(res.residual_th[K])] + [phys(res.y[i, K]) for i in range(len(ids))]
            lines.append(",".join(row))
        f = out / f"dispatch_acc{n}.csv"
        _write(f, "\n".join(lines) + "\n")
        files.append(f)
    return files


def write_report(settlement, trajectories, path, *, log=None, comparison=None, trace_costs=None) -> list[Path]:
    """Write settlement, trajectories, iteration log and a summary into directory ``path``.

    Output is byte-identical for identical inputs. Costs carry 2 decimals,
    physical quantities 6 significant digits.
    """
    out = _outdir(path)
    files = []
    grid = settlement.grid if settlement is not None else None

    # settlement per ACC and interval
    lines = ["acc,interval,t_start_s,lambda_e_usd_per_kwh,lambda_th_usd_per_kwh,traction_kw,"
             "passive_payment_usd,train_payment_usd,imbalance_usd"]
    if settlement is not None:
        imb = settlement.payment_imbalance()
        for n in range(settlement.lambda_e.shape[0]):
            for K in range(grid.num_intervals):
                lines.append(",".join((str(n + 1), str(K + 1), phys(grid.edges[K]),
                                       phys(settlement.lambda_e[n, K]), phys(settlement.lambda_th[n, K]),
                                       phys(settlement.traction[n, K] / 1000.0),
                                       money(settlement.passive_payment[n, K]),
                                       money(settlement.train_payment[n, K]), phys(imb[n, K]))))
    files.append(out / "settlement.csv")
    _write(files[-1], "\n".join(lines) + "\n")

    lines = ["agent,interval,y_kwh,revenue_usd"]
    if settlement is not None:
        for aid in sorted(settlement.y):
            for K in range(grid.num_intervals):
                lines.append(",".join((aid, str(K + 1), phys(settlement.y[aid][K]),
                                       money(settlement.agent_revenue[aid][K]))))
    files.append(out / "agents.csv")
    _write(files[-1], "\n".join(lines) + "\n")

    prices = settlement.train_prices if settlement is not None else None
    for traj in sorted(trajectories, key=lambda t: t.train_id):
        files.append(out / f"trajectory_{traj.train_id}.csv")
        _write(files[-1], trajectory_table(traj, prices))

    lines = ["j,delta_y,delta_lambda,damping,train_cost_usd,negotiation_iterations"]
    for rec in log or []:
        lines.append(",".join((str(rec["j"]), phys(rec["delta_y"]), phys(rec["delta_lambda"]),
                               phys(rec["damping"]), money(rec["train_cost"]), str(rec["negotiation_iterations"]))))
    files.append(out / "iterations.csv")
    _write(files[-1], "\n".join(lines) + "\n")

    summary = {"converged": None if settlement is None else bool(settlement.converged),
               "forecast_iterations": None if settlement is None else int(settlement.iterations),
               "trains": {}}
    if settlement is not None:
        summary["binding_lambda_e_usd_per_kwh"] = [phys(v) for v in settlement.lambda_e[:, 0]]
        summary["max_payment_imbalance_usd"] = phys(np.abs(settlement.payment_imbalance()).max())
        for tid in sorted(settlement.train_costs):
            row = {"total_trip_cost_usd": money(settlement.train_costs[tid])}
            traj = next((t for t in trajectories if t.train_id == tid), None)
            if traj is not None:
                row["work_j"] = phys(traj.work)
                row["energy_j"] = phys(traj.energy)
            if comparison and tid in comparison:
                c = comparison[tid]
                row["min_work_cost_usd"] = money(c["min_work_cost"])
                row["reduction_vs_min_work_pct"] = money(c["reduction_pct"])
            if trace_costs and tid in trace_costs:
                tc = trace_costs[tid]
                row["trace_cost_usd"] = money(tc)
                row["reduction_vs_trace_pct"] = money(100.0 * (tc - settlement.train_costs[tid]) / tc) if tc else "0.00"
            summary["trains"][tid] = row
    files.append(out / "summary.json")
    _write(files[-1], json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return files
