"""Reference computations used by the tests; none of them call the code under test."""
from __future__ import annotations

import math

import cvxpy as cp
import numpy as np

from rdmm.core import AgentKind, DispatchableAgent


def cvxpy_dispatch(agents, loads, interval_hours=1.0):
    """Solve each ACC dispatch QP with a generic conic solver.

    Returns ``(y, lambda_e, lambda_th)`` with prices in the market sign
    (positive when demand is positive).
    """
    elec, therm = (np.asarray(v, float) for v in loads)
    M = agents[0].M
    A = len(agents)
    de = np.array([a.d_e for a in agents])
    dth = np.array([a.d_th for a in agents])
    b = np.array([a.b for a in agents])
    c = np.array([a.c for a in agents])
    lo = np.array([a.y_min for a in agents])
    hi = np.array([a.y_max for a in agents])
    y_all = np.zeros((A, M))
    lam = np.zeros((2, M))
    for K in range(M):
        # scale to keep the solver well conditioned
        Y = max(1.0, np.abs(elec[K]).max() * interval_hours, np.abs(therm[K]).max() * interval_hours,
                np.abs(hi[:, K][np.isfinite(hi[:, K])]).max(initial=1.0))
        y = cp.Variable(A)
        obj = (b[:, K] * Y) @ y + 0.5 * cp.sum(cp.multiply(c[:, K] * Y * Y, cp.square(y)))
        cons = [de[:, K] @ y == -elec[K] * interval_hours / Y, dth[:, K] @ y == -therm[K] * interval_hours / Y]
        fin_lo = np.isfinite(lo[:, K])
        fin_hi = np.isfinite(hi[:, K])
        if fin_lo.any():
            cons.append(y[fin_lo] >= lo[fin_lo, K] / Y)
        if fin_hi.any():
            cons.append(y[fin_hi] <= hi[fin_hi, K] / Y)
        prob = cp.Problem(cp.Minimize(obj), cons)
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        assert prob.status == "optimal", prob.status
        y_all[:, K] = y.value * Y
        lam[0, K] = -cons[0].dual_value / Y if np.any(de[:, K]) else 0.0
        lam[1, K] = -cons[1].dual_value / Y if np.any(dth[:, K]) else 0.0
    return y_all, lam[0], lam[1]


def random_dispatch_instance(rng: np.random.Generator, max_agents=5, max_M=12, h=1.0):
    """Feasible convex instance: loads are generated from a point inside the bounds."""
    A = int(rng.integers(1, max_agents + 1))
    M = int(rng.integers(1, max_M + 1))
    kinds = rng.integers(0, 4, A)
    kinds[0] = 3
    agents = []
    y0 = np.zeros((A, M))
    for i, kd in enumerate(kinds):
        cap = rng.uniform(500, 5000, M)
        b = rng.uniform(0.01, 0.1, M)
        c = 10 ** rng.uniform(-6, -3, M)
        if kd == 0:
            kind, d_e, d_th, lo = AgentKind.HEATING, 0.0, 1.0, np.zeros(M)
        elif kd == 1:
            kind, d_e, d_th, lo = AgentKind.ELECTRIC_GEN, 1.0, 0.0, np.zeros(M)
        elif kd == 2:
            kind, d_e, d_th, lo = AgentKind.COGENERATION, 1.0, float(rng.uniform(0.5, 2.5)), np.zeros(M)
        else:
            kind, d_e, d_th, lo = AgentKind.NETWORK, 1.0, 0.0, -cap
        agents.append(DispatchableAgent(f"a{i}", kind, np.full(M, d_e), np.full(M, d_th), np.zeros(M), b, c,
                                        lo, cap))
        y0[i] = rng.uniform(lo, cap)
    de = np.array([a.d_e for a in agents])
    dth = np.array([a.d_th for a in agents])
    elec = -(de * y0).sum(0) / h
    therm = -(dth * y0).sum(0) / h
    return agents, (elec, therm)


def fine_cost(traj, grid_start, interval, prices_by_acc, edges, n_sub=400):
    """Cost by brute-force midpoint quadrature of ``P(t) * price`` on every step.

    ``prices_by_acc[n, K]`` is in $/J; positions inside a step follow the
    constant-acceleration motion between the nodes.
    """
    total = 0.0
    M = prices_by_acc.shape[1]
    for k in range(len(traj.t) - 1):
        t0, t1 = traj.t[k], traj.t[k + 1]
        p = traj.power[k]
        if p == 0.0:
            continue
        h = (t1 - t0) / n_sub
        tau = (np.arange(n_sub) + 0.5) * h
        acc = (traj.v[k + 1] - traj.v[k]) / (t1 - t0)
        x = traj.x[k] + traj.v[k] * tau + 0.5 * acc * tau ** 2
        n = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
        K = np.clip(np.floor((t0 + tau - grid_start) / interval).astype(int), 0, M - 1)
        total += float(np.sum(p * prices_by_acc[n, K] * h))
    return total


def davis(A, B, C, v):
    return A + B * v + C * v * v


def trapezoid_min_time(length, v_top, a_acc, a_dec):
    """Shortest time to cover ``length`` from rest to rest with constant limits."""
    d_full = v_top ** 2 / (2 * a_acc) + v_top ** 2 / (2 * a_dec)
    if length >= d_full:
        return length / v_top + v_top / (2 * a_acc) + v_top / (2 * a_dec)
    vp = math.sqrt(2 * length / (1 / a_acc + 1 / a_dec))
    return vp / a_acc + vp / a_dec
