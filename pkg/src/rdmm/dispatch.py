"""Per-ACC economic dispatch by iterative price/quantity negotiation.

Agents hold setpoints ``y`` (kWh per interval); the ACC operator holds an
electric and a thermal price (``$/kWh``). Prices are reported with the
market sign convention: a price rises when demand exceeds supply, so at
equilibrium each interior agent's marginal cost equals
``d_e * lambda_e + d_th * lambda_th``.

The negotiation is a primal-dual gradient method on the (optionally
augmented) Lagrangian. With ``StepSizes.augmented=False`` it reduces to the
plain Arrow-Hurwicz iteration; the augmented form has the same fixed points
but converges reliably for nearly linear costs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import itertools
import logging

import numpy as np

from .core import AgentKind, DispatchableAgent, InfeasibleError, InvalidArgument, RdmmError

log = logging.getLogger(__name__)

C_MIN = 1e-6


class DivergenceError(RdmmError):
    pass


@dataclass(frozen=True)
class StepSizes:
    """Step sizes (normalised units) and exit tolerances for the negotiation.

    ``beta_y`` scales each agent's diagonally preconditioned gradient step.
    The dual steps double as augmentation weights when ``augmented`` is set.
    Negotiation tolerances apply to the normalised step ``|x_{k+1}-x_k|``.
    """

    beta_y: float = 1.0
    beta_lambda_e: float = 0.1
    beta_lambda_th: float = 0.1
    beta_mu: float = 0.1
    tol_k_y: float = 1e-10
    tol_k_lambda: float = 1e-10
    tol_j_y: float = 1e-3
    tol_j_lambda: float = 1e-3
    k_max: int = 50_000
    j_max: int = 50
    augmented: bool = True

    def __post_init__(self):
        for name in ("beta_y", "beta_lambda_e", "beta_lambda_th", "beta_mu", "tol_k_y",
                     "tol_k_lambda", "tol_j_y", "tol_j_lambda", "k_max", "j_max"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0")

    def halved(self) -> "StepSizes":
        return replace(self, beta_y=self.beta_y / 2, beta_lambda_e=self.beta_lambda_e / 2,
                       beta_lambda_th=self.beta_lambda_th / 2, beta_mu=self.beta_mu / 2)


@dataclass(frozen=True, eq=False)
class NegotiationState:
    """Iterate of one ACC negotiation, in physical units.

    ``y``, ``mu_plus`` and ``mu_minus`` have shape ``(n_agents, M)``.
    """

    y: np.ndarray
    lambda_e: np.ndarray
    lambda_th: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, agents, lambda_init=None) -> "NegotiationState":
        A, M = len(agents), agents[0].M
        y = np.clip(np.zeros((A, M)), _stack(agents, "y_min"), _stack(agents, "y_max"))
        le, lt = (np.zeros(M), np.zeros(M)) if lambda_init is None else lambda_init
        return cls(y, np.array(le, float) * np.ones(M), np.array(lt, float) * np.ones(M),
                   np.zeros((A, M)), np.zeros((A, M)))


@dataclass(frozen=True, eq=False)
class DispatchResult:
    """Equilibrium (or last iterate) of a dispatch problem for one ACC."""

    agent_ids: tuple[str, ...]
    y: np.ndarray
    lambda_e: np.ndarray
    lambda_th: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    residual_e: np.ndarray
    residual_th: np.ndarray
    iterations: int
    converged: bool
    interval_hours: float = 1.0

    def setpoint(self, agent_id: str) -> np.ndarray:
        return self.y[self.agent_ids.index(agent_id)]

    @property
    def state(self) -> NegotiationState:
        return NegotiationState(self.y, self.lambda_e, self.lambda_th,
                                self.mu_plus, self.mu_minus, self.iterations)


def _stack(agents, name) -> np.ndarray:
    return np.array([getattr(a, name) for a in agents], dtype=float)


def _check_lengths(agents, *profiles):
    if not agents:
        raise InvalidArgument("need at least one dispatchable agent")
    M = agents[0].M
    for a in agents:
        if a.M != M:
            raise InvalidArgument(f"agent {a.id} has {a.M} intervals, expected {M}")
    for p in profiles:
        if np.shape(p) != (M,):
            raise InvalidArgument(f"profile of shape {np.shape(p)} does not match M={M}")
    return M


def agent_outputs(agent: DispatchableAgent, y) -> tuple[np.ndarray, np.ndarray]:
    """Electric and thermal output of ``agent`` at setpoint ``y``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (agent.M,):
        raise InvalidArgument(f"setpoint length {y.shape} != {agent.M}")
    return agent.d_e * y, agent.d_th * y


def agent_cost(agent: DispatchableAgent, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (agent.M,):
        raise InvalidArgument(f"setpoint length {y.shape} != {agent.M}")
    return float(np.sum(agent.a + agent.b * y + 0.5 * agent.c * y * y))


def update_network_agent_cost(agent: DispatchableAgent, price, c_min: float = C_MIN) -> DispatchableAgent:
    """Set a network connection's cost to the external marginal price ``price`` ($/kWh)."""
    if agent.kind is not AgentKind.NETWORK:
        raise InvalidArgument(f"agent {agent.id} is {agent.kind.value}, not a network connection")
    price = np.broadcast_to(np.asarray(price, dtype=float), (agent.M,))
    return agent.replace(a=np.zeros(agent.M), b=price.copy(), c=np.full(agent.M, float(c_min)))


class _Problem:
    """Normalised arrays of one ACC dispatch problem.

    Energies are divided by ``Y`` and prices by ``P`` so the step sizes are
    dimensionless.
    """

    def __init__(self, agents, loads, interval_hours):
        elec, therm = (np.asarray(p, dtype=float) for p in loads)
        M = _check_lengths(agents, elec, therm)
        if not interval_hours > 0:
            raise InvalidArgument("interval_hours must be > 0")
        self.M = M
        self.h = float(interval_hours)
        self.ids = tuple(a.id for a in agents)
        de, dth = _stack(agents, "d_e"), _stack(agents, "d_th")
        b, c = _stack(agents, "b"), _stack(agents, "c")
        lo, hi = _stack(agents, "y_min"), _stack(agents, "y_max")
        demand_e, demand_th = -elec * self.h, -therm * self.h
        finite = [np.abs(demand_e), np.abs(demand_th), np.abs(lo[np.isfinite(lo)]),
                  np.abs(hi[np.isfinite(hi)])]
        self.Y = Y = max([1.0] + [float(f.max()) for f in finite if f.size])
        self.P = P = max(float(np.abs(b).max()), float((c * Y).max()), 1e-12)
        self.de, self.dth = de, dth
        self.b, self.c = b / P, c * Y / P
        self.lo, self.hi = lo / Y, hi / Y
        self.Le, self.Lth = demand_e / Y, demand_th / Y
        self.raw = (de, dth, b, c, lo, hi, demand_e, demand_th)

    def imbalance(self, y) -> float:
        """Largest normalised balance residual of ``y`` over both commodities."""
        r_e = np.abs((self.de * y).sum(axis=0) - self.Le).max()
        r_th = np.abs((self.dth * y).sum(axis=0) - self.Lth).max()
        return float(max(r_e, r_th))

    def normalise(self, s: NegotiationState):
        Y, P = self.Y, self.P
        return s.y / Y, s.lambda_e / P, s.lambda_th / P, s.mu_plus / P, s.mu_minus / P

    def physical(self, y, le, lt, mp, mm, k) -> NegotiationState:
        Y, P = self.Y, self.P
        return NegotiationState(y * Y, le * P, lt * P, mp * P, mm * P, k)

    def step_sizes(self, steps: StepSizes):
        rho_e = steps.beta_lambda_e if steps.augmented else 0.0
        rho_th = steps.beta_lambda_th if steps.augmented else 0.0
        rho_mu = steps.beta_mu if steps.augmented else 0.0
        if not steps.augmented:
            return np.full_like(self.b, steps.beta_y), 0.0, 0.0, 0.0
        se, sth = np.abs(self.de).sum(0), np.abs(self.dth).sum(0)
        curvature = self.c + rho_e * np.abs(self.de) * se + rho_th * np.abs(self.dth) * sth + rho_mu
        return steps.beta_y / curvature, rho_e, rho_th, rho_mu

    def residuals(self, y):
        return (self.de * y).sum(0) - self.Le, (self.dth * y).sum(0) - self.Lth

    def iterate(self, y, le, lt, mp, mm, steps: StepSizes, pre=None):
        by, rho_e, rho_th, rho_mu = pre if pre is not None else self.step_sizes(steps)
        re, rt = self.residuals(y)
        if rho_mu:
            mpt = np.maximum(0.0, mp + rho_mu * (y - self.hi))
            mmt = np.maximum(0.0, mm + rho_mu * (self.lo - y))
        else:
            mpt, mmt = mp, mm
        grad = (self.b + self.c * y - self.de * (le - rho_e * re) - self.dth * (lt - rho_th * rt)
                + mpt - mmt)
        y_new = y - by * grad
        re, rt = self.residuals(y_new)
        le_new = le - steps.beta_lambda_e * re
        lt_new = lt - steps.beta_lambda_th * rt
        mp_new = np.maximum(0.0, mp + steps.beta_mu * (y_new - self.hi))
        mm_new = np.maximum(0.0, mm + steps.beta_mu * (self.lo - y_new))
        return y_new, le_new, lt_new, mp_new, mm_new


def negotiation_step(state: NegotiationState, agents, loads, steps: StepSizes = StepSizes(),
                     interval_hours: float = 1.0) -> NegotiationState:
    """One offer/price/penalty update of the negotiation.

    ``loads`` is ``(electric, thermal)`` net fixed power in kW, with loads
    negative: electric is renewable + traction + electric load.
    """
    prob = _Problem(agents, loads, interval_hours)
    out = prob.iterate(*prob.normalise(state), steps)
    if not all(np.all(np.isfinite(v)) for v in out):
        raise DivergenceError(f"non-finite iterate at k={state.k + 1}")
    return prob.physical(*out, state.k + 1)


def _result(prob: _Problem, state: NegotiationState, converged: bool) -> DispatchResult:
    de, dth, *_ , demand_e, demand_th = prob.raw
    res_e = (de * state.y).sum(0) - demand_e
    res_th = (dth * state.y).sum(0) - demand_th
    return DispatchResult(prob.ids, state.y, state.lambda_e, state.lambda_th, state.mu_plus,
                          state.mu_minus, res_e, res_th, state.k, converged, prob.h)


def negotiate(agents, loads, steps: StepSizes = StepSizes(), lambda_init=None, *,
              warm_start: NegotiationState | None = None, interval_hours: float = 1.0,
              max_halvings: int = 8) -> DispatchResult:
    """Iterate :func:`negotiation_step` to an equilibrium.

    Stops when the normalised change of ``y``, the prices and the penalties
    and the normalised balance residual fall below the negotiation
    tolerances, or after ``steps.k_max``
    iterations (returned with ``converged=False``). On divergence all step
    sizes are halved and the negotiation restarts.
    """
    prob = _Problem(agents, loads, interval_hours)
    start = warm_start if warm_start is not None else NegotiationState.initial(agents, lambda_init)
    for _ in range(max_halvings + 1):
        try:
            state, converged = _run(prob, start, steps)
        except DivergenceError as exc:
            log.warning("negotiation diverged (%s); halving step sizes", exc)
            steps = steps.halved()
            continue
        if not converged:
            log.warning("negotiation hit k_max=%d without meeting tolerances", steps.k_max)
        return _result(prob, state, converged)
    raise DivergenceError("negotiation diverged after repeated step-size halving")


def _run(prob: _Problem, start: NegotiationState, steps: StepSizes):
    y, le, lt, mp, mm = prob.normalise(start)
    pre = prob.step_sizes(steps)
    ref = max(1.0, float(np.abs(y).max()), float(np.abs(le).max()), float(np.abs(lt).max()))
    k = start.k
    converged = False
    for it in range(1, int(steps.k_max) + 1):
        yn, len_, ltn, mpn, mmn = prob.iterate(y, le, lt, mp, mm, steps, pre)
        dy = np.abs(yn - y).max()
        dl = max(np.abs(len_ - le).max(), np.abs(ltn - lt).max(),
                 np.abs(mpn - mp).max(), np.abs(mmn - mm).max())
        y, le, lt, mp, mm = yn, len_, ltn, mpn, mmn
        k += 1
        if not (np.isfinite(dy) and np.isfinite(dl)):
            raise DivergenceError(f"non-finite iterate at k={k}")
        if dy <= steps.tol_k_y and dl <= steps.tol_k_lambda and prob.imbalance(y) <= steps.tol_k_y:
            converged = True
            break
        if it % 50 == 0:
            size = max(float(np.abs(y).max()), float(np.abs(le).max()), float(np.abs(lt).max()))
            if size > 1e6 * ref:
                raise DivergenceError(f"iterate norm grew to {size:.3g} at k={k}")
    return prob.physical(y, le, lt, mp, mm, k), converged


def _active_sets(A):
    """Candidate active sets (0 free, 1 at lower, 2 at upper), fewest bounds first."""
    combos = sorted(itertools.product((0, 1, 2), repeat=A), key=lambda c: sum(map(bool, c)))
    return [np.array(c) for c in combos]


def qp_oracle(agents, loads, interval_hours: float = 1.0) -> DispatchResult:
    """Solve the dispatch QP directly by active-set enumeration, interval by interval.

    Every candidate assignment of the agents to {free, at lower, at upper}
    is solved as an equality-constrained KKT system; the first one that is
    primal and dual feasible is the unique optimum when all ``c > 0``.
    """
    prob = _Problem(agents, loads, interval_hours)
    de, dth, b, c, lo, hi, Le, Lth = prob.raw
    A, M = b.shape
    Y, P = prob.Y, prob.P
    D = np.stack([de, dth], axis=0)          # (2, A, M)
    L = np.stack([Le, Lth], axis=0)          # (2, M)
    y = np.full((A, M), np.nan)
    lam = np.zeros((2, M))
    solved = np.zeros(M, dtype=bool)
    tol_bal = 1e-9 * (Y + np.abs(L).max(axis=0))
    tol_bnd = 1e-9 * Y
    tol_dual = 1e-9 * P
    for combo in _active_sets(A):
        todo = ~solved
        if not todo.any():
            break
        at_lo, at_hi, free = combo == 1, combo == 2, combo == 0
        fixed = np.where(at_lo[:, None], lo, np.where(at_hi[:, None], hi, 0.0))[:, todo]
        if not np.all(np.isfinite(fixed[at_lo | at_hi])):
            continue
        nf = int(free.sum())
        Ks = np.flatnonzero(todo)
        n = nf + 2
        kkt = np.zeros((len(Ks), n, n))
        rhs = np.zeros((len(Ks), n))
        Df = D[:, free][:, :, Ks]            # (2, nf, nK)
        idx = np.arange(nf)
        kkt[:, idx, idx] = c[free][:, Ks].T
        kkt[:, :nf, nf:] = -np.transpose(Df, (2, 1, 0))
        kkt[:, nf:, :nf] = np.transpose(Df, (2, 0, 1))
        rhs[:, :nf] = -b[free][:, Ks].T
        rhs[:, nf:] = (L[:, Ks] - np.einsum("ram,am->rm", D[:, ~free][:, :, Ks], fixed[~free])).T
        sol = np.einsum("kij,kj->ki", np.linalg.pinv(kkt), rhs)
        yk = fixed.copy()
        yk[free] = sol[:, :nf].T
        lk = sol[:, nf:].T                   # (2, nK)
        bal = np.abs(np.einsum("ram,am->rm", D[:, :, Ks], yk) - L[:, Ks]).max(axis=0)
        ok = bal <= tol_bal[Ks]
        ok &= np.all(yk >= lo[:, Ks] - tol_bnd, axis=0) & np.all(yk <= hi[:, Ks] + tol_bnd, axis=0)
        g = b[:, Ks] + c[:, Ks] * yk - np.einsum("ram,rm->am", D[:, :, Ks], lk)
        ok &= np.all(g[at_lo] >= -tol_dual, axis=0) & np.all(g[at_hi] <= tol_dual, axis=0)
        if ok.any():
            y[:, Ks[ok]] = yk[:, ok]
            lam[:, Ks[ok]] = lk[:, ok]
            solved[Ks[ok]] = True
    if not solved.all():
        bad = [int(K) + 1 for K in np.flatnonzero(~solved)]
        raise InfeasibleError(f"dispatch infeasible in intervals {bad}")
    g = b + c * y - de * lam[0] - dth * lam[1]
    mu_plus = np.where(np.isclose(y, hi, rtol=0, atol=1e-9 * Y), np.maximum(-g, 0.0), 0.0)
    mu_minus = np.where(np.isclose(y, lo, rtol=0, atol=1e-9 * Y), np.maximum(g, 0.0), 0.0)
    state = NegotiationState(y, lam[0], lam[1], mu_plus, mu_minus, 0)
    return _result(prob, state, True)


def forecast_update(prev: DispatchResult, new_loads):
    """Loads and warm start for the next forecast instance."""
    return new_loads, prev.state


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    balance: float
    complementarity: float
    bound_violation: float
    min_multiplier: float

    def passes(self, stationarity=1e-5, balance=1e-6, complementarity=1e-6) -> bool:
        return (self.stationarity <= stationarity and self.balance <= balance
                and self.complementarity <= complementarity and self.min_multiplier >= 0
                and self.bound_violation <= balance)


def kkt_report(agents, loads, result: DispatchResult) -> KKTReport:
    """Scaled KKT residuals of a dispatch result.

    Stationarity is divided by ``1 + max|lambda|``, balance by the total
    load magnitude and complementarity by (price scale x energy scale).
    """
    prob = _Problem(agents, loads, result.interval_hours)
    de, dth, b, c, lo, hi, Le, Lth = prob.raw
    y = result.y
    g = b + c * y - de * result.lambda_e - dth * result.lambda_th + result.mu_plus - result.mu_minus
    lam_scale = 1.0 + max(float(np.abs(result.lambda_e).max()), float(np.abs(result.lambda_th).max()))
    load_scale = max(float(np.abs(Le).sum() + np.abs(Lth).sum()) / prob.M, 1.0)
    bal = max(float(np.abs(result.residual_e).max()), float(np.abs(result.residual_th).max()))
    with np.errstate(invalid="ignore"):
        comp_p = np.where(np.isfinite(hi), result.mu_plus * (hi - y), 0.0)
        comp_m = np.where(np.isfinite(lo), result.mu_minus * (y - lo), 0.0)
    comp = max(float(np.abs(comp_p).max()), float(np.abs(comp_m).max())) / (prob.P * prob.Y)
    viol = max(float(np.maximum(y - hi, 0).max()), float(np.maximum(lo - y, 0).max())) / prob.Y
    return KKTReport(float(np.abs(g).max()) / lam_scale, bal / load_scale, comp, viol,
                     float(min(result.mu_plus.min(), result.mu_minus.min())))
