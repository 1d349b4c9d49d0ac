"""Energy-cost-optimal train trajectories under time- and position-varying prices.

Each inter-station run ("leg") is transcribed on a uniform time grid with
position and speed as decision variables. Positions follow the trapezoidal
rule, acceleration is constant over a step, and traction force and power of
a step are evaluated at the step's mean speed and mid position. With that
choice the discrete traction work equals the change in kinetic energy plus
resistance and grade work exactly, so the objective cannot be gamed by
oscillating acceleration. The flip side is that a step-to-step zigzag in
speed costs nothing, so the optimiser objective carries a small penalty on
changes of acceleration (``jerk_weight``); reported costs exclude it.

The discrete NLP is solved with IPOPT (through CasADi). Prices are
piecewise constant in time on the dispatch grid and in position by ACC;
inside the optimiser the ACC steps are smoothed with a logistic of width
``price_smoothing`` metres, while reported costs use the exact steps.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
import logging
import math

import casadi as ca
import numpy as np

from .core import (GRAVITY, AccDescriptor, GradeProfile, HorizonGrid, InfeasibleError, InvalidArgument,
                   RdmmError, SpeedProfile, Timetable, TrainSpec, acc_boundaries,
                   acc_of_positions, validate_track)
from .dynamics import Trace, electrical_power, traction_force

log = logging.getLogger(__name__)


class OptimizationFailure(RdmmError):
    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = iterates or []


@dataclass(frozen=True, eq=False)
class TripDefinition:
    id: str
    train: TrainSpec
    timetable: Timetable
    grade: GradeProfile
    track: tuple[AccDescriptor, ...]
    speed_limit: SpeedProfile | None = None
    min_speed: SpeedProfile | None = None

    def __post_init__(self):
        object.__setattr__(self, "track", tuple(self.track))
        validate_track(self.track)
        edges = acc_boundaries(self.track)
        for s in self.timetable.stations:
            if not edges[0] <= s.position <= edges[-1]:
                raise InvalidArgument(f"station {s.name} at {s.position} m is off the track")
            if abs(float(self.grade(s.position))) > 1e-12:
                raise InvalidArgument(f"station {s.name} is not on level track")

    @property
    def t0(self) -> float:
        return self.timetable.departure_time

    @property
    def tf(self) -> float:
        return self.timetable.arrival_time

    def v_upper(self, x):
        cap = np.full(np.shape(x), self.train.v_max, dtype=float)
        if self.speed_limit is not None:
            cap = np.minimum(cap, self.speed_limit(x))
        return cap


@dataclass(frozen=True, eq=False)
class PriceFunction:
    """Energy price field ``lambda(t, n)`` in $/J.

    ``prices[n-1, K-1]`` applies to ACC ``n`` during dispatch interval ``K``.
    Times before the horizon use the first interval, times after it hold the
    last interval's price.
    """

    grid: HorizonGrid
    prices: np.ndarray
    track: tuple[AccDescriptor, ...]

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        object.__setattr__(self, "track", tuple(self.track))
        if p.shape != (len(self.track), self.grid.num_intervals):
            raise InvalidArgument(f"price matrix shape {p.shape} != "
                                  f"({len(self.track)}, {self.grid.num_intervals})")
        if not np.all(np.isfinite(p)):
            raise InvalidArgument("prices must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)

    @classmethod
    def uniform(cls, value: float, track) -> "PriceFunction":
        return cls(HorizonGrid(1, 1.0, 0.0), np.full((len(track), 1), float(value)), track)

    def interval_index(self, t) -> np.ndarray:
        g = self.grid
        k = np.floor((np.asarray(t, dtype=float) - g.start_time) / g.interval_length).astype(int)
        return np.clip(k, 0, g.num_intervals - 1)

    def at(self, t, x):
        n = acc_of_positions(self.track, x) - 1
        out = self.prices[n, self.interval_index(t)]
        return float(out) if np.ndim(out) == 0 else out

    def by_acc(self, t) -> np.ndarray:
        """Price of every ACC at times ``t``; shape ``(len(t), n_acc)``."""
        return self.prices[:, self.interval_index(t)].T

    def max_abs(self) -> float:
        return float(np.abs(self.prices).max())


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 5.0
    n_starts: int = 3
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 3000
    price_smoothing: float = 100.0
    jerk_weight: float = 1e-3
    print_level: int = 0


@dataclass(eq=False)
class Trajectory:
    """Sampled trip: per-node ``t, x, v``; per-step ``a, force, power`` aligned to the step start.

    The step arrays hold the value on ``[t[k], t[k+1])``; their last entry is
    zero. ``cost`` is the exact integral of power times price.
    """

    train_id: str
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    force: np.ndarray
    power: np.ndarray
    legs: list[tuple[int, int]] = field(default_factory=list)
    cost: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        """Signed electrical energy (J)."""
        return float(np.sum(self.power[:-1] * np.diff(self.t)))

    @property
    def work(self) -> float:
        """Traction energy drawn, regeneration excluded (J)."""
        return float(np.sum(np.maximum(self.power[:-1], 0.0) * np.diff(self.t)))

    def position_at(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        tau = t - self.t[k]
        return self.x[k] + self.v[k] * tau + 0.5 * self.a[k] * tau * tau

    def power_at(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1)
        inside = (t >= self.t[0]) & (t < self.t[-1])
        return np.where(inside, self.power[k], 0.0)

    def crossing_times(self, track) -> dict[int, tuple[float, float]]:
        """Entry and exit time of every ACC the trajectory visits."""
        pieces = trajectory_pieces(self, track)
        out: dict[int, tuple[float, float]] = {}
        for ta, tb, n in zip(pieces.t_start, pieces.t_end, pieces.acc):
            lo, hi = out.get(int(n), (ta, tb))
            out[int(n)] = (min(lo, ta), max(hi, tb))
        return dict(sorted(out.items()))

    def segment(self, i0: int, i1: int) -> "Trajectory":
        sl = slice(i0, i1 + 1)
        p = self.power[sl].copy()
        a = self.a[sl].copy()
        f = self.force[sl].copy()
        p[-1] = a[-1] = f[-1] = 0.0
        return Trajectory(self.train_id, self.t[sl].copy(), self.x[sl].copy(), self.v[sl].copy(), a, f, p)


@dataclass(frozen=True, eq=False)
class Pieces:
    """Sub-steps of a trajectory on which power, ACC and dispatch interval are constant."""

    t_start: np.ndarray
    t_end: np.ndarray
    power: np.ndarray
    acc: np.ndarray
    x_mid: np.ndarray

    @property
    def duration(self) -> np.ndarray:
        return self.t_end - self.t_start


def _crossing_time(x0, v0, a, target, dt):
    """First ``tau`` in [0, dt] with ``x0 + v0 tau + a tau^2/2 = target``."""
    d = target - x0
    if abs(a) < 1e-12:
        return d / v0 if v0 > 0 else dt
    disc = max(v0 * v0 + 2 * a * d, 0.0)
    tau = (-v0 + math.sqrt(disc)) / a
    return min(max(tau, 0.0), dt)


def trajectory_pieces(traj: Trajectory, track, extra_times=()) -> Pieces:
    """Split every step at ACC boundary crossings and at ``extra_times``."""
    edges = acc_boundaries(track)[1:-1]
    breaks = [traj.t]
    for e in edges:
        ks = np.flatnonzero((traj.x[:-1] < e) & (traj.x[1:] >= e))
        for k in ks:
            dt = traj.t[k + 1] - traj.t[k]
            breaks.append([traj.t[k] + _crossing_time(traj.x[k], traj.v[k], traj.a[k], e, dt)])
    extra = np.asarray(extra_times, dtype=float)
    breaks.append(extra[(extra > traj.t[0]) & (extra < traj.t[-1])])
    tb = np.unique(np.concatenate([np.asarray(b, dtype=float) for b in breaks]))
    ta, tz = tb[:-1], tb[1:]
    keep = tz - ta > 1e-9
    ta, tz = ta[keep], tz[keep]
    mid = 0.5 * (ta + tz)
    k = np.clip(np.searchsorted(traj.t, mid, side="right") - 1, 0, len(traj.t) - 2)
    x_mid = traj.position_at(mid)
    return Pieces(ta, tz, traj.power[k], acc_of_positions(track, x_mid), x_mid)


def trajectory_cost(traj: Trajectory, prices: PriceFunction) -> float:
    """Exact ``integral P(t) lambda(t, x(t)) dt`` for piecewise-constant power and prices."""
    g = prices.grid
    pieces = trajectory_pieces(traj, prices.track, g.edges)
    lam = prices.prices[pieces.acc - 1, prices.interval_index(0.5 * (pieces.t_start + pieces.t_end))]
    return float(np.sum(pieces.power * lam * pieces.duration))


# --- transcription -----------------------------------------------------------------------


def _ramp_sum(xs, ys, x, fmax):
    """Piecewise-linear interpolation written as a sum of ramps (valid for SX and numpy)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 1:
        return ys[0] + 0 * x
    slopes = np.diff(ys) / np.diff(xs)
    out = ys[0] + slopes[0] * (fmax(x, xs[0]) - xs[0])
    for i in range(1, slopes.size):
        out = out + (slopes[i] - slopes[i - 1]) * fmax(x - xs[i], 0.0)
    # hold the last value beyond the final knot
    out = out - slopes[-1] * fmax(x - xs[-1], 0.0)
    return out


@dataclass(frozen=True, eq=False)
class LegNLP:
    """Discrete trajectory problem of one leg.

    Decision vector ``z = [xs_0..xs_N, vs_0..vs_N]`` with ``xs = (x - x_start)/length``
    and ``vs = v / v_ref``.
    """

    trip: TripDefinition
    index: int
    x_start: float
    x_end: float
    t_start: float
    t_end: float
    n_steps: int
    smoothing: float
    jerk_weight: float = 1e-3

    @property
    def length(self) -> float:
        return self.x_end - self.x_start

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def dt(self) -> float:
        return self.duration / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_nodes)

    @property
    def v_ref(self) -> float:
        return self.trip.train.v_max

    @cached_property
    def boundaries(self) -> np.ndarray:
        """ACC boundaries strictly inside the leg (with smoothing margin)."""
        e = acc_boundaries(self.trip.track)[1:-1]
        m = 6 * self.smoothing
        return e[(e > self.x_start - m) & (e < self.x_end + m)]

    @cached_property
    def acc_span(self) -> np.ndarray:
        """0-based index of the ACC left of the first boundary, then one per boundary."""
        e = acc_boundaries(self.trip.track)[1:-1]
        first = int(np.sum(e <= self.x_start - 6 * self.smoothing))
        return first + np.arange(self.boundaries.size + 1)

    def split(self, z):
        n = self.n_nodes
        xs, vs = z[:n], z[n:]
        return self.x_start + self.length * xs, self.v_ref * vs

    def pack(self, x, v) -> np.ndarray:
        return np.concatenate([(np.asarray(x) - self.x_start) / self.length, np.asarray(v) / self.v_ref])

    def price_params(self, prices: PriceFunction) -> tuple[np.ndarray, float]:
        """Step prices per ACC in the span, normalised; returns ``(params, scale)``."""
        lam = prices.by_acc(self.times[:-1])[:, self.acc_span]
        scale = float(np.abs(lam).max()) or 1.0
        return (lam / scale).ravel(order="F"), scale

    # objective pieces, written once for both numpy and casadi inputs
    def _expressions(self, x, v, lam, lib):
        tr = self.trip.train
        fmax = np.maximum if lib is np else ca.fmax
        sin = np.sin if lib is np else ca.sin
        exp = np.exp if lib is np else ca.exp
        dt = self.dt
        vb = 0.5 * (v[1:] + v[:-1])
        xb = 0.5 * (x[1:] + x[:-1])
        acc = (v[1:] - v[:-1]) / dt
        force = tr.mass * acc + tr.davis_a + tr.davis_b * vb + tr.davis_c * vb * vb
        grade = self.trip.grade
        if not grade.is_flat:
            force = force + tr.mass * GRAVITY * sin(_ramp_sum(grade.positions, grade.angles, xb, fmax))
        mech = force * vb
        if tr.eta_traction == 1.0 and tr.eta_regen == 1.0:
            power = mech
        else:
            # smooth positive part so IPOPT sees a differentiable objective
            sqrt = np.sqrt if lib is np else ca.sqrt
            eps = 1e-3 * tr.p_max
            pos = 0.5 * (mech + sqrt(mech * mech + eps * eps))
            power = pos / tr.eta_traction + (mech - pos) * tr.eta_regen
        n_b = self.boundaries.size
        xk = x[:-1]
        price = lam[0]
        for i in range(n_b):
            w = 1.0 / (1.0 + exp(-(xk - self.boundaries[i]) / self.smoothing))
            price = price + (lam[i + 1] - lam[i]) * w
        cost = power * price * dt
        return acc, force, power, cost

    def _split_lam(self, params, lib):
        N, nb = self.n_steps, self.boundaries.size + 1
        if lib is np:
            P = np.asarray(params, dtype=float).reshape((N, nb), order="F")
            return [P[:, i] for i in range(nb)]
        return [params[i * N:(i + 1) * N] for i in range(nb)]

    def objective(self, z, params) -> float:
        """Normalised objective evaluated with numpy (independent of the AD graph)."""
        x, v = self.split(np.asarray(z, dtype=float))
        acc, _, _, cost = self._expressions(x, v, self._split_lam(params, np), np)
        return float(np.sum(cost) / self._cost_scale + self._jerk_penalty(acc, np))

    def _jerk_penalty(self, acc, lib):
        if self.jerk_weight == 0 or self.n_steps < 2:
            return 0.0
        tr = self.trip.train
        d = (acc[1:] - acc[:-1]) / max(tr.a_max, -tr.a_min)
        total = np.sum(d * d) if lib is np else ca.sumsqr(d)
        return self.jerk_weight * total / self.n_steps

    @property
    def _cost_scale(self) -> float:
        return self.trip.train.p_max * self.duration

    @cached_property
    def _symbolic(self):
        tr = self.trip.train
        n = self.n_nodes
        z = ca.SX.sym("z", 2 * n)
        p = ca.SX.sym("p", self.n_steps * (self.boundaries.size + 1))
        x = self.x_start + self.length * z[:n]
        v = self.v_ref * z[n:]
        acc, force, power, cost = self._expressions(x, v, self._split_lam(p, ca), ca)
        f = ca.sum1(cost) / self._cost_scale + self._jerk_penalty(acc, ca)
        dt = self.dt
        defect = (z[1:n] - z[:n - 1]) - 0.5 * (z[n + 1:] + z[n:2 * n - 1]) * dt * self.v_ref / self.length
        g = [defect, acc / max(tr.a_max, -tr.a_min), force / tr.f_max_const, power / tr.p_max]
        vmax_prof = self.trip.speed_limit
        if vmax_prof is not None and not vmax_prof.is_constant:
            g.append((v - _ramp_sum(vmax_prof.positions, vmax_prof.values, x, ca.fmax)) / self.v_ref)
        vmin_prof = self.trip.min_speed
        if vmin_prof is not None:
            g.append((v[1:-1] - _ramp_sum(vmin_prof.positions, vmin_prof.values, x[1:-1], ca.fmax))
                     / self.v_ref)
        return z, p, f, ca.vertcat(*g)

    def constraint_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        tr = self.trip.train
        N = self.n_steps
        sa = max(tr.a_max, -tr.a_min)
        lb = [np.zeros(N), np.full(N, tr.a_min / sa), np.full(N, tr.f_min_const / tr.f_max_const),
              np.full(N, tr.p_min / tr.p_max)]
        ub = [np.zeros(N), np.full(N, tr.a_max / sa), np.ones(N), np.ones(N)]
        if self.trip.speed_limit is not None and not self.trip.speed_limit.is_constant:
            lb.append(np.full(self.n_nodes, -np.inf))
            ub.append(np.zeros(self.n_nodes))
        if self.trip.min_speed is not None:
            lb.append(np.zeros(self.n_nodes - 2))
            ub.append(np.full(self.n_nodes - 2, np.inf))
        return np.concatenate(lb), np.concatenate(ub)

    def variable_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_nodes
        vcap = self.trip.train.v_max
        if self.trip.speed_limit is not None and self.trip.speed_limit.is_constant:
            vcap = min(vcap, float(self.trip.speed_limit.values[0]))
        lbx = np.concatenate([np.zeros(n), np.zeros(n)])
        ubx = np.concatenate([np.ones(n), np.full(n, vcap / self.v_ref)])
        lbx[n - 1] = 1.0
        ubx[0] = 0.0
        ubx[n] = ubx[2 * n - 1] = 0.0
        return lbx, ubx

    @cached_property
    def functions(self):
        z, p, f, g = self._symbolic
        grad = ca.gradient(f, z)
        return {
            "f": ca.Function("f", [z, p], [f]),
            "grad": ca.Function("grad", [z, p], [grad]),
            "g": ca.Function("g", [z, p], [g]),
            "jac_g": ca.Function("jac_g", [z, p], [ca.jacobian(g, z)]),
        }

    def gradient(self, z, params) -> np.ndarray:
        return np.asarray(self.functions["grad"](z, params)).ravel()

    def constraints(self, z, params) -> np.ndarray:
        return np.asarray(self.functions["g"](z, params)).ravel()

    def solver(self, config: SolverConfig):
        key = (config.tol, config.max_iter, config.print_level)
        cache = self.__dict__.setdefault("_solvers", {})
        if key not in cache:
            z, p, f, g = self._symbolic
            opts = {"ipopt.print_level": config.print_level, "print_time": False,
                    "ipopt.tol": config.tol, "ipopt.constr_viol_tol": 1e-9,
                    "ipopt.max_iter": config.max_iter, "ipopt.sb": "yes"}
            cache[key] = ca.nlpsol(f"leg{self.index}", "ipopt", {"x": z, "p": p, "f": f, "g": g}, opts)
        return cache[key]

    # --- diagnostics -------------------------------------------------------------------

    def feasibility(self, z, params=None) -> float:
        """Largest scaled violation of constraints and variable bounds."""
        if params is None:
            params = np.zeros(self.n_steps * (self.boundaries.size + 1))
        g = self.constraints(z, params)
        lb, ub = self.constraint_bounds()
        lbx, ubx = self.variable_bounds()
        viol = [np.maximum(lb - g, 0), np.maximum(g - ub, 0), np.maximum(lbx - z, 0), np.maximum(z - ubx, 0)]
        return float(max(np.max(v) for v in viol))

    def defects(self, z) -> float:
        x, v = self.split(np.asarray(z, dtype=float))
        d = np.diff(x) - 0.5 * (v[1:] + v[:-1]) * self.dt
        return float(np.abs(d).max() / self.length)

    def stationarity(self, z, params, lam_g, lam_x) -> float:
        grad = self.gradient(z, params)
        jac = self.functions["jac_g"](z, params)
        r = grad + np.asarray(jac.T @ ca.DM(lam_g)).ravel() + np.asarray(lam_x).ravel()
        return float(np.abs(r).max())


def transcribe_leg(trip: TripDefinition, leg_index: int, dt: float = 5.0,
                   price_smoothing: float = 100.0, jerk_weight: float = 1e-3) -> LegNLP:
    """Discretise one inter-station run on a uniform grid of step about ``dt``."""
    if not dt > 0:
        raise InvalidArgument("dt must be > 0")
    legs = trip.timetable.legs()
    if not 0 <= leg_index < len(legs):
        raise InvalidArgument(f"leg index {leg_index} outside 0..{len(legs) - 1}")
    x0, x1, t0, t1 = legs[leg_index]
    duration = t1 - t0
    length = x1 - x0
    tr = trip.train
    xs = np.linspace(x0, x1, 201)
    vcap = float(np.min(trip.v_upper(xs)))
    vtop = float(np.max(trip.v_upper(xs)))
    mean = length / duration
    if mean > vtop:
        raise InfeasibleError(f"leg {leg_index}: required mean speed {mean:.2f} m/s exceeds "
                              f"allowed {vtop:.2f} m/s")
    # trapezoid with the acceleration limits gives a lower bound on the running time
    if length >= vcap ** 2 / (2 * tr.a_max) + vcap ** 2 / (2 * -tr.a_min):
        t_min = length / vcap + vcap / (2 * tr.a_max) + vcap / (2 * -tr.a_min)
    else:
        vp = math.sqrt(2 * length / (1 / tr.a_max + 1 / -tr.a_min))
        t_min = vp / tr.a_max + vp / -tr.a_min
    if duration < t_min and vcap == vtop:
        raise InfeasibleError(f"leg {leg_index}: running time {duration:.1f} s below the minimum "
                              f"{t_min:.1f} s (required mean speed {mean:.2f} m/s, allowed {vcap:.2f} m/s)")
    n_steps = max(2, int(math.ceil(duration / dt - 1e-9)))
    return LegNLP(trip, leg_index, x0, x1, t0, t1, n_steps, float(price_smoothing), float(jerk_weight))


# --- initial guesses and feasible reference profiles -------------------------------------


def _speed_curves(nlp: LegNLP, accel_frac: float, brake_frac: float, fine: float = 0.25):
    """Maximum-speed curves reachable from the start and able to stop at the end.

    Uses a slightly shrunk traction envelope so the resulting profile is
    strictly feasible.
    """
    tr = nlp.trip.train
    margin = 0.97
    f_hi, f_lo = margin * tr.f_max_const, margin * tr.f_min_const
    p_hi, p_lo = margin * tr.p_max, margin * tr.p_min
    A, B, C, m = tr.davis_a, tr.davis_b, tr.davis_c, tr.mass

    def accel(v):
        vr = max(v, 1e-6)
        return min(tr.a_max, (min(f_hi, p_hi / vr) - (A + B * v + C * v * v)) / m)

    def brake(v):
        vr = max(v, 1e-6)
        return max(tr.a_min, (max(f_lo, p_lo / vr) - (A + B * v + C * v * v)) / m)

    n = int(math.ceil(nlp.duration / fine))
    tt = np.linspace(0.0, nlp.duration, n + 1)
    h = tt[1] - tt[0]
    up = [0.0] * (n + 1)
    down = [0.0] * (n + 1)
    for k in range(n):
        up[k + 1] = up[k] + h * max(accel_frac * accel(up[k]), 0.0)
        down[n - k - 1] = down[n - k] - h * min(brake_frac * brake(down[n - k]), 0.0)
    return tt, np.array(up), np.array(down)


def trapezoid_profile(nlp: LegNLP, accel_frac: float = 0.6, brake_frac: float = 0.6,
                      cruise_jitter=None) -> np.ndarray:
    """Accelerate / cruise / brake speed profile on the leg grid matching its length.

    The cruise speed is found by bisection on the trapezoidal distance, so
    the returned decision vector satisfies the position defects exactly.
    """
    tt, up, down = _speed_curves(nlp, accel_frac, brake_frac)
    tn = nlp.times - nlp.t_start
    up_n = np.interp(tn, tt, up)
    down_n = np.interp(tn, tt, down)
    cap = nlp.trip.v_upper(np.linspace(nlp.x_start, nlp.x_end, nlp.n_nodes)) * 0.999
    env = np.minimum(np.minimum(up_n, down_n), cap)
    shape = np.ones(nlp.n_nodes) if cruise_jitter is None else cruise_jitter

    def profile(vc):
        return np.minimum(env, vc * shape)

    def dist(vc):
        v = profile(vc)
        return float(np.sum(0.5 * (v[1:] + v[:-1])) * nlp.dt)

    lo, hi = 0.0, float(env.max()) / max(float(np.min(shape)), 1e-3)
    if dist(hi) < nlp.length:
        raise InfeasibleError(f"leg {nlp.index}: no accelerate-cruise-brake profile covers "
                              f"{nlp.length:.0f} m in {nlp.duration:.0f} s")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dist(mid) < nlp.length:
            lo = mid
        else:
            hi = mid
    v = profile(hi)
    x = nlp.x_start + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * nlp.dt)])
    x[-1] = nlp.x_end
    return nlp.pack(x, v)


def random_feasible_profile(nlp: LegNLP, rng: np.random.Generator) -> np.ndarray:
    """A randomised but feasible speed profile for reference comparisons.

    Gentle draws that cannot cover the leg in time are pushed towards full
    acceleration and braking until they can.
    """
    accel = rng.uniform(0.3, 1.0)
    brake = rng.uniform(0.3, 1.0)
    n = nlp.n_nodes
    knots = rng.uniform(0.85, 1.15, 4)
    jitter = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, knots.size), knots)
    for _ in range(8):
        try:
            return trapezoid_profile(nlp, accel, brake, jitter)
        except InfeasibleError:
            accel, brake = 0.5 * (accel + 1.0), 0.5 * (brake + 1.0)
    return trapezoid_profile(nlp, 1.0, 1.0, jitter)


# --- solving -----------------------------------------------------------------------------


def _initial_guesses(nlp: LegNLP, config: SolverConfig, warm: np.ndarray | None):
    guesses = [("trapezoid", lambda: trapezoid_profile(nlp, 0.6, 0.6)),
               ("max-accel", lambda: trapezoid_profile(nlp, 1.0, 1.0))]
    if warm is not None:
        guesses.append(("warm", lambda: warm))
    else:
        rng = np.random.default_rng([config.seed, nlp.index])
        guesses.append(("perturbed", lambda: random_feasible_profile(nlp, rng)))
    return guesses[:max(1, config.n_starts)] if warm is None else (
        [guesses[-1]] + guesses[:max(0, config.n_starts - 1)])


def optimize_leg(nlp: LegNLP, prices: PriceFunction, config: SolverConfig = SolverConfig(),
                 warm_start: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Multi-start local optimisation of one leg.

    Returns the best decision vector and a diagnostics dict with the
    objective, scaled stationarity, feasibility and the start that won.
    """
    params, scale = nlp.price_params(prices)
    solver = nlp.solver(config)
    lbg, ubg = nlp.constraint_bounds()
    lbx, ubx = nlp.variable_bounds()
    best = None
    dumps = []
    for name, make in _initial_guesses(nlp, config, warm_start):
        try:
            z0 = make()
        except InfeasibleError as exc:
            dumps.append({"start": name, "error": str(exc)})
            continue
        sol = solver(x0=z0, p=params, lbx=lbx, ubx=ubx, lbg=lbg, ubg=ubg)
        stats = solver.stats()
        z = np.asarray(sol["x"]).ravel()
        feas = nlp.feasibility(z, params)
        status = stats["return_status"]
        rec = {"start": name, "status": status, "iterations": stats["iter_count"],
               "objective": float(sol["f"]), "feasibility": feas}
        dumps.append(rec)
        ok = stats["success"] or status == "Solved_To_Acceptable_Level"
        if not ok or feas > 1e-6:
            continue
        rec["stationarity"] = nlp.stationarity(z, params, sol["lam_g"], sol["lam_x"])
        if best is None or rec["objective"] < best[1]["objective"] - 1e-12:
            best = (z, rec)
    if best is None:
        raise OptimizationFailure(f"leg {nlp.index}: all {len(dumps)} starts failed", dumps)
    z, rec = best
    rec = dict(rec, starts=dumps, price_scale=scale, defects=nlp.defects(z))
    return z, rec


def leg_trajectory(nlp: LegNLP, z: np.ndarray, train_id: str = "") -> Trajectory:
    x, v = nlp.split(z)
    x[0], x[-1] = nlp.x_start, nlp.x_end
    v = np.maximum(v, 0.0)
    v[0] = v[-1] = 0.0
    acc, force, power, _ = nlp._expressions(x, v, [np.zeros(nlp.n_steps)] * (nlp.boundaries.size + 1), np)
    pad = lambda arr: np.append(arr, 0.0)
    return Trajectory(train_id, nlp.times, x, v, pad(acc), pad(force), pad(power),
                      legs=[(0, nlp.n_steps)])


def _dwell(x, t_a, t_d, dt):
    n = max(1, int(math.ceil((t_d - t_a) / dt - 1e-9)))
    t = np.linspace(t_a, t_d, n + 1)
    z = np.zeros(n + 1)
    return t, np.full(n + 1, x), z


def concatenate(train_id: str, parts: list[Trajectory]) -> Trajectory:
    ts, xs, vs, as_, fs, ps, legs = [], [], [], [], [], [], []
    offset = 0
    for i, p in enumerate(parts):
        # parts share their boundary node; the step arrays lose the zero pad instead
        drop = 1 if i > 0 else 0
        keep = len(p.t) if i == len(parts) - 1 else -1
        ts.append(p.t[drop:])
        xs.append(p.x[drop:])
        vs.append(p.v[drop:])
        as_.append(p.a[:keep])
        fs.append(p.force[:keep])
        ps.append(p.power[:keep])
        start = offset - drop if i > 0 else 0
        legs.extend((start + a, start + b) for a, b in p.legs)
        offset = start + len(p.t)
    return Trajectory(train_id, np.concatenate(ts), np.concatenate(xs), np.concatenate(vs),
                      np.concatenate(as_), np.concatenate(fs), np.concatenate(ps), legs)


def _solve_legs(trip: TripDefinition, prices: PriceFunction, config: SolverConfig,
                warm: Trajectory | None, executor: Executor | None, nlps=None):
    legs = trip.timetable.legs()
    if nlps is None:
        nlps = [transcribe_leg(trip, i, config.dt, config.price_smoothing, config.jerk_weight)
                for i in range(len(legs))]

    def solve(i):
        nlp = nlps[i]
        z_warm = None
        if warm is not None and i < len(warm.legs):
            a, b = warm.legs[i]
            if b - a == nlp.n_steps:
                z_warm = nlp.pack(warm.x[a:b + 1], warm.v[a:b + 1])
        return optimize_leg(nlp, prices, config, z_warm)

    idx = range(len(legs))
    results = list(executor.map(solve, idx)) if executor is not None else [solve(i) for i in idx]
    return nlps, results


def optimize_trip(trip: TripDefinition, prices: PriceFunction, config: SolverConfig = SolverConfig(),
                  warm_start: Trajectory | None = None, executor: Executor | None = None,
                  nlps=None) -> Trajectory:
    """Cost-minimising trajectory for a whole trip; stops are held at zero speed and power."""
    nlps, results = _solve_legs(trip, prices, config, warm_start, executor, nlps)
    parts = []
    dwells = trip.timetable.dwells()
    for i, (nlp, (z, rec)) in enumerate(zip(nlps, results)):
        parts.append(leg_trajectory(nlp, z, trip.id))
        if i < len(dwells):
            x, t_a, t_d = dwells[i]
            if t_d > t_a:
                t, xx, zz = _dwell(x, t_a, t_d, config.dt)
                parts.append(Trajectory(trip.id, t, xx, zz, zz.copy(), zz.copy(), zz.copy()))
    traj = concatenate(trip.id, parts)
    traj.cost = trajectory_cost(traj, prices)
    traj.info = {"legs": [rec for _, rec in results], "nlps": nlps}
    return traj


def min_work_profile(trip: TripDefinition, config: SolverConfig = SolverConfig(),
                     executor: Executor | None = None, nlps=None) -> Trajectory:
    """Trajectory minimising signed traction energy (uniform unit price)."""
    return optimize_trip(trip, PriceFunction.uniform(1.0, trip.track), config,
                         executor=executor, nlps=nlps)


# --- field traces ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProfileCost:
    cost: float
    work: float
    energy: float
    t: np.ndarray
    power: np.ndarray
    clipped: int


def resample(trace: Trace, dt: float) -> Trace:
    t = np.asarray(trace.t, dtype=float)
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise InvalidArgument("trace time stamps must be strictly increasing")
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9))
    tt = t[0] + dt * np.arange(n + 1)
    return Trace(tt, np.interp(tt, t, trace.x), np.interp(tt, t, trace.v), np.interp(tt, t, trace.a))


def evaluate_profile_cost(trace, trip: TripDefinition, prices: PriceFunction,
                          dt: float = 1.0) -> ProfileCost:
    """Energy cost of a recorded or synthetic trajectory.

    The trace is resampled to a uniform grid, power follows from inverse
    dynamics at every sample, regeneration is clipped at the train's limit
    and the cost is a left Riemann sum of power times price.
    """
    if not isinstance(trace, Trace):
        trace = Trace.from_samples(trace)
    tr = resample(trace, dt)
    spec = trip.train
    v = np.maximum(tr.v, 0.0)
    f = traction_force(spec, trip.grade, tr.x, v, tr.a)
    p = electrical_power(spec, f * v)
    clipped = int(np.sum(p < spec.p_min))
    p = np.maximum(p, spec.p_min)
    w = np.diff(tr.t)
    lam = prices.at(tr.t[:-1], tr.x[:-1])
    cost = float(np.sum(p[:-1] * lam * w))
    return ProfileCost(cost, float(np.sum(np.maximum(p[:-1], 0) * w)), float(np.sum(p[:-1] * w)),
                       tr.t, p, clipped)
