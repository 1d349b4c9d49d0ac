"""Longitudinal train physics: resistance, traction envelope, inverse and forward dynamics."""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .core import GRAVITY, GradeProfile, InvalidArgument, TrainSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KinematicSample:
    t: float
    x: float
    v: float
    a: float

    def __post_init__(self):
        if self.v < 0:
            raise InvalidArgument(f"negative speed {self.v} at t={self.t}")


@dataclass(frozen=True, eq=False)
class Trace:
    """Kinematic time series (arrays of equal length)."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __len__(self):
        return len(self.t)

    def samples(self) -> list[KinematicSample]:
        return [KinematicSample(float(t), float(x), float(v), float(a))
                for t, x, v, a in zip(self.t, self.x, self.v, self.a)]

    @classmethod
    def from_samples(cls, samples) -> "Trace":
        arr = np.array([(s.t, s.x, s.v, s.a) for s in samples], dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


@dataclass(frozen=True)
class ForceBreakdown:
    """Forces (N) and electrical power (W) for one kinematic state.

    ``violations`` names the envelope limits the state exceeds; with
    ``clipped`` set, ``traction`` and ``power`` were moved onto the envelope.
    """

    traction: float
    resistance: float
    grade: float
    power: float
    violations: tuple[str, ...] = ()
    clipped: bool = False


def davis_force(spec: TrainSpec, v):
    """Running resistance ``A + B v + C v^2`` (N)."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise InvalidArgument("Davis resistance needs v >= 0")
    out = spec.davis_a + spec.davis_b * v + spec.davis_c * v * v
    return float(out) if out.ndim == 0 else out


def traction_limits(spec: TrainSpec, v):
    """Lower and upper traction force bounds (N) at speed ``v``.

    Constant-force region cut by the power hyperbola ``P/v``; speeds below
    ``spec.v_eps`` use ``v_eps`` in the hyperbola so the bound stays finite.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise InvalidArgument("traction limits need v >= 0")
    vr = np.maximum(v, spec.v_eps)
    upper = np.minimum(spec.f_max_const, spec.p_max / vr)
    lower = np.maximum(spec.f_min_const, spec.p_min / vr)
    if upper.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def electrical_power(spec: TrainSpec, mech_power):
    """Electrical power drawn for a given mechanical power at the wheel."""
    p = np.asarray(mech_power, dtype=float)
    out = np.where(p >= 0, p / spec.eta_traction, p * spec.eta_regen)
    return float(out) if out.ndim == 0 else out


def traction_force(spec: TrainSpec, grade: GradeProfile, x, v, a):
    """Traction force (N) that produces acceleration ``a`` at state ``(x, v)``."""
    return (spec.mass * np.asarray(a, dtype=float) + davis_force(spec, v)
            + spec.mass * GRAVITY * np.sin(grade(x)))


def power_from_kinematics(spec: TrainSpec, grade: GradeProfile, s: KinematicSample,
                          clip: bool = False) -> ForceBreakdown:
    """Inverse dynamics: traction force and electrical power for one sample."""
    if s.v < 0:
        raise InvalidArgument("power_from_kinematics needs v >= 0")
    resist = davis_force(spec, s.v)
    f_grade = spec.mass * GRAVITY * float(np.sin(grade(s.x)))
    f_t = spec.mass * s.a + resist + f_grade
    power = electrical_power(spec, f_t * s.v)
    lo, hi = traction_limits(spec, s.v)
    violations = []
    if f_t > hi * (1 + 1e-12):
        violations.append("force_max")
    if f_t < lo * (1 + 1e-12):
        violations.append("force_min")
    if power > spec.p_max * (1 + 1e-12):
        violations.append("power_max")
    if power < spec.p_min * (1 + 1e-12):
        violations.append("power_min")
    if not clip or not violations:
        return ForceBreakdown(f_t, resist, f_grade, power, tuple(violations))
    f_c = min(max(f_t, lo), hi)
    p_c = min(max(electrical_power(spec, f_c * s.v), spec.p_min), spec.p_max)
    return ForceBreakdown(f_c, resist, f_grade, p_c, tuple(violations), clipped=True)


def integrate_forward(spec: TrainSpec, grade: GradeProfile, force, x0: float, v0: float,
                      dt: float, duration: float | None = None, t0: float = 0.0) -> Trace:
    """Semi-implicit Euler integration of the equation of motion.

    ``force`` is either a callable ``F(t)`` (requires ``duration``) or a
    pair ``(times, values)`` describing a piecewise-constant force that holds
    ``values[i]`` on ``[times[i], times[i+1])``; integration then runs to
    ``times[-1]``. Speed is clamped at zero.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be > 0")
    if callable(force):
        if duration is None:
            raise InvalidArgument("duration is required with a callable force")
        n = int(round(duration / dt))
        t = t0 + dt * np.arange(n + 1)
        f = np.array([force(ti) for ti in t[:-1]], dtype=float)
    else:
        times, values = (np.asarray(z, dtype=float) for z in force)
        if times.shape[0] != values.shape[0] + 1:
            raise InvalidArgument("piecewise force needs len(times) == len(values) + 1")
        n = int(round((times[-1] - times[0]) / dt))
        t = times[0] + dt * np.arange(n + 1)
        idx = np.clip(np.searchsorted(times, t[:-1] + 1e-9 * dt, side="right") - 1, 0, len(values) - 1)
        f = values[idx]
    if np.any(~np.isfinite(f)):
        raise InvalidArgument("force profile contains NaN/Inf")
    m = spec.mass
    x = np.empty(n + 1)
    v = np.empty(n + 1)
    x[0], v[0] = x0, v0
    clamped = 0
    for k in range(n):
        acc = (f[k] - davis_force(spec, v[k]) - m * GRAVITY * np.sin(grade(x[k]))) / m
        vn = v[k] + dt * acc
        if vn < 0:
            vn = 0.0
            clamped += 1
        v[k + 1] = vn
        x[k + 1] = x[k] + dt * vn
    if clamped:
        log.warning("integrate_forward clamped speed at zero in %d steps", clamped)
    a = np.append(np.diff(v) / dt, 0.0)
    return Trace(t, x, v, a)


def work_energy_balance(spec: TrainSpec, grade: GradeProfile, trace: Trace, force) -> tuple[float, float]:
    """``(traction work - resistance work - potential gain, kinetic gain)`` by trapezoidal quadrature.

    ``force`` gives the traction force at every trace sample.
    """
    f = np.asarray(force, dtype=float)
    v = trace.v
    resist = davis_force(spec, v)
    work = np.trapezoid((f - resist) * v, trace.t)
    # potential energy change along the path: m g integral sin(alpha) dx
    slope = np.sin(grade(trace.x))
    d_pe = spec.mass * GRAVITY * np.trapezoid(slope, trace.x)
    d_ke = 0.5 * spec.mass * (v[-1] ** 2 - v[0] ** 2)
    return float(work - d_pe), float(d_ke)
