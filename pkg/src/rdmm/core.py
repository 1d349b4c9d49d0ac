"""Shared domain types, unit helpers and the horizon/track bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

GRAVITY = 9.80665
J_PER_KWH = 3.6e6
J_PER_MWH = 3.6e9


class RdmmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(RdmmError, ValueError):
    pass


class OutOfRange(RdmmError, ValueError):
    pass


class InfeasibleError(RdmmError):
    pass


def usd_per_mwh_to_usd_per_j(p):
    return np.asarray(p, dtype=float) / J_PER_MWH


def usd_per_j_to_usd_per_mwh(p):
    return np.asarray(p, dtype=float) * J_PER_MWH


def usd_per_kwh_to_usd_per_j(p):
    return np.asarray(p, dtype=float) / J_PER_KWH


def usd_per_j_to_usd_per_kwh(p):
    return np.asarray(p, dtype=float) * J_PER_KWH


@dataclass(frozen=True)
class HorizonGrid:
    """Rolling dispatch horizon of ``num_intervals`` equal intervals.

    Interval ``K`` (1-based) covers ``[start + (K-1)*dt, start + K*dt)``.
    """

    num_intervals: int
    interval_length: float
    start_time: float = 0.0

    def __post_init__(self):
        if int(self.num_intervals) != self.num_intervals or self.num_intervals < 1:
            raise InvalidArgument(f"num_intervals must be a positive integer, got {self.num_intervals}")
        if not self.interval_length > 0 or not math.isfinite(self.interval_length):
            raise InvalidArgument(f"interval_length must be positive, got {self.interval_length}")

    @property
    def end_time(self) -> float:
        return self.start_time + self.num_intervals * self.interval_length

    @property
    def interval_hours(self) -> float:
        return self.interval_length / 3600.0

    @property
    def edges(self) -> np.ndarray:
        return self.start_time + self.interval_length * np.arange(self.num_intervals + 1)

    def bounds(self, K: int) -> tuple[float, float]:
        if not 1 <= K <= self.num_intervals:
            raise OutOfRange(f"interval {K} outside 1..{self.num_intervals}")
        lo = self.start_time + (K - 1) * self.interval_length
        return lo, lo + self.interval_length

    def interval_of(self, t: float) -> int:
        if not self.start_time <= t < self.end_time:
            raise OutOfRange(f"t={t} outside horizon [{self.start_time}, {self.end_time})")
        K = int((t - self.start_time) // self.interval_length) + 1
        return min(K, self.num_intervals)

    def shifted(self, n: int = 1) -> "HorizonGrid":
        return HorizonGrid(self.num_intervals, self.interval_length,
                           self.start_time + n * self.interval_length)


def build_time_grid(start: float, M: int, dt: float) -> HorizonGrid:
    return HorizonGrid(M, dt, start)


@dataclass(frozen=True)
class AccDescriptor:
    """One Area Control Center: a contiguous stretch of track with one price."""

    index: int
    start: float
    end: float
    name: str = ""
    agent_ids: tuple[str, ...] = ()
    passive_profile_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.end > self.start:
            raise InvalidArgument(f"ACC {self.index}: empty span [{self.start}, {self.end}]")


def validate_track(track) -> None:
    if not track:
        raise InvalidArgument("track has no ACCs")
    for n, acc in enumerate(track, start=1):
        if acc.index != n:
            raise InvalidArgument(f"ACC at position {n} has index {acc.index}")
        if n > 1 and acc.start != track[n - 2].end:
            raise InvalidArgument(
                f"ACC {n} starts at {acc.start} but ACC {n - 1} ends at {track[n - 2].end}")


def acc_boundaries(track) -> np.ndarray:
    """Positions x_0 < x_1 < ... < x_N of the ACC boundaries."""
    return np.array([track[0].start] + [acc.end for acc in track], dtype=float)


def acc_of_position(track, x: float) -> int:
    """1-based ACC index claiming position ``x`` (half-open spans, last one closed)."""
    edges = acc_boundaries(track)
    if not edges[0] <= x <= edges[-1]:
        raise OutOfRange(f"x={x} outside track [{edges[0]}, {edges[-1]}]")
    n = int(np.searchsorted(edges, x, side="right"))
    return min(n, len(track))


def acc_of_positions(track, x) -> np.ndarray:
    """Vectorised :func:`acc_of_position`; positions are clipped to the track."""
    edges = acc_boundaries(track)
    x = np.clip(np.asarray(x, dtype=float), edges[0], edges[-1])
    n = np.searchsorted(edges, x, side="right")
    return np.minimum(n, len(track))


class AgentKind(str, Enum):
    HEATING = "heating"
    ELECTRIC_GEN = "electric-gen"
    COGENERATION = "cogeneration"
    NETWORK = "network-connection"


def _profile(value, M: int, name: str, allow_inf: bool = False) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(M, float(arr))
    if arr.shape != (M,):
        raise InvalidArgument(f"{name}: expected length {M}, got shape {arr.shape}")
    bad = np.isnan(arr) if allow_inf else ~np.isfinite(arr)
    if np.any(bad):
        raise InvalidArgument(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DispatchableAgent:
    """A dispatchable DER with a quadratic cost in its setpoint ``y``.

    ``y`` is an energy per dispatch interval (kWh); ``d_e`` and ``d_th`` map it
    to electric and thermal output. Cost per interval is ``a + b*y + c*y**2/2``
    with ``b`` in $/kWh and ``c`` in $/kWh^2.
    """

    id: str
    kind: AgentKind
    d_e: np.ndarray
    d_th: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        M = np.size(self.b) if np.ndim(self.b) else np.size(self.y_max)
        if M == 0:
            raise InvalidArgument(f"agent {self.id}: empty profiles")
        for name in ("d_e", "d_th", "a", "b", "c", "y_min", "y_max"):
            object.__setattr__(self, name, _profile(getattr(self, name), M, f"agent {self.id}.{name}",
                                                    allow_inf=name in ("y_min", "y_max")))
        if np.any(self.c < 0):
            raise InvalidArgument(f"agent {self.id}: c must be >= 0")
        if np.any(self.y_min > self.y_max):
            raise InvalidArgument(f"agent {self.id}: y_min > y_max")
        if np.any((self.d_e == 0) & (self.d_th == 0)):
            raise InvalidArgument(f"agent {self.id}: d_e and d_th both zero in some interval")

    @property
    def M(self) -> int:
        return self.b.shape[0]

    @classmethod
    def constant(cls, id, kind, M, *, d_e, d_th, b, c, y_max, y_min=0.0, a=0.0):
        return cls(id, AgentKind(kind), np.full(M, d_e, float), np.full(M, d_th, float),
                   np.full(M, a, float), np.broadcast_to(np.asarray(b, float), (M,)).copy(),
                   np.full(M, c, float), np.broadcast_to(np.asarray(y_min, float), (M,)).copy(),
                   np.broadcast_to(np.asarray(y_max, float), (M,)).copy())

    def replace(self, **changes) -> "DispatchableAgent":
        fields_ = {k: getattr(self, k) for k in
                   ("id", "kind", "d_e", "d_th", "a", "b", "c", "y_min", "y_max")}
        fields_.update(changes)
        return DispatchableAgent(**fields_)

    def scaled_costs(self, s: float) -> "DispatchableAgent":
        return self.replace(a=self.a * s, b=self.b * s, c=self.c * s)


@dataclass(frozen=True, eq=False)
class PassiveProfiles:
    """Forecast profiles of the non-dispatchable agents of one ACC, in kW.

    Renewable output is positive, loads are negative. Each profile is a
    per-interval series starting at the scenario epoch and may be longer than
    the horizon; :meth:`window` cuts the part a horizon needs.
    """

    renewable: np.ndarray
    electric: np.ndarray
    thermal: np.ndarray

    def __post_init__(self):
        lens = set()
        for name in ("renewable", "electric", "thermal"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            lens.add(arr.shape[0])
        if len(lens) != 1:
            raise InvalidArgument(f"passive profiles have different lengths {sorted(lens)}")
        if np.any(self.renewable < 0):
            raise InvalidArgument("renewable profile must be >= 0")
        if np.any(self.electric > 0) or np.any(self.thermal > 0):
            raise InvalidArgument("load profiles must be <= 0 (load-negative convention)")

    @classmethod
    def zeros(cls, M: int) -> "PassiveProfiles":
        return cls(np.zeros(M), np.zeros(M), np.zeros(M))

    def __len__(self):
        return self.renewable.shape[0]

    def window(self, offset: int, M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Slice ``M`` intervals starting at ``offset``; the last value is held past the end."""
        idx = np.minimum(np.arange(offset, offset + M), len(self) - 1)
        return self.renewable[idx], self.electric[idx], self.thermal[idx]


@dataclass(frozen=True)
class TrainSpec:
    """Physical parameters of one train consist (SI units).

    Davis coefficients are totals for the consist. ``f_max_const`` and
    ``f_min_const`` bound the constant-force part of the traction envelope;
    when omitted they are sized so ``a_max``/``a_min`` are reachable from rest.
    """

    mass: float
    p_max: float
    p_min: float
    a_min: float
    a_max: float
    v_max: float
    davis_a: float
    davis_b: float
    davis_c: float
    f_max_const: float | None = None
    f_min_const: float | None = None
    eta_traction: float = 1.0
    eta_regen: float = 1.0
    v_eps: float = 0.5

    def __post_init__(self):
        if not self.mass > 0:
            raise InvalidArgument("mass must be > 0")
        if not self.p_min < 0 < self.p_max:
            raise InvalidArgument("need p_min < 0 < p_max")
        if not self.a_min < 0 < self.a_max:
            raise InvalidArgument("need a_min < 0 < a_max")
        if min(self.davis_a, self.davis_b, self.davis_c) < 0:
            raise InvalidArgument("Davis coefficients must be >= 0")
        if not self.v_max > 0:
            raise InvalidArgument("v_max must be > 0")
        if self.f_max_const is None:
            object.__setattr__(self, "f_max_const", self.mass * self.a_max + self.davis_a)
        if self.f_min_const is None:
            object.__setattr__(self, "f_min_const", self.mass * self.a_min)

    @classmethod
    def acela(cls) -> "TrainSpec":
        """Acela Express consist at 545 t partial load."""
        return cls(mass=545_000.0, p_max=9.2e6, p_min=-6.0e6, a_min=-0.5, a_max=0.5,
                   v_max=66.67, davis_a=10195.16, davis_b=65.81, davis_c=25.02)


@dataclass(frozen=True)
class Station:
    name: str
    position: float
    earliest_arrival: float
    latest_departure: float
    dwell: float = 0.0


@dataclass(frozen=True)
class Timetable:
    """Ordered stops of one train.

    The train is scheduled to stand at stop ``s`` during
    ``[latest_departure - dwell, latest_departure]``; the first stop only
    fixes the departure and the last stop's ``latest_departure`` is the
    arrival deadline.
    """

    stations: tuple[Station, ...]

    def __post_init__(self):
        st = tuple(self.stations)
        object.__setattr__(self, "stations", st)
        if len(st) < 2:
            raise InvalidArgument("timetable needs at least two stations")
        pos = np.array([s.position for s in st])
        if np.any(np.diff(pos) <= 0):
            raise InvalidArgument("station positions must be strictly increasing")
        for s in st:
            if s.dwell < 0 or s.earliest_arrival + s.dwell > s.latest_departure:
                raise InvalidArgument(f"station {s.name}: earliest arrival + dwell exceeds latest departure")
        for prev, nxt in zip(st, st[1:]):
            if self._arrival(nxt) <= prev.latest_departure:
                raise InvalidArgument(f"no running time between {prev.name} and {nxt.name}")

    @staticmethod
    def _arrival(s: Station) -> float:
        return s.latest_departure - s.dwell

    @property
    def departure_time(self) -> float:
        return self.stations[0].latest_departure

    @property
    def arrival_time(self) -> float:
        return self._arrival(self.stations[-1])

    def legs(self) -> list[tuple[float, float, float, float]]:
        """``(x_start, x_end, t_start, t_end)`` for each inter-station run."""
        out = []
        for prev, nxt in zip(self.stations, self.stations[1:]):
            out.append((prev.position, nxt.position, prev.latest_departure, self._arrival(nxt)))
        return out

    def dwells(self) -> list[tuple[float, float, float]]:
        """``(x, t_arrive, t_depart)`` for each intermediate stop."""
        return [(s.position, self._arrival(s), s.latest_departure) for s in self.stations[1:-1]]


@dataclass(frozen=True, eq=False)
class GradeProfile:
    """Piecewise-linear track angle ``alpha(x)`` in radians, held constant outside the knots."""

    positions: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float).ravel()
        a = np.asarray(self.angles, dtype=float).ravel()
        if x.shape != a.shape or x.size == 0:
            raise InvalidArgument("grade positions and angles must be non-empty and equal length")
        if np.any(np.diff(x) <= 0):
            raise InvalidArgument("grade positions must be strictly increasing")
        if np.any(np.abs(a) >= 0.2):
            raise InvalidArgument("grade angle magnitude must be < 0.2 rad")
        x.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "angles", a)

    @classmethod
    def flat(cls, start: float = 0.0, end: float = 1.0) -> "GradeProfile":
        return cls(np.array([start, max(end, start + 1.0)]), np.zeros(2))

    @property
    def is_flat(self) -> bool:
        return bool(np.all(self.angles == 0))

    def __call__(self, x):
        return np.interp(x, self.positions, self.angles)


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    """Piecewise-linear speed bound ``v(x)`` in m/s."""

    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if x.shape != v.shape or x.size == 0 or np.any(np.diff(x) <= 0):
            raise InvalidArgument("speed profile knots must be increasing and match values")
        if np.any(v < 0):
            raise InvalidArgument("speed bounds must be >= 0")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, v: float) -> "SpeedProfile":
        return cls(np.array([0.0]), np.array([float(v)]))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def __call__(self, x):
        return np.interp(x, self.positions, self.values)
