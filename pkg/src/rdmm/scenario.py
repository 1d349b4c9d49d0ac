"""Scenario description, file formats and the Northeast Corridor case study.

A scenario is one JSON document (``schema_version`` 1). Price series and
profiles may be inline or referenced as CSV files relative to the JSON file.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (AccDescriptor, AgentKind, DispatchableAgent, GradeProfile, HorizonGrid, InvalidArgument,
                   PassiveProfiles, SpeedProfile, Station, Timetable, TrainSpec, usd_per_mwh_to_usd_per_j,
                   validate_track)
from .dispatch import C_MIN, StepSizes
from .dynamics import Trace
from .trajectory import SolverConfig, TripDefinition

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ScenarioError(InvalidArgument):
    """Invalid scenario content; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# --- price series ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Step-wise energy price of one ACC; ``values[i]`` holds from ``timestamps[i]`` on."""

    acc: int
    timestamps: np.ndarray
    values: np.ndarray  # $/MWh

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape or t.size == 0:
            raise InvalidArgument(f"price series for ACC {self.acc}: timestamps and values must match")
        if np.any(np.diff(t) <= 0):
            bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
            raise InvalidArgument(f"price series for ACC {self.acc}: timestamps not strictly increasing "
                                  f"at record {bad + 1}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument(f"price series for ACC {self.acc}: non-finite price")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    @property
    def usd_per_j(self) -> np.ndarray:
        return usd_per_mwh_to_usd_per_j(self.values)

    def check_coverage(self, grid: HorizonGrid) -> None:
        last_start = grid.end_time - grid.interval_length
        if self.timestamps[0] > grid.start_time or self.timestamps[-1] < last_start:
            raise InvalidArgument(
                f"price series for ACC {self.acc} covers [{self.timestamps[0]:g}, {self.timestamps[-1]:g}] s "
                f"but the horizon needs [{grid.start_time:g}, {last_start:g}] s")

    def interval_means(self, grid: HorizonGrid) -> np.ndarray:
        """Time-averaged price ($/MWh) over every interval; the last value is held past the end."""
        edges = grid.edges
        knots = np.unique(np.concatenate([edges, self.timestamps[(self.timestamps > edges[0])
                                                                 & (self.timestamps < edges[-1])]]))
        idx = np.clip(np.searchsorted(self.timestamps, knots[:-1], side="right") - 1, 0, None)
        area = self.values[idx] * np.diff(knots)
        cell = np.searchsorted(edges, knots[:-1], side="right") - 1
        return np.bincount(cell, weights=area, minlength=grid.num_intervals) / grid.interval_length

    def to_dict(self) -> dict:
        return {"acc": self.acc, "timestamps_s": self.timestamps.tolist(),
                "price_usd_per_mwh": self.values.tolist()}


def _read_csv(path, header: tuple[str, ...], what: str) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidArgument(f"cannot read {what} file {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(h.strip() for h in rows[0]) != header:
        raise InvalidArgument(f"{path}: expected header {','.join(header)}")
    out, bad = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(header):
                raise ValueError
            vals = [float(c) for c in row]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError
            out.append(vals)
        except ValueError:
            bad.append(lineno)
    if bad:
        raise InvalidArgument(f"{path}: unparseable rows at lines {', '.join(map(str, bad[:20]))}")
    return np.array(out, dtype=float).reshape(-1, len(header))


def load_price_series(path, acc: int) -> PriceSeries:
    """Read a ``timestamp_s,price_usd_per_mwh`` CSV file."""
    arr = _read_csv(path, ("timestamp_s", "price_usd_per_mwh"), "price")
    if arr.shape[0] == 0:
        raise InvalidArgument(f"{path}: no price records")
    return PriceSeries(acc, arr[:, 0], arr[:, 1])


def write_price_series(series: PriceSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("timestamp_s,price_usd_per_mwh\n")
        for t, v in zip(series.timestamps, series.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


# --- field traces ------------------------------------------------------------------------


def load_gps_trace(path, dt: float = 1.0, window: int = 5, min_samples: int = 10) -> Trace:
    """Read a ``t_s,x_m,v_mps`` CSV trace.

    The trace is resampled to a uniform ``dt`` by linear interpolation, the
    speed is smoothed with a centred moving average of ``window`` samples
    and acceleration comes from central differences of the smoothed speed.
    """
    arr = _read_csv(path, ("t_s", "x_m", "v_mps"), "trace")
    return trace_from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], dt, window, min_samples)


def trace_from_arrays(t, x, v, dt: float = 1.0, window: int = 5, min_samples: int = 10) -> Trace:
    t, x, v = (np.asarray(z, dtype=float) for z in (t, x, v))
    if t.size < min_samples:
        raise InvalidArgument(f"trace has {t.size} samples, at least {min_samples} are required")
    if np.any(np.diff(t) <= 0):
        raise InvalidArgument("trace time stamps must be strictly increasing")
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9))
    tt = t[0] + dt * np.arange(n + 1)
    xx = np.interp(tt, t, x)
    vv = np.interp(tt, t, v)
    if window > 1 and vv.size >= window:
        # centred moving average; the ends use the available samples only
        kernel = np.ones(window)
        num = np.convolve(vv, kernel, mode="same")
        den = np.convolve(np.ones_like(vv), kernel, mode="same")
        vv = num / den
    neg = int(np.sum(vv < 0))
    if neg:
        log.warning("trace: clamped %d negative smoothed speeds to zero", neg)
        vv = np.maximum(vv, 0.0)
    aa = np.gradient(vv, dt)
    return Trace(tt, xx, vv, aa)


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t_s,x_m,v_mps\n")
        for t, x, v in zip(trace.t, trace.x, trace.v):
            fh.write(f"{float(t)!r},{float(x)!r},{float(v)!r}\n")


# --- scenario ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one rDMM run needs.

    Agent and passive profiles are per-interval series starting at ``epoch``
    (interval length of the horizon); a horizon starting later uses a
    window of them. Network-connection agents get their linear cost from
    the ACC's price series at run time.
    """

    horizon: HorizonGrid
    track: tuple[AccDescriptor, ...]
    agents: dict[str, DispatchableAgent]
    passive: dict[str, PassiveProfiles]
    trains: tuple[TripDefinition, ...]
    prices: dict[int, PriceSeries]
    epoch: float = 0.0
    seed: int = 0
    solver: SolverConfig = SolverConfig()
    steps: StepSizes = StepSizes()
    damping: float = 1.0
    c_min: float = C_MIN
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "track", tuple(self.track))
        object.__setattr__(self, "trains", tuple(self.trains))
        validate_scenario(self)

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)

    @property
    def offset(self) -> int:
        """Index of the horizon's first interval in the epoch-based series."""
        return int(round((self.horizon.start_time - self.epoch) / self.horizon.interval_length))

    def acc(self, n: int) -> AccDescriptor:
        return self.track[n - 1]

    def acc_agents(self, n: int, network_price=None) -> list[DispatchableAgent]:
        """Agents of ACC ``n`` windowed to the horizon; network agents priced at ``network_price`` ($/kWh)."""
        from .dispatch import update_network_agent_cost

        M, off = self.horizon.num_intervals, self.offset
        out = []
        for aid in self.acc(n).agent_ids:
            agent = window_agent(self.agents[aid], off, M)
            if agent.kind is AgentKind.NETWORK:
                price = self.network_prices()[n - 1] if network_price is None else network_price
                agent = update_network_agent_cost(agent, price, self.c_min)
            out.append(agent)
        return out

    def network_prices(self) -> np.ndarray:
        """Per-ACC, per-interval external price in $/kWh, shape ``(N, M)``."""
        return np.array([self.prices[acc.index].interval_means(self.horizon) / 1000.0
                         for acc in self.track])

    def passive_loads(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Net fixed electric (renewable + electric load) and thermal power of ACC ``n`` in kW."""
        M, off = self.horizon.num_intervals, self.offset
        elec, therm = np.zeros(M), np.zeros(M)
        for pid in self.acc(n).passive_profile_ids:
            re, el, th = self.passive[pid].window(off, M)
            elec += re + el
            therm += th
        return elec, therm

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return scenario_to_dict(self) == scenario_to_dict(other)

    __hash__ = None


def window_agent(agent: DispatchableAgent, offset: int, M: int) -> DispatchableAgent:
    if agent.M == M and offset == 0:
        return agent
    idx = np.minimum(np.arange(offset, offset + M), agent.M - 1)
    return agent.replace(**{k: getattr(agent, k)[idx] for k in ("d_e", "d_th", "a", "b", "c", "y_min", "y_max")})


def validate_scenario(sc: Scenario) -> None:
    try:
        validate_track(sc.track)
    except InvalidArgument as exc:
        raise ScenarioError("track", str(exc)) from exc
    M = sc.horizon.num_intervals
    if abs(sc.offset * sc.horizon.interval_length - (sc.horizon.start_time - sc.epoch)) > 1e-6:
        raise ScenarioError("horizon.start_s", "horizon start must be epoch + whole intervals")
    if sc.offset < 0:
        raise ScenarioError("horizon.start_s", "horizon starts before the epoch")
    seen = set()
    for i, acc in enumerate(sc.track):
        if not acc.agent_ids:
            raise ScenarioError(f"track[{i}].agents", f"ACC {acc.index} has no dispatchable agent")
        for aid in acc.agent_ids:
            if aid not in sc.agents:
                raise ScenarioError(f"track[{i}].agents", f"unknown agent id {aid!r}")
            if aid in seen:
                raise ScenarioError(f"track[{i}].agents", f"agent {aid!r} assigned to two ACCs")
            seen.add(aid)
        for pid in acc.passive_profile_ids:
            if pid not in sc.passive:
                raise ScenarioError(f"track[{i}].passive", f"unknown passive profile id {pid!r}")
        if acc.index not in sc.prices:
            raise ScenarioError("prices", f"missing price series for ACC {acc.index}")
        try:
            sc.prices[acc.index].check_coverage(sc.horizon)
        except InvalidArgument as exc:
            raise ScenarioError(f"prices[{acc.index}]", str(exc)) from exc
    for aid, agent in sc.agents.items():
        if agent.M < sc.offset + M:
            raise ScenarioError(f"agents.{aid}", f"profiles have length {agent.M}, expected at least "
                                f"M={sc.offset + M}")
    for pid, prof in sc.passive.items():
        if len(prof) < sc.offset + M:
            raise ScenarioError(f"passive.{pid}", f"profiles have length {len(prof)}, expected at least "
                                f"M={sc.offset + M}")
    ids = [t.id for t in sc.trains]
    if len(set(ids)) != len(ids):
        raise ScenarioError("trains", "duplicate train ids")
    for t in sc.trains:
        if t.track != sc.track:
            raise ScenarioError(f"trains.{t.id}", "train track differs from the scenario track")
    if not 0 < sc.damping <= 1:
        raise ScenarioError("damping", "must be in (0, 1]")
    if sc.c_min < 0:
        raise ScenarioError("c_min", "must be >= 0")


# --- JSON round trip ---------------------------------------------------------------------


def _num(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _profile_out(arr):
    arr = np.asarray(arr, dtype=float)
    if arr.size and np.all(arr == arr[0]):
        return _num(arr[0])
    return [_num(v) for v in arr]


def _agent_to_dict(a: DispatchableAgent) -> dict:
    d = {"id": a.id, "kind": a.kind.value, "length": a.M}
    for k in ("d_e", "d_th", "a", "b", "c", "y_min", "y_max"):
        d[k] = _profile_out(getattr(a, k))
    return d


def _trip_to_dict(t: TripDefinition) -> dict:
    tr = t.train
    spec = {k: getattr(tr, k) for k in ("mass", "p_max", "p_min", "a_min", "a_max", "v_max", "davis_a",
                                        "davis_b", "davis_c", "f_max_const", "f_min_const",
                                        "eta_traction", "eta_regen", "v_eps")}
    d = {"id": t.id, "spec": spec,
         "stations": [{"name": s.name, "position_m": s.position, "earliest_arrival_s": s.earliest_arrival,
                       "latest_departure_s": s.latest_departure, "dwell_s": s.dwell}
                      for s in t.timetable.stations],
         "grade": {"positions_m": t.grade.positions.tolist(), "angles_rad": t.grade.angles.tolist()}}
    if t.speed_limit is not None:
        d["speed_limit"] = {"positions_m": t.speed_limit.positions.tolist(),
                            "values_mps": t.speed_limit.values.tolist()}
    if t.min_speed is not None:
        d["min_speed"] = {"positions_m": t.min_speed.positions.tolist(),
                          "values_mps": t.min_speed.values.tolist()}
    return d


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "epoch_s": sc.epoch,
        "seed": sc.seed,
        "horizon": {"start_s": sc.horizon.start_time, "intervals": sc.horizon.num_intervals,
                    "interval_s": sc.horizon.interval_length},
        "track": [{"index": a.index, "name": a.name, "start_m": a.start, "end_m": a.end,
                   "agents": list(a.agent_ids), "passive": list(a.passive_profile_ids)} for a in sc.track],
        "agents": [_agent_to_dict(sc.agents[k]) for k in sorted(sc.agents)],
        "passive": {k: {"renewable_kw": _profile_out(p.renewable), "electric_kw": _profile_out(p.electric),
                        "thermal_kw": _profile_out(p.thermal), "length": len(p)}
                    for k, p in sorted(sc.passive.items())},
        "prices": [sc.prices[k].to_dict() for k in sorted(sc.prices)],
        "trains": [_trip_to_dict(t) for t in sc.trains],
        "solver": {"dt_s": sc.solver.dt, "n_starts": sc.solver.n_starts, "tol": sc.solver.tol,
                   "max_iter": sc.solver.max_iter, "price_smoothing_m": sc.solver.price_smoothing,
                   "jerk_weight": sc.solver.jerk_weight},
        "negotiation": {k: getattr(sc.steps, k) for k in
                        ("beta_y", "beta_lambda_e", "beta_lambda_th", "beta_mu", "tol_k_y", "tol_k_lambda",
                         "tol_j_y", "tol_j_lambda", "k_max", "j_max", "augmented")},
        "damping": sc.damping,
        "c_min": sc.c_min,
    }


class _Reader:
    """Field access with paths in error messages."""

    def __init__(self, data, path, base: Path | None):
        self.data, self.path, self.base = data, path, base

    def sub(self, key):
        return _Reader(self.get(key, required=True), f"{self.path}.{key}" if self.path else str(key), self.base)

    def items(self):
        if not isinstance(self.data, list):
            raise ScenarioError(self.path, "expected a list")
        return [_Reader(d, f"{self.path}[{i}]", self.base) for i, d in enumerate(self.data)]

    def get(self, key, default=None, required=False):
        if not isinstance(self.data, dict):
            raise ScenarioError(self.path, "expected an object")
        if key not in self.data:
            if required:
                raise ScenarioError(f"{self.path}.{key}" if self.path else key, "missing required field")
            return default
        return self.data[key]

    def number(self, key, default=None, required=True):
        v = self.get(key, default, required=required and default is None)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ScenarioError(f"{self.path}.{key}", f"expected a number, got {v!r}") from None

    def profile(self, key, length, default=None):
        v = self.get(key, default, required=default is None)
        where = f"{self.path}.{key}"
        if isinstance(v, dict) and "csv" in v:
            v = _csv_column(self.base, v["csv"], v.get("column", key), where)
        try:
            arr = np.array([float(z) for z in v], dtype=float) if isinstance(v, list) else \
                np.full(length, float(v))
        except (TypeError, ValueError):
            raise ScenarioError(where, "expected a number or list of numbers") from None
        if arr.shape != (length,):
            raise ScenarioError(where, f"profile has length {arr.size}, expected M={length}")
        return arr


def _csv_column(base: Path | None, rel, column, where):
    path = (base or Path(".")) / rel
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ScenarioError(where, f"cannot read {path}: {exc}") from None
    if rows and column not in rows[0]:
        raise ScenarioError(where, f"{path} has no column {column!r}")
    return [r[column] for r in rows]


def scenario_from_dict(data: dict, base: Path | None = None) -> Scenario:
    r = _Reader(data, "", base)
    version = r.get("schema_version", required=True)
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}")
    h = r.sub("horizon")
    try:
        horizon = HorizonGrid(int(h.number("intervals")), h.number("interval_s"), h.number("start_s", 0.0))
    except ScenarioError:
        raise
    except InvalidArgument as exc:
        raise ScenarioError("horizon", str(exc)) from None
    track = []
    for a in r.sub("track").items():
        try:
            track.append(AccDescriptor(int(a.number("index")), a.number("start_m"), a.number("end_m"),
                                       str(a.get("name", "")), tuple(a.get("agents", [])),
                                       tuple(a.get("passive", []))))
        except ScenarioError:
            raise
        except InvalidArgument as exc:
            raise ScenarioError(a.path, str(exc)) from None
    agents = {}
    for a in r.sub("agents").items():
        aid = str(a.get("id", required=True))
        n = int(a.number("length", horizon.num_intervals))
        kind = a.get("kind", required=True)
        try:
            kind = AgentKind(kind)
        except ValueError:
            raise ScenarioError(f"{a.path}.kind", f"unknown agent kind {kind!r}") from None
        b_default = 0.0 if kind is AgentKind.NETWORK else None
        try:
            agents[aid] = DispatchableAgent(
                aid, kind, a.profile("d_e", n), a.profile("d_th", n), a.profile("a", n, 0.0),
                a.profile("b", n, b_default), a.profile("c", n, 0.0), a.profile("y_min", n, 0.0),
                a.profile("y_max", n))
        except ScenarioError:
            raise
        except InvalidArgument as exc:
            raise ScenarioError(a.path, str(exc)) from None
    passive = {}
    praw = r.get("passive", {})
    for pid in praw:
        p = _Reader(praw[pid], f"passive.{pid}", base)
        n = int(p.number("length", horizon.num_intervals))
        try:
            passive[str(pid)] = PassiveProfiles(p.profile("renewable_kw", n, 0.0), p.profile("electric_kw", n, 0.0),
                                                p.profile("thermal_kw", n, 0.0))
        except ScenarioError:
            raise
        except InvalidArgument as exc:
            raise ScenarioError(p.path, str(exc)) from None
    prices = {}
    for p in r.sub("prices").items():
        acc = int(p.number("acc"))
        try:
            if "csv" in p.data:
                prices[acc] = load_price_series((base or Path(".")) / p.data["csv"], acc)
            else:
                prices[acc] = PriceSeries(acc, p.get("timestamps_s", required=True),
                                          p.get("price_usd_per_mwh", required=True))
        except ScenarioError:
            raise
        except InvalidArgument as exc:
            raise ScenarioError(p.path, str(exc)) from None
    trains = []
    if "trains" in data:
        trains = [_trip_from(t, tuple(track)) for t in r.sub("trains").items()]
    s = r.get("solver", {})
    solver = SolverConfig(dt=float(s.get("dt_s", 5.0)), n_starts=int(s.get("n_starts", 3)),
                          seed=int(r.get("seed", 0)), tol=float(s.get("tol", 1e-8)),
                          max_iter=int(s.get("max_iter", 3000)),
                          price_smoothing=float(s.get("price_smoothing_m", 100.0)),
                          jerk_weight=float(s.get("jerk_weight", 1e-3)))
    neg = dict(r.get("negotiation", {}))
    try:
        steps = StepSizes(**neg)
    except TypeError as exc:
        raise ScenarioError("negotiation", str(exc)) from None
    return Scenario(horizon, tuple(track), agents, passive, tuple(trains), prices,
                    epoch=float(r.get("epoch_s", horizon.start_time)), seed=int(r.get("seed", 0)),
                    solver=solver, steps=steps, damping=float(r.get("damping", 1.0)),
                    c_min=float(r.get("c_min", C_MIN)), name=str(r.get("name", "scenario")))


def _trip_from(t: _Reader, track) -> TripDefinition:
    spec = t.sub("spec")
    try:
        kw = {k: float(v) for k, v in spec.data.items() if v is not None}
        train = TrainSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(spec.path, str(exc)) from None
    stations = []
    for s in t.sub("stations").items():
        stations.append(Station(str(s.get("name", "")), s.number("position_m"), s.number("earliest_arrival_s"),
                                s.number("latest_departure_s"), s.number("dwell_s", 0.0)))
    try:
        tt = Timetable(tuple(stations))
        g = t.get("grade")
        if g is None:
            grade = GradeProfile.flat(track[0].start, track[-1].end)
        else:
            grade = GradeProfile(g["positions_m"], g["angles_rad"])
        lim = t.get("speed_limit")
        vmin = t.get("min_speed")
        return TripDefinition(str(t.get("id", required=True)), train, tt, grade, track,
                              None if lim is None else SpeedProfile(lim["positions_m"], lim["values_mps"]),
                              None if vmin is None else SpeedProfile(vmin["positions_m"], vmin["values_mps"]))
    except (InvalidArgument, KeyError) as exc:
        raise ScenarioError(t.path, str(exc)) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidArgument(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data, path.parent)


def write_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n", encoding="utf-8")


# --- Northeast Corridor case study -------------------------------------------------------

# approximate chainages (m) measured along the line from Route 128
NEC_STATIONS = (("University Park", 0.0), ("Providence", 52_000.0), ("New London", 152_000.0),
                ("New Haven", 232_000.0))
NEC_ACC_EDGES = (0.0, 30_000.0, 115_000.0, 185_000.0, 232_000.0)
NEC_START = 6 * 3600 + 15 * 60


def nec_timetable(depart: float = 6 * 3600 + 21 * 60) -> Timetable:
    """Three-leg Acela run; times in seconds after midnight."""
    arr_pvd = depart + 22 * 60
    dep_pvd = arr_pvd + 120
    arr_nlc = dep_pvd + 45 * 60
    dep_nlc = arr_nlc + 120
    arr_nhv = dep_nlc + 40 * 60
    (n0, x0), (n1, x1), (n2, x2), (n3, x3) = NEC_STATIONS
    return Timetable((Station(n0, x0, depart, depart),
                      Station(n1, x1, arr_pvd - 60, dep_pvd, 120.0),
                      Station(n2, x2, arr_nlc - 60, dep_nlc, 120.0),
                      Station(n3, x3, arr_nhv - 600, arr_nhv)))


def synthetic_nec_prices(start: float = NEC_START, hours: float = 4.0, step: float = 300.0,
                         seed: int = 0) -> dict[int, PriceSeries]:
    """Morning real-time prices for four zones with strong inter-zone spreads.

    Zones alternate between cheap and expensive (about 2.5x apart) with a
    mild ramp and a little noise, so the train has a reason to shift
    traction energy between zones.
    """
    rng = np.random.default_rng(seed)
    t = start + step * np.arange(int(hours * 3600 / step) + 1)
    hrs = (t - start) / 3600.0
    base = {1: 32.0, 2: 85.0, 3: 30.0, 4: 78.0}
    out = {}
    for n, b in base.items():
        ramp = 1.0 + 0.15 * np.sin(np.pi * hrs / 4.0)
        noise = 1.0 + 0.03 * rng.standard_normal(t.size)
        out[n] = PriceSeries(n, t, np.round(b * ramp * noise, 2))
    return out


def build_nec_scenario(prices: dict[int, PriceSeries] | None = None, *, intervals: int = 12,
                       interval_s: float = 900.0, start: float = NEC_START, dt: float = 5.0,
                       seed: int = 0, with_train: bool = True) -> Scenario:
    """Four-ACC Northeast Corridor case with the agent parameters of the study.

    Capacities are read as kW and linear costs as $/kWh. Network agents
    are bidirectional and take their price from ``prices``.
    """
    if prices is None:
        prices = synthetic_nec_prices(start, seed=seed)
    for n in (1, 2, 3, 4):
        if n not in prices:
            raise InvalidArgument(f"missing price series for ACC {n}")
    M = intervals
    h = interval_s / 3600.0

    def agent(aid, kind, d_e, d_th, b, cap, y_min=0.0):
        return DispatchableAgent.constant(aid, kind, M, d_e=d_e, d_th=d_th, b=b, c=C_MIN,
                                          y_max=cap * h, y_min=y_min * h)

    agents = {
        "H1": agent("H1", "heating", 0.0, 1.0, 0.0303, 10432.0),
        "C1": agent("C1", "cogeneration", 1.0, 1.02, 0.0629, 1550.0),
        "N1": agent("N1", "network-connection", 1.0, 0.0, 0.0, 10000.0, -10000.0),
        "H2": agent("H2", "heating", 0.0, 1.0, 0.0303, 20864.0),
        "C2": agent("C2", "cogeneration", 1.0, 2.0, 0.0818, 4560.0),
        "N2": agent("N2", "network-connection", 1.0, 0.0, 0.0, 10000.0, -10000.0),
        "N3": agent("N3", "network-connection", 1.0, 0.0, 0.0, 10000.0, -10000.0),
        "N4": agent("N4", "network-connection", 1.0, 0.0, 0.0, 10000.0, -10000.0),
    }
    k = np.arange(M)
    shape = 1.0 + 0.2 * np.sin(2 * np.pi * (k + 2) / 24.0)
    passive = {
        "P1": PassiveProfiles(np.zeros(M), -2500.0 * shape, -6000.0 * shape),
        "P2": PassiveProfiles(200.0 * np.ones(M), -4000.0 * shape, -9000.0 * shape),
        "P3": PassiveProfiles(np.zeros(M), -1500.0 * shape, np.zeros(M)),
        "P4": PassiveProfiles(np.zeros(M), -3000.0 * shape, np.zeros(M)),
    }
    names = ("Boston (ACC1)", "Providence (ACC2)", "New London (ACC3)", "New Haven (ACC4)")
    groups = (("H1", "C1", "N1"), ("H2", "C2", "N2"), ("N3",), ("N4",))
    track = tuple(AccDescriptor(n + 1, NEC_ACC_EDGES[n], NEC_ACC_EDGES[n + 1], names[n], groups[n], (f"P{n + 1}",))
                  for n in range(4))
    trains = ()
    if with_train:
        trains = (TripDefinition("acela-2150", TrainSpec.acela(), nec_timetable(),
                                 GradeProfile.flat(NEC_ACC_EDGES[0], NEC_ACC_EDGES[-1]), track),)
    return Scenario(HorizonGrid(M, interval_s, start), track, agents, passive, trains,
                    {n: prices[n] for n in (1, 2, 3, 4)}, epoch=start, seed=seed,
                    solver=SolverConfig(dt=dt, seed=seed), name="nec")
