"""Synthetic operations, CSV ingestion, temporal splits and snapshot grids."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import RailNetwork, build_network, spectral_embedding
from .schedule import (
    Itinerary,
    OperationalLog,
    ScheduleError,
    TrainRun,
    build_snapshot,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("train_id", "train_type", "station_id", "sequence_index", "role", "scheduled_time", "actual_time")
EPOCH_START = 1704067200  # 2024-01-01T00:00:00Z, a Monday
DAY = 86400
TRAIN_TYPES = ("intercity", "regional")


class DataError(ValueError):
    pass


def default_network() -> RailNetwork:
    """Three lines sharing a six-station trunk, each with two four-station branches."""
    trunk = [f"T{i}" for i in range(1, 7)]
    stations = list(trunk)
    edges = list(zip(trunk, trunk[1:]))
    lines = {}
    for name in "ABC":
        west = [f"{name}W{i}" for i in range(4, 0, -1)]
        east = [f"{name}E{i}" for i in range(1, 5)]
        stations += west + east
        route = west + trunk + east
        edges += list(zip(route, route[1:]))
        lines[name] = route
    edges = list(dict.fromkeys(edges))
    return spectral_embedding(build_network(stations, edges, lines))


@dataclass
class SyntheticConfig:
    network: RailNetwork = field(default_factory=default_network)
    n_days: int = 18
    n_trains_per_day: int = 40
    service_start: int = 6 * 3600
    service_end: int = 22 * 3600
    run_time_range: tuple[int, int] = (120, 240)
    run_times: dict | None = None  # (a, b) -> seconds; drawn from run_time_range if None
    dwell: dict = field(default_factory=lambda: {"intercity": 30, "regional": 60})
    incident_rate: float = 1.5  # per train-hour
    delay_mu: float = float(np.log(60.0))
    delay_sigma: float = 1.0
    min_headway: int = 120
    propagation: float = 1.0
    recovery_rate: float = 10.0
    line_offset: int = 240
    start: int = EPOCH_START
    seed: int = 0

    def __post_init__(self):
        if self.min_headway <= 0:
            raise DataError("min_headway must be positive")
        if not 0.0 <= self.propagation <= 1.0:
            raise DataError("propagation factor must lie in [0, 1]")
        if self.incident_rate < 0 or self.recovery_rate < 0:
            raise DataError("rates must be non-negative")
        if self.service_end <= self.service_start:
            raise DataError("empty service period")


def _edge_run_times(cfg: SyntheticConfig, rng) -> dict:
    if cfg.run_times is not None:
        out = {}
        for (a, b), t in cfg.run_times.items():
            out[(a, b)] = out[(b, a)] = int(t)
        return out
    out = {}
    lo, hi = cfg.run_time_range
    for a, b in sorted(cfg.network.edges):
        t = int(rng.integers(lo // 30, hi // 30 + 1)) * 30
        out[(a, b)] = out[(b, a)] = t
    return out


def build_timetable(cfg: SyntheticConfig, run_times: dict) -> list[Itinerary]:
    """Periodic services over every line, both directions, types alternating."""
    lines = list(cfg.network.lines.items())
    if not lines:
        raise DataError("network has no lines")
    services = [(name, d) for name, _ in lines for d in (0, 1)]
    # rounded to a whole number of departures per line-direction
    per_service = max(1, round(cfg.n_trains_per_day / len(services)))
    span = cfg.service_end - cfg.service_start
    headway = span // per_service
    out = []
    for day in range(cfg.n_days):
        base = cfg.start + day * DAY + cfg.service_start
        for k in range(per_service):
            for s_idx, (name, direction) in enumerate(services):
                route = list(cfg.network.lines[name])
                if direction:
                    route = route[::-1]
                line_no = s_idx // 2
                dep = base + k * headway + line_no * cfg.line_offset + direction * (headway // 2)
                ttype = TRAIN_TYPES[(k + line_no) % len(TRAIN_TYPES)]
                times = [dep]
                for a, b in zip(route, route[1:]):
                    dwell = cfg.dwell[ttype] if len(times) > 1 else 0
                    times.append(times[-1] + dwell + run_times[(a, b)])
                roles = ["departure"] + ["passage"] * (len(route) - 2) + ["arrival"]
                tid = f"{name}{direction}-{day:03d}-{k:03d}"
                out.append(Itinerary.from_stops(tid, ttype, route, roles, times, line=name))
    out.sort(key=lambda it: (it.departure_time, it.train_id))
    return out


def simulate_operations(cfg: SyntheticConfig, timetable, rng, incidents=None) -> OperationalLog:
    """Realise actual passage times with primary incidents and knock-on delays.

    Segments are processed in order of scheduled entry, so the predecessor of
    every train on a directed edge is the train scheduled to enter it just
    before. ``incidents`` optionally forces ``{(train_id, station_index): seconds}``
    primary delays (station_index 1 delays the departure itself).
    """
    by_id = {it.train_id: it for it in timetable}
    actual = {it.train_id: [None] * it.m for it in timetable}
    last_entry, last_arrival = {}, {}

    events = []
    for it in timetable:
        for j in range(1, it.m + 1):
            events.append((it.scheduled_times[j - 1 if j > 1 else 1], j, it.train_id))
    events.sort()

    for _, j, tid in events:
        it = by_id[tid]
        sched = it.scheduled_times
        if j == 1:
            t = float(sched[1])
            if incidents is not None:
                t += incidents.get((tid, 1), 0.0)
            elif cfg.incident_rate > 0 and rng.random() < cfg.incident_rate * 0.05:
                t += rng.lognormal(cfg.delay_mu, cfg.delay_sigma)
            actual[tid][0] = t
            continue

        prev = actual[tid][j - 2]
        a, b = it.stations[j - 1], it.stations[j]
        sched_run = sched[j] - sched[j - 1]
        dwell = cfg.dwell.get(it.train_type, 0) if j > 2 else 0
        run = sched_run - dwell
        depart = max(prev, float(sched[j - 1])) + dwell

        edge = (a, b)
        if edge in last_entry:
            need = last_entry[edge] + cfg.min_headway
            if depart < need:
                depart += cfg.propagation * (need - depart)
        last_entry[edge] = depart

        arrive = depart + run
        if incidents is not None:
            arrive += incidents.get((tid, j), 0.0)
        elif cfg.incident_rate > 0 and rng.random() < cfg.incident_rate * run / 3600.0:
            arrive += rng.lognormal(cfg.delay_mu, cfg.delay_sigma)
        if edge in last_arrival:
            need = last_arrival[edge] + cfg.min_headway
            if arrive < need:
                arrive += cfg.propagation * (need - arrive)
        last_arrival[edge] = arrive

        late = arrive - sched[j]
        if late > 0:
            arrive -= min(cfg.recovery_rate, late)
        actual[tid][j - 1] = arrive

    runs = {}
    for it in timetable:
        times = []
        for t in actual[it.train_id]:
            t = int(round(t))
            if times and t <= times[-1]:
                t = times[-1] + 1
            times.append(t)
        runs[it.train_id] = TrainRun(it, tuple(times))
    return OperationalLog(runs)


def generate_synthetic(cfg: SyntheticConfig):
    """Synthetic operational log plus the timetable it was realised from."""
    rng = np.random.default_rng(cfg.seed)
    run_times = _edge_run_times(cfg, rng)
    timetable = build_timetable(cfg, run_times)
    for it in timetable:
        if any(b <= a for a, b in zip(it.scheduled_times, it.scheduled_times[1:])):
            raise DataError(f"infeasible timetable for {it.train_id}")
    oplog = simulate_operations(cfg, timetable, rng)
    return oplog, {it.train_id: it for it in timetable}


# -- CSV ---------------------------------------------------------------------


def write_csv(oplog: OperationalLog, path, comments=(), include_actual: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in oplog.records():
            act = rec["actual_time"] if include_actual else None
            w.writerow([
                rec["train_id"], rec["train_type"], rec["station_id"], rec["sequence_index"],
                rec["role"], rec["scheduled_time"], "" if act is None else act,
            ])


def infer_line(network: RailNetwork | None, stations) -> str | None:
    if network is None:
        return None
    members = set(stations)
    for name, route in network.lines.items():
        if members <= set(route):
            return name
    return None


def _parse_int(text):
    text = text.strip()
    if not text:
        return None
    return int(float(text))


def ingest_csv(path, network: RailNetwork | None = None) -> OperationalLog:
    """Read an operations CSV, dropping every train with incoherent timestamps."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise DataError(f"{path}: malformed header {header}")

    grouped: dict[str, list] = {}
    bad: set[str] = set()
    for row in reader:
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            if row:
                bad.add(row[0])
                grouped.setdefault(row[0], [])
            continue
        tid = row[0].strip()
        grouped.setdefault(tid, [])
        try:
            grouped[tid].append({
                "train_type": row[1].strip(),
                "station_id": row[2].strip(),
                "sequence_index": _parse_int(row[3]),
                "role": row[4].strip(),
                "scheduled_time": _parse_int(row[5]),
                "actual_time": _parse_int(row[6]),
            })
        except ValueError:
            bad.add(tid)

    runs, discarded = {}, []
    for tid, recs in grouped.items():
        run = None if tid in bad else _build_run(tid, recs, network)
        if run is None:
            discarded.append(tid)
        else:
            runs[tid] = run

    total = len(grouped)
    frac = len(discarded) / total if total else 0.0
    oplog = OperationalLog(runs, tuple(discarded), frac)
    if total == 0:
        warnings.warn(f"{path}: no data rows", stacklevel=2)
    elif frac > 0.2:
        warnings.warn(f"{path}: discarded {frac:.1%} of trains (suspicious)", stacklevel=2)
    log.info("ingested %s: %d trains kept, %d discarded (%.2f%%)", path, len(runs), len(discarded), 100 * frac)
    return oplog


def _build_run(tid, recs, network):
    recs = sorted(recs, key=lambda r: (r["sequence_index"] is None, r["sequence_index"] or 0))
    if any(r["sequence_index"] is None or r["scheduled_time"] is None for r in recs):
        return None
    if [r["sequence_index"] for r in recs] != list(range(1, len(recs) + 1)):
        return None
    if len({r["train_type"] for r in recs}) != 1 or any(not r["station_id"] for r in recs):
        return None
    actual = [r["actual_time"] for r in recs]
    seen = [a for a in actual if a is not None]
    # observed times must form a prefix (no gaps) and increase strictly
    if actual[: len(seen)] != seen:
        return None
    if any(b <= a for a, b in zip(seen, seen[1:])):
        return None
    stations = [r["station_id"] for r in recs]
    if network is not None and any(s not in network.index for s in stations):
        return None
    try:
        it = Itinerary.from_stops(
            tid, recs[0]["train_type"], stations, [r["role"] for r in recs],
            [r["scheduled_time"] for r in recs], line=infer_line(network, stations),
        )
    except ScheduleError:
        return None
    return TrainRun(it, tuple(actual))


# -- splits and snapshot grids -----------------------------------------------


def temporal_split(oplog: OperationalLog, boundaries) -> tuple[OperationalLog, OperationalLog, OperationalLog]:
    """Assign each train by scheduled departure to [.., train_end), [train_end, val_end), [val_end, ..)."""
    if isinstance(boundaries, dict):
        train_end, val_end = boundaries["train_end"], boundaries["val_end"]
    else:
        train_end, val_end = boundaries
    if val_end < train_end:
        raise DataError("boundaries must be ordered (train_end <= val_end)")
    if len(oplog):
        deps = [r.itinerary.departure_time for r in oplog]
        lo, hi = min(deps), max(deps)
        for b in (train_end, val_end):
            if b < lo or b > hi:
                warnings.warn(f"split boundary {b} outside data range [{lo}, {hi}]", stacklevel=2)
    parts = ({}, {}, {})
    for tid, run in oplog.runs.items():
        dep = run.itinerary.departure_time
        k = 0 if dep < train_end else (1 if dep < val_end else 2)
        parts[k][tid] = run
    return tuple(OperationalLog(p) for p in parts)


@dataclass
class SnapshotDataset:
    """Kept grid clocks over a log; snapshots are materialised on demand."""

    log: OperationalLog
    clocks: np.ndarray
    grid_size: int
    dt: int = 30

    def __len__(self):
        return len(self.clocks)

    def snapshot(self, i: int):
        return build_snapshot(self.log, int(self.clocks[i]))

    def successor(self, i: int):
        return build_snapshot(self.log, int(self.clocks[i]) + self.dt)


def snapshot_grid(oplog: OperationalLog, dt: int = 30) -> np.ndarray:
    lo, hi = oplog.time_range()
    return np.arange(lo, hi, dt, dtype=np.int64)


def build_snapshot_dataset(oplog: OperationalLog, dt: int = 30, subsample_fraction: float = 0.1,
                           rng: np.random.Generator | None = None) -> SnapshotDataset:
    if not len(oplog):
        raise DataError("empty log")
    if not 0.0 < subsample_fraction <= 1.0:
        raise DataError("subsample_fraction must lie in (0, 1]")
    grid = snapshot_grid(oplog, dt)
    if subsample_fraction < 1.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = rng.random(len(grid)) < subsample_fraction
        clocks = grid[keep]
    else:
        clocks = grid
    return SnapshotDataset(oplog, clocks, len(grid), dt)
