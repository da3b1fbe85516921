"""Itineraries, operational logs, per-train state and network snapshots.

Index conventions along an itinerary with ``m`` real stations:

* index 0 is the pre-departure placeholder, scheduled 300 s before departure;
* indices 1..m are the real stations;
* index m + 1 is the post-arrival placeholder, scheduled 300 s after arrival.

A train's ``position_index`` is the last index it has passed. It never
exceeds ``m``: a train at ``m`` has completed its run and sits out its
post-arrival window until it is retired from the snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ROLES = ("departure", "arrival", "passage", "placeholder")
ROLE_INDEX = {r: i for i, r in enumerate(ROLES)}
PLACEHOLDER_WINDOW = 300


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Itinerary:
    train_id: str
    train_type: str
    stations: tuple  # None at both placeholder slots
    roles: tuple[str, ...]
    scheduled_times: tuple[int, ...]
    line: str | None = None

    def __post_init__(self):
        n = len(self.stations)
        if n < 4:
            raise ScheduleError(f"{self.train_id}: itinerary needs at least two real stations")
        if len(self.roles) != n or len(self.scheduled_times) != n:
            raise ScheduleError(f"{self.train_id}: stations/roles/times length mismatch")
        if self.stations[0] is not None or self.stations[-1] is not None:
            raise ScheduleError(f"{self.train_id}: placeholder slots must hold no station")
        if self.roles[0] != "placeholder" or self.roles[-1] != "placeholder":
            raise ScheduleError(f"{self.train_id}: first/last roles must be placeholders")
        inner = self.roles[1:-1]
        if inner.count("departure") != 1 or inner.count("arrival") != 1:
            raise ScheduleError(f"{self.train_id}: need exactly one departure and one arrival")
        if any(r not in ROLE_INDEX for r in inner) or "placeholder" in inner:
            raise ScheduleError(f"{self.train_id}: bad role in {inner}")
        if any(b <= a for a, b in zip(self.scheduled_times, self.scheduled_times[1:])):
            raise ScheduleError(f"{self.train_id}: scheduled times must be strictly increasing")

    @classmethod
    def from_stops(cls, train_id, train_type, stations, roles, times, line=None) -> "Itinerary":
        """Build an itinerary from real stops, adding both placeholders."""
        times = [int(t) for t in times]
        return cls(
            train_id=str(train_id),
            train_type=str(train_type),
            stations=(None, *[str(s) for s in stations], None),
            roles=("placeholder", *roles, "placeholder"),
            scheduled_times=(
                times[0] - PLACEHOLDER_WINDOW,
                *times,
                times[-1] + PLACEHOLDER_WINDOW,
            ),
            line=line,
        )

    @property
    def m(self) -> int:
        return len(self.stations) - 2

    @property
    def departure_time(self) -> int:
        return self.scheduled_times[1]

    @property
    def activation_time(self) -> int:
        return self.scheduled_times[0]


@dataclass(frozen=True)
class TrainState:
    itinerary: Itinerary
    position_index: int
    actual_times: tuple[int, ...]

    def __post_init__(self):
        m = self.itinerary.m
        if not 0 <= self.position_index <= m:
            raise ScheduleError(f"{self.train_id}: position {self.position_index} outside [0, {m}]")
        if len(self.actual_times) != self.position_index + 1:
            raise ScheduleError(
                f"{self.train_id}: {len(self.actual_times)} actual times for position {self.position_index}"
            )
        if any(b < a for a, b in zip(self.actual_times, self.actual_times[1:])):
            raise ScheduleError(f"{self.train_id}: actual times must be non-decreasing")

    @classmethod
    def at_placeholder(cls, itinerary: Itinerary) -> "TrainState":
        return cls(itinerary, 0, (itinerary.activation_time,))

    @property
    def train_id(self) -> str:
        return self.itinerary.train_id

    @property
    def realized_delays(self) -> tuple[int, ...]:
        sched = self.itinerary.scheduled_times
        return tuple(a - sched[j] for j, a in enumerate(self.actual_times))

    @property
    def last_delay(self) -> int:
        return self.actual_times[-1] - self.itinerary.scheduled_times[self.position_index]

    @property
    def finished(self) -> bool:
        return self.position_index == self.itinerary.m


def delay_at(state: TrainState, index: int) -> int:
    """Realized delay (actual minus scheduled) at a passed itinerary index."""
    if index < 0 or index > state.position_index:
        raise ScheduleError(f"{state.train_id}: index {index} not yet passed")
    return state.actual_times[index] - state.itinerary.scheduled_times[index]


@dataclass(frozen=True)
class Snapshot:
    clock: int
    trains: tuple[TrainState, ...]
    retired: frozenset = frozenset()

    def __post_init__(self):
        ids = [t.train_id for t in self.trains]
        if len(set(ids)) != len(ids):
            raise ScheduleError("duplicate train id in snapshot")

    @cached_property
    def by_id(self) -> dict[str, TrainState]:
        return {t.train_id: t for t in self.trains}

    @property
    def train_ids(self) -> tuple[str, ...]:
        return tuple(t.train_id for t in self.trains)


@dataclass(frozen=True)
class TrainRun:
    """One train's itinerary with its realized passage times (None if unobserved)."""

    itinerary: Itinerary
    actual_times: tuple  # length m, real stations only

    def position_at(self, clock: int) -> int:
        pos = 0
        for t in self.actual_times:
            if t is None or t > clock:
                break
            pos += 1
        return pos

    @property
    def final_arrival(self):
        return self.actual_times[-1]

    def is_active(self, clock: int) -> bool:
        if clock < self.itinerary.activation_time:
            return False
        final = self.final_arrival
        return final is None or clock <= final + PLACEHOLDER_WINDOW

    def state_at(self, clock: int) -> TrainState:
        pos = self.position_at(clock)
        actual = (self.itinerary.activation_time, *self.actual_times[:pos])
        return TrainState(self.itinerary, pos, tuple(int(a) for a in actual))


@dataclass
class OperationalLog:
    """Realized operations keyed by train id, in insertion order."""

    runs: dict[str, TrainRun] = field(default_factory=dict)
    discarded: tuple[str, ...] = ()
    discard_fraction: float = 0.0

    def __len__(self):
        return len(self.runs)

    def __iter__(self):
        return iter(self.runs.values())

    @property
    def timetable(self) -> dict[str, Itinerary]:
        return {tid: run.itinerary for tid, run in self.runs.items()}

    def records(self):
        """Flat per-stop rows in CSV schema order."""
        for run in self.runs.values():
            it = run.itinerary
            for j in range(1, it.m + 1):
                yield {
                    "train_id": it.train_id,
                    "train_type": it.train_type,
                    "station_id": it.stations[j],
                    "sequence_index": j,
                    "role": it.roles[j],
                    "scheduled_time": it.scheduled_times[j],
                    "actual_time": run.actual_times[j - 1],
                }

    def subset(self, train_ids) -> "OperationalLog":
        keep = set(train_ids)
        return OperationalLog({t: r for t, r in self.runs.items() if t in keep})

    def merge(self, other: "OperationalLog") -> "OperationalLog":
        return OperationalLog({**self.runs, **other.runs})

    def time_range(self) -> tuple[int, int]:
        if not self.runs:
            raise ScheduleError("empty log")
        lo = min(r.itinerary.activation_time for r in self.runs.values())
        hi = max(
            (r.final_arrival if r.final_arrival is not None else r.itinerary.scheduled_times[-2])
            + PLACEHOLDER_WINDOW
            for r in self.runs.values()
        )
        return lo, hi


def build_snapshot(log: OperationalLog, clock: int) -> Snapshot:
    clock = int(clock)
    trains, retired = [], []
    for run in log:
        if run.is_active(clock):
            trains.append(run.state_at(clock))
        elif clock >= run.itinerary.activation_time:
            retired.append(run.itinerary.train_id)
    return Snapshot(clock, tuple(trains), frozenset(retired))


class TrainTable:
    """Padded array view of a set of itineraries (and optionally actual times).

    Column ``j`` of every 2-D array is itinerary index ``j``; columns beyond
    ``m + 1`` are padding.
    """

    def __init__(self, itineraries, network, train_types, actual=None):
        itineraries = list(itineraries)
        self.itineraries = itineraries
        self.train_ids = [it.train_id for it in itineraries]
        self.row = {tid: i for i, tid in enumerate(self.train_ids)}
        n = len(itineraries)
        width = max((len(it.stations) for it in itineraries), default=2)
        self.width = width

        st_index = network.index
        line_names = list(network.lines)
        line_index = {name: i for i, name in enumerate(line_names)}
        type_index = {t: i for i, t in enumerate(train_types)}

        self.m = np.array([it.m for it in itineraries], dtype=np.int64)
        self.station = np.full((n, width), -1, dtype=np.int64)
        self.role = np.full((n, width), ROLE_INDEX["placeholder"], dtype=np.int64)
        self.sched = np.zeros((n, width))
        self.line = np.full(n, -1, dtype=np.int64)
        self.type = np.full(n, -1, dtype=np.int64)
        for i, it in enumerate(itineraries):
            k = len(it.stations)
            self.station[i, :k] = [-1 if s is None else st_index[s] for s in it.stations]
            self.role[i, :k] = [ROLE_INDEX[r] for r in it.roles]
            self.sched[i, :k] = it.scheduled_times
            self.sched[i, k:] = it.scheduled_times[-1]
            if it.line is not None and it.line in line_index:
                self.line[i] = line_index[it.line]
            self.type[i] = type_index.get(it.train_type, -1)
        self.activation = self.sched[:, 0].copy()

        self.actual = None
        if actual is not None:
            self.actual = np.full((n, width), np.inf)
            for i, (it, times) in enumerate(zip(itineraries, actual)):
                self.actual[i, 0] = it.activation_time
                for j, t in enumerate(times, start=1):
                    if t is None:
                        break
                    self.actual[i, j] = t
            rows = np.arange(n)
            self.final_arrival = self.actual[rows, self.m]

    @classmethod
    def from_log(cls, log: OperationalLog, network, train_types) -> "TrainTable":
        runs = list(log)
        return cls([r.itinerary for r in runs], network, train_types, [r.actual_times for r in runs])

    def positions_at(self, clock, rows=None) -> np.ndarray:
        """Logged position index of each train at ``clock`` (requires actual times)."""
        act = self.actual if rows is None else self.actual[rows]
        m = self.m if rows is None else self.m[rows]
        clock = np.asarray(clock, dtype=float)
        if clock.ndim == 1:
            clock = clock[:, None]
        passed = act[:, 1:] <= clock
        cols = np.arange(1, act.shape[1])[None, :]
        passed &= cols <= m[:, None]
        # positions are the length of the leading run of passed stations
        return np.cumprod(passed, axis=1).sum(axis=1)

    def active_at(self, clock) -> np.ndarray:
        return (self.activation <= clock) & (clock <= self.final_arrival + PLACEHOLDER_WINDOW)
