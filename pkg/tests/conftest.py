import numpy as np
import pytest

from railsim.features import NormalizationStats
from railsim.network import build_network, spectral_embedding
from railsim.schedule import Itinerary, OperationalLog, TrainRun

TYPES = ("intercity", "regional")
T0 = 1_704_096_000  # 2024-01-01 08:00 UTC


def path_network(n=8, line="L"):
    stations = [f"S{i}" for i in range(1, n + 1)]
    edges = list(zip(stations, stations[1:]))
    return spectral_embedding(build_network(stations, edges, {line: stations}))


def itinerary(tid, stations, dep, run=120, ttype="regional", line="L"):
    times = [dep + run * i for i in range(len(stations))]
    roles = ["departure"] + ["passage"] * (len(stations) - 2) + ["arrival"]
    return Itinerary.from_stops(tid, ttype, stations, roles, times, line=line)


def run_with_delays(it, delays):
    """TrainRun whose real stops are late by ``delays`` (None = unobserved)."""
    actual = []
    for j, d in enumerate(delays, start=1):
        actual.append(None if d is None else it.scheduled_times[j] + d)
    return TrainRun(it, tuple(actual))


def make_log(runs):
    return OperationalLog({r.itinerary.train_id: r for r in runs})


class FixedPolicy:
    """Softmax-head stand-in returning one distribution for every input."""

    head = "softmax"

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def forward(self, x):
        return np.tile(self.probs, (len(x), 1))


@pytest.fixture
def net():
    return path_network()


@pytest.fixture
def unit_stats():
    return NormalizationStats(TYPES, (0.0,) * 5, (4.0,) * 5)


@pytest.fixture
def small_log(net):
    """Three trains on the path network with a mix of delays."""
    st = list(net.stations)
    a = itinerary("A", st, T0, ttype="intercity")
    b = itinerary("B", st[:5], T0 + 240)
    c = itinerary("C", st[::-1], T0 + 60)
    return make_log([
        run_with_delays(a, [0, 30, 60, 60, 40, 40, 30, 30]),
        run_with_delays(b, [0, 0, 90, 120, 100]),
        run_with_delays(c, [10, 10, 10, 0, 0, 0, 0, 0]),
    ])


@pytest.fixture(scope="session")
def synth():
    """Two synthetic days with encoders over the whole log."""
    from types import SimpleNamespace

    from railsim.data import TRAIN_TYPES, SyntheticConfig, generate_synthetic, snapshot_grid
    from railsim.features import FeatureEncoder
    from railsim.samples import fit_stats
    from railsim.schedule import TrainTable

    cfg = SyntheticConfig(n_days=2, n_trains_per_day=24, seed=1)
    oplog, timetable = generate_synthetic(cfg)
    table = TrainTable.from_log(oplog, cfg.network, TRAIN_TYPES)
    grid = snapshot_grid(oplog)
    clocks = grid[::7]
    stats = fit_stats(cfg.network, table, clocks, TRAIN_TYPES)
    return SimpleNamespace(
        cfg=cfg, log=oplog, timetable=timetable, table=table, network=cfg.network, grid=grid, clocks=clocks,
        stats=stats, sim=FeatureEncoder(cfg.network, table, stats, "simulation"),
        reg=FeatureEncoder(cfg.network, table, stats, "regression"),
    )
