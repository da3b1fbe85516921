"""Design matrices and labels built from logged snapshots."""

from __future__ import annotations

import numpy as np

from .dynamics import DT, MAX_ADVANCE
from .engine import worlds_from_log
from .features import FeatureEncoder, NormalizationStats, fit_normalization
from .schedule import TrainTable

CHUNK = 512


def _chunks(clocks):
    clocks = np.asarray(clocks)
    for i in range(0, len(clocks), CHUNK):
        yield clocks[i : i + CHUNK]


def fit_stats(network, table: TrainTable, clocks, train_types) -> NormalizationStats:
    """Min-max neighbour-count statistics over every active train in ``clocks``."""
    probe = FeatureEncoder(network, table, NormalizationStats(tuple(train_types), (0.0,) * 5, (1.0,) * 5),
                           "simulation")
    counts = []
    for chunk in _chunks(clocks):
        b = worlds_from_log(table, chunk, 0)
        c, _ = probe.raw_neighborhood(b.rows, b.pos, b.actual, b.active)
        counts.append(c[b.active])
    counts = np.concatenate(counts) if counts else np.zeros((0, 5))
    return fit_normalization(train_types, counts)


def expert_samples(encoder: FeatureEncoder, clocks, dt: int = DT):
    """Features and expert actions for every active, unfinished train.

    The expert action is the logged advance between ``clock`` and
    ``clock + dt``, capped at 2.
    """
    table = encoder.table
    xs, ys = [], []
    for chunk in _chunks(clocks):
        b = worlds_from_log(table, chunk, 0)
        if not b.active.any():
            continue
        feats = encoder.encode(b.rows, b.pos, b.actual, b.clock, b.active)
        w, s = np.nonzero(b.active)
        rows, pos = b.rows[w, s], b.pos[w, s]
        nxt = table.positions_at(b.clock[w] + dt, rows)
        keep = pos < table.m[rows]
        xs.append(feats[keep])
        ys.append(np.minimum(nxt - pos, MAX_ADVANCE)[keep])
    if not xs:
        return np.zeros((0, encoder.dim)), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


def regression_samples(encoder: FeatureEncoder, clocks, k: int = 15):
    """Features, delay-change targets (seconds) and masks for unfinished trains.

    Target component ``i`` is the delay at station ``pos + i + 1`` minus the
    last known delay; components past the itinerary end are masked.
    """
    table = encoder.table
    xs, ys, ms = [], [], []
    for chunk in _chunks(clocks):
        b = worlds_from_log(table, chunk, 0)
        if not b.active.any():
            continue
        feats = encoder.encode(b.rows, b.pos, b.actual, b.clock, b.active)
        w, s = np.nonzero(b.active)
        rows, pos = b.rows[w, s], b.pos[w, s]
        keep = pos < table.m[rows]
        rows, pos, feats = rows[keep], pos[keep], feats[keep]
        target, mask = delay_change_targets(table, rows, pos, k)
        ok = mask.any(axis=1)
        xs.append(feats[ok])
        ys.append(target[ok])
        ms.append(mask[ok])
    if not xs:
        return np.zeros((0, encoder.dim)), np.zeros((0, k)), np.zeros((0, k), dtype=bool)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ms)


def delay_change_targets(table: TrainTable, rows, pos, k: int):
    last = table.actual[rows, pos] - table.sched[rows, pos]
    j = pos[:, None] + np.arange(1, k + 1)[None, :]
    inside = j <= table.m[rows][:, None]
    jc = np.minimum(j, table.width - 1)
    d = table.actual[rows[:, None], jc] - table.sched[rows[:, None], jc]
    mask = inside & np.isfinite(d)
    target = np.where(mask, d - last[:, None], 0.0)
    return target, mask
