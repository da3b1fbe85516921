"""Per-train feature encoding and neighbourhood traffic summaries.

Encoding works on batches of "worlds": independent copies of the network
(e.g. Monte Carlo trajectories), each with a fixed set of train slots. The
object-level helpers :func:`encode_features` and :func:`neighborhood_features`
wrap the batch path for a single snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import EMBED_DIM, RailNetwork
from .schedule import ROLES, Snapshot, TrainTable

LAYOUT_VERSION = 1
PAST_SLOTS = 5
FUTURE_SLOTS = {"simulation": 5, "regression": 15}
RADII = (0.1, 0.3, 0.6, 1.0, 2.0)
TIME_SCALE = 3600.0
DELAY_SCALE = 600.0
DAY = 86400
# 1970-01-01 was a Thursday; shift so Monday is weekday 0
_EPOCH_WEEKDAY = 3


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationStats:
    train_types: tuple[str, ...]
    count_min: tuple[float, ...] | None = None
    count_max: tuple[float, ...] | None = None
    layout_version: int = LAYOUT_VERSION

    @property
    def fitted(self) -> bool:
        return self.count_min is not None and self.count_max is not None

    def normalize_counts(self, counts: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise FeatureError("normalization stats are not fitted")
        lo = np.asarray(self.count_min)
        span = np.asarray(self.count_max) - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (counts - lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "train_types": list(self.train_types),
            "count_min": None if self.count_min is None else list(self.count_min),
            "count_max": None if self.count_max is None else list(self.count_max),
            "layout_version": self.layout_version,
        }

    @classmethod
    def from_dict(cls, d) -> "NormalizationStats":
        return cls(
            tuple(d["train_types"]),
            None if d["count_min"] is None else tuple(float(x) for x in d["count_min"]),
            None if d["count_max"] is None else tuple(float(x) for x in d["count_max"]),
            int(d["layout_version"]),
        )


def fit_normalization(train_types, raw_counts: np.ndarray) -> NormalizationStats:
    """Freeze min/max neighbour-count statistics from a training population."""
    raw_counts = np.asarray(raw_counts, dtype=float).reshape(-1, len(RADII))
    if raw_counts.shape[0] == 0:
        raise FeatureError("no training rows to fit normalization on")
    return NormalizationStats(
        tuple(train_types),
        tuple(float(x) for x in raw_counts.min(axis=0)),
        tuple(float(x) for x in raw_counts.max(axis=0)),
    )


def feature_dim(n_types: int, mode: str) -> int:
    k = FUTURE_SLOTS[mode]
    n_roles = len(ROLES)
    past = PAST_SLOTS * (2 * EMBED_DIM + n_roles + 3)
    future = k * (2 * EMBED_DIM + n_roles + 2)
    return n_types + past + future + 4 + 2 * len(RADII)


class FeatureEncoder:
    """Fixed-layout encoder bound to a network, a train table and frozen stats."""

    def __init__(self, network: RailNetwork, table: TrainTable, stats: NormalizationStats, mode: str):
        if mode not in FUTURE_SLOTS:
            raise FeatureError(f"unknown mode {mode!r}")
        if network.station_embedding is None:
            raise FeatureError("network embeddings not computed")
        self.network = network
        self.table = table
        self.stats = stats
        self.mode = mode
        self.future = FUTURE_SLOTS[mode]
        self.n_types = len(stats.train_types)
        self.dim = feature_dim(self.n_types, mode)

        # index -1 (placeholder / no line) maps to the trailing zero row
        self.station_emb = np.vstack([network.embedding_matrix(), np.zeros(EMBED_DIM)])
        lines = [network.line_embedding[name] for name in network.lines]
        self.line_emb = np.vstack([*lines, np.zeros(EMBED_DIM)]) if lines else np.zeros((1, EMBED_DIM))

    # -- neighbourhood -----------------------------------------------------

    def current_embedding(self, rows, pos) -> np.ndarray:
        st = self.table.station[rows, pos]
        return self.station_emb[st]

    def raw_neighborhood(self, rows, pos, actual, active):
        """Raw neighbour counts and mean last delays, shapes (W, S, 5) each.

        ``rows``, ``pos`` and ``active`` are (W, S); ``actual`` is (W, S, width).
        """
        emb = self.current_embedding(rows, pos)
        diff = emb[:, :, None, :] - emb[:, None, :, :]
        dist = np.sqrt(np.einsum("wijk,wijk->wij", diff, diff))
        s = rows.shape[1]
        other = active[:, :, None] & active[:, None, :] & ~np.eye(s, dtype=bool)[None]
        last_delay = np.take_along_axis(actual, pos[..., None], axis=2)[..., 0] - self.table.sched[rows, pos]
        last_delay = np.where(active, last_delay, 0.0)

        counts = np.empty(rows.shape + (len(RADII),))
        means = np.empty_like(counts)
        for k, r in enumerate(RADII):
            ball = other & (dist <= r)
            c = ball.sum(axis=2)
            tot = np.einsum("wij,wj->wi", ball.astype(float), last_delay)
            counts[..., k] = c
            means[..., k] = np.where(c > 0, tot / np.maximum(c, 1), 0.0)
        return counts, means

    # -- full encoding -----------------------------------------------------

    def encode(self, rows, pos, actual, clock, active) -> np.ndarray:
        """Encode every active slot; returns (n_active, dim) in row-major slot order."""
        rows = np.asarray(rows)
        pos = np.asarray(pos)
        active = np.asarray(active, dtype=bool)
        clock = np.asarray(clock, dtype=float)
        counts, means = self.raw_neighborhood(rows, pos, actual, active)
        sel = np.nonzero(active)
        clk = np.broadcast_to(clock[:, None], rows.shape)[sel]
        return self._assemble(
            rows[sel], pos[sel], actual[sel], clk, self.stats.normalize_counts(counts[sel]), means[sel]
        )

    def _assemble(self, n, p, act, clk, norm_counts, mean_delays) -> np.ndarray:
        t = self.table
        R = n.shape[0]
        width = t.width
        m = t.m[n]

        past_j = p[:, None] - np.arange(PAST_SLOTS)[None, :]
        past_ok = past_j >= 1
        past_jc = np.clip(past_j, 0, width - 1)
        fut_j = p[:, None] + np.arange(1, self.future + 1)[None, :]
        fut_ok = fut_j <= (m + 1)[:, None]
        fut_jc = np.clip(fut_j, 0, width - 1)
        nn_p = np.broadcast_to(n[:, None], past_j.shape)
        nn_f = np.broadcast_to(n[:, None], fut_j.shape)

        def station_block(nn, jc, ok):
            st = np.where(ok, t.station[nn, jc], -1)
            return self.station_emb[st]

        def line_block(nn, jc, ok):
            real = ok & (t.station[nn, jc] >= 0)
            ln = np.where(real, t.line[nn], -1)
            return self.line_emb[ln]

        def role_block(nn, jc, ok):
            onehot = np.zeros(jc.shape + (len(ROLES),))
            r = t.role[nn, jc]
            np.put_along_axis(onehot, r[..., None], 1.0, axis=-1)
            return onehot * ok[..., None]

        parts = []
        type_oh = np.zeros((R, self.n_types))
        known = t.type[n] >= 0
        type_oh[np.flatnonzero(known), t.type[n][known]] = 1.0
        parts.append(type_oh)
        parts.append(station_block(nn_p, past_jc, past_ok).reshape(R, -1))
        parts.append(line_block(nn_p, past_jc, past_ok).reshape(R, -1))
        parts.append(station_block(nn_f, fut_jc, fut_ok).reshape(R, -1))
        parts.append(line_block(nn_f, fut_jc, fut_ok).reshape(R, -1))
        parts.append(role_block(nn_p, past_jc, past_ok).reshape(R, -1))
        parts.append(role_block(nn_f, fut_jc, fut_ok).reshape(R, -1))
        parts.append(past_ok.astype(float))
        parts.append(fut_ok.astype(float))

        sched_p = t.sched[nn_p, past_jc]
        sched_f = t.sched[nn_f, fut_jc]
        parts.append(np.where(past_ok, (sched_p - clk[:, None]) / TIME_SCALE, 0.0))
        parts.append(np.where(fut_ok, (sched_f - clk[:, None]) / TIME_SCALE, 0.0))
        act_p = np.take_along_axis(act, past_jc, axis=1)
        parts.append(np.where(past_ok, (act_p - sched_p) / DELAY_SCALE, 0.0))

        hour = 2 * np.pi * np.mod(clk, DAY) / DAY
        dow = 2 * np.pi * np.mod(np.floor_divide(clk, DAY) + _EPOCH_WEEKDAY, 7) / 7
        parts.append(np.stack([np.sin(hour), np.cos(hour), np.sin(dow), np.cos(dow)], axis=1))
        parts.append(norm_counts)
        parts.append(mean_delays / DELAY_SCALE)

        out = np.concatenate(parts, axis=1)
        assert out.shape[1] == self.dim, (out.shape, self.dim)
        return out


def snapshot_arrays(snapshot: Snapshot, table: TrainTable):
    """One-world (1, S) arrays for a snapshot whose trains are all in ``table``."""
    s = len(snapshot.trains)
    rows = np.array([[table.row[t.train_id] for t in snapshot.trains]], dtype=np.int64).reshape(1, s)
    pos = np.array([[t.position_index for t in snapshot.trains]], dtype=np.int64).reshape(1, s)
    actual = np.full((1, s, table.width), np.inf)
    for i, t in enumerate(snapshot.trains):
        actual[0, i, : len(t.actual_times)] = t.actual_times
    return rows, pos, actual, np.ones((1, s), dtype=bool)


def _snapshot_encoder(snapshot, network, norm, mode):
    table = TrainTable([t.itinerary for t in snapshot.trains], network, norm.train_types)
    return FeatureEncoder(network, table, norm, mode), table


def _slot_of(snapshot: Snapshot, train_id) -> int:
    try:
        return snapshot.train_ids.index(train_id)
    except ValueError:
        raise FeatureError(f"train {train_id!r} not active in snapshot") from None


def neighborhood_features(snapshot: Snapshot, train_id, network: RailNetwork, norm: NormalizationStats):
    """Five normalised neighbour counts then five mean neighbour delays (seconds)."""
    i = _slot_of(snapshot, train_id)
    if not norm.fitted:
        raise FeatureError("normalization stats are not fitted")
    enc, table = _snapshot_encoder(snapshot, network, norm, "simulation")
    rows, pos, actual, active = snapshot_arrays(snapshot, table)
    counts, means = enc.raw_neighborhood(rows, pos, actual, active)
    return np.concatenate([norm.normalize_counts(counts[0, i]), means[0, i]])


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout_version: int = LAYOUT_VERSION


def encode_features(snapshot: Snapshot, train_id, network: RailNetwork, mode: str, norm: NormalizationStats):
    i = _slot_of(snapshot, train_id)
    if not norm.fitted:
        raise FeatureError("normalization stats are not fitted")
    enc, table = _snapshot_encoder(snapshot, network, norm, mode)
    rows, pos, actual, active = snapshot_arrays(snapshot, table)
    values = enc.encode(rows, pos, actual, np.array([snapshot.clock]), active)[i]
    if not np.all(np.isfinite(values)):
        raise FeatureError(f"non-finite feature for train {train_id!r}")
    return FeatureVector(values)

