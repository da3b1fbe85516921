import math

import numpy as np
import pytest

from railsim.features import (
    FeatureError,
    NormalizationStats,
    encode_features,
    feature_dim,
    fit_normalization,
    neighborhood_features,
)
from railsim.schedule import ROLES, build_snapshot

from conftest import T0, TYPES

RADII = (0.1, 0.3, 0.6, 1.0, 2.0)


def current_vec(net, state):
    s = state.itinerary.stations[state.position_index]
    return np.zeros(8) if s is None else net.station_embedding[s]


def oracle_neighborhood(snapshot, tid, net):
    """Exhaustive pairwise loop: raw counts and mean last delays per radius."""
    me = snapshot.by_id[tid]
    counts, means = [], []
    for r in RADII:
        ds = []
        for other in snapshot.trains:
            if other.train_id == tid:
                continue
            if np.linalg.norm(current_vec(net, other) - current_vec(net, me)) <= r:
                ds.append(other.last_delay)
        counts.append(len(ds))
        means.append(float(np.mean(ds)) if ds else 0.0)
    return np.array(counts, float), np.array(means)


def oracle_encode(snapshot, tid, net, stats, k):
    st = snapshot.by_id[tid]
    it = st.itinerary
    p, m, clock = st.position_index, it.m, snapshot.clock
    line = net.line_embedding[it.line]
    type_oh = [1.0 if t == it.train_type else 0.0 for t in stats.train_types]

    def role(j):
        return [1.0 if it.roles[j] == r else 0.0 for r in ROLES]

    ps, pl, pr, pv, pt, pd = [], [], [], [], [], []
    for j in range(p, p - 5, -1):
        if j >= 1:
            ps += list(net.station_embedding[it.stations[j]]); pl += list(line); pr += role(j)
            pv.append(1.0); pt.append((it.scheduled_times[j] - clock) / 3600)
            pd.append((st.actual_times[j] - it.scheduled_times[j]) / 600)
        else:
            ps += [0.0] * 8; pl += [0.0] * 8; pr += [0.0] * 4; pv.append(0.0); pt.append(0.0); pd.append(0.0)
    fs, fl, fr, fv, ft = [], [], [], [], []
    for j in range(p + 1, p + k + 1):
        if j <= m + 1:
            real = it.stations[j] is not None
            fs += list(net.station_embedding[it.stations[j]]) if real else [0.0] * 8
            fl += list(line) if real else [0.0] * 8
            fr += role(j); fv.append(1.0); ft.append((it.scheduled_times[j] - clock) / 3600)
        else:
            fs += [0.0] * 8; fl += [0.0] * 8; fr += [0.0] * 4; fv.append(0.0); ft.append(0.0)
    h = 2 * math.pi * (clock % 86400) / 86400
    day = (clock // 86400 + 3) % 7  # 1970-01-01 was a Thursday
    d = 2 * math.pi * day / 7
    counts, means = oracle_neighborhood(snapshot, tid, net)
    lo, hi = np.array(stats.count_min), np.array(stats.count_max)
    norm = np.clip((counts - lo) / (hi - lo), 0, 1)
    return np.concatenate([
        type_oh, ps, pl, fs, fl, pr, fr, pv, fv, pt, ft, pd,
        [math.sin(h), math.cos(h), math.sin(d), math.cos(d)], norm, means / 600,
    ])


@pytest.mark.parametrize("mode, k", [("simulation", 5), ("regression", 15)])
@pytest.mark.parametrize("offset", [-200, 130, 250, 700, 1500])
def test_encode_matches_oracle(small_log, net, unit_stats, mode, k, offset):
    snap = build_snapshot(small_log, T0 + offset)
    for tid in snap.train_ids:
        got = encode_features(snap, tid, net, mode, unit_stats).values
        want = oracle_encode(snap, tid, net, unit_stats, k)
        assert got.shape == (feature_dim(2, mode),)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_start_of_itinerary_padding(small_log, net, unit_stats):
    snap = build_snapshot(small_log, T0 - 200)
    v = encode_features(snap, "A", net, "simulation", unit_stats).values
    past_valid = slice(2 + 80 + 80 + 20 + 20, 2 + 80 + 80 + 20 + 20 + 5)
    np.testing.assert_array_equal(v[past_valid], 0.0)
    np.testing.assert_array_equal(v[2:42], 0.0)


def test_determinism_and_lengths(small_log, net, unit_stats):
    snap = build_snapshot(small_log, T0 + 400)
    a = encode_features(snap, "B", net, "simulation", unit_stats).values
    b = encode_features(snap, "B", net, "simulation", unit_stats).values
    assert a.tobytes() == b.tobytes()
    lens = {len(encode_features(snap, t, net, "simulation", unit_stats).values) for t in snap.train_ids}
    assert len(lens) == 1
    r = encode_features(snap, "B", net, "regression", unit_stats).values
    # 10 extra future slots of 8 + 8 embedding, 4 role, 1 validity, 1 time
    assert len(r) - len(a) == 10 * 22


def test_neighborhood_oracle(small_log, net, unit_stats):
    for offset in (0, 250, 600, 900):
        snap = build_snapshot(small_log, T0 + offset)
        for tid in snap.train_ids:
            counts, means = oracle_neighborhood(snap, tid, net)
            got = neighborhood_features(snap, tid, net, unit_stats)
            np.testing.assert_allclose(got[:5], np.clip(counts / 4, 0, 1))
            np.testing.assert_allclose(got[5:], means)
            assert np.all(np.diff(counts) >= 0)


def test_lone_train(net, unit_stats, small_log):
    snap = build_snapshot(small_log.subset(["A"]), T0 + 300)
    np.testing.assert_array_equal(neighborhood_features(snap, "A", net, unit_stats), 0.0)


def test_errors(small_log, net, unit_stats):
    snap = build_snapshot(small_log, T0 + 300)
    with pytest.raises(FeatureError):
        encode_features(snap, "nope", net, "simulation", unit_stats)
    with pytest.raises(FeatureError):
        encode_features(snap, "A", net, "simulation", NormalizationStats(TYPES))
    with pytest.raises(FeatureError):
        encode_features(snap, "A", net, "bogus", unit_stats)


def test_fit_normalization_clamps():
    stats = fit_normalization(TYPES, np.array([[0, 1, 2, 3, 4], [2, 3, 4, 5, 6]], float))
    assert stats.count_min == (0, 1, 2, 3, 4) and stats.count_max == (2, 3, 4, 5, 6)
    out = stats.normalize_counts(np.array([[-1, 2, 9, 4, 5]], float))
    np.testing.assert_allclose(out, [[0, 0.5, 1, 0.5, 0.5]])
    assert NormalizationStats.from_dict(stats.to_dict()) == stats
