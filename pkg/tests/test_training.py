import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from railsim.dynamics import derive_expert_action
from railsim.engine import worlds_from_log
from railsim.policy import MlpPolicy, TrainingError
from railsim.samples import delay_change_targets, expert_samples, regression_samples
from railsim.schedule import TrainState
from railsim.training import (
    DcilConfig,
    Demonstrations,
    ReplayBuffer,
    SupervisedConfig,
    bc_train,
    collect_drift_samples,
    dcil_train,
    drift_weight,
    regression_train,
    synth_label,
    synth_labels_array,
)

from conftest import T0, itinerary

STATIONS = [f"S{i}" for i in range(1, 11)]


def state(it, pos):
    return TrainState(it, pos, tuple([it.activation_time] + [T0 + 10 * j for j in range(1, pos + 1)]))


def piecewise(delta):
    return 0 if delta <= 0 else (1 if delta == 1 else 2)


# -- replay buffer -------------------------------------------------------------


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(10, 2)
    x = np.arange(30, dtype=float).reshape(15, 2)
    buf.push(x, np.zeros(15, int), np.ones(15))
    assert len(buf) == 10
    np.testing.assert_array_equal(buf.tags, np.arange(5, 15))
    np.testing.assert_array_equal(buf.features, x[5:])


@settings(max_examples=50, deadline=None)
@given(cap=st.integers(1, 40), sizes=st.lists(st.integers(1, 60), min_size=1, max_size=20))
def test_buffer_random_pushes(cap, sizes):
    buf = ReplayBuffer(cap, 1)
    total = 0
    for n in sizes:
        buf.push(np.arange(total, total + n, dtype=float)[:, None], np.zeros(n, int), np.ones(n))
        total += n
        assert len(buf) == min(cap, total)
        np.testing.assert_array_equal(buf.tags, np.arange(total - len(buf), total))
        np.testing.assert_array_equal(buf.features[:, 0], buf.tags)


def test_buffer_rejects_bad_weights():
    buf = ReplayBuffer(4, 1)
    with pytest.raises(ValueError):
        buf.push(np.zeros((1, 1)), [0], [0.0])
    with pytest.raises(ValueError):
        buf.push(np.zeros((2, 1)), [0], [1.0])


# -- synthetic labels ------------------------------------------------------------


def test_synth_label_examples():
    it = itinerary("X", STATIONS, T0)
    a, w = synth_label(state(it, 4), state(it, 4), 0.5, 1.0)
    assert (a, w) == (0, 1.0)
    a, _ = synth_label(state(it, 5), state(it, 4), 0.5, 1.0)
    assert a == 1
    assert drift_weight(2, 0.5, 2) == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        synth_label(state(it, 1), state(itinerary("Y", STATIONS, T0), 1), 0.5, 1.0)


def test_synth_label_exhaustive():
    for m in range(2, 11):
        it = itinerary("X", STATIONS[:m], T0)
        for e in range(m + 1):
            for p in range(m + 1):
                a, w = synth_label(state(it, e), state(it, p), 0.5, 1.0)
                assert a == piecewise(e - p)
                assert w == 1.0 / (1.0 + 0.5 * abs(e - p))
                la, lw = synth_labels_array(np.array([e]), np.array([p]), np.array([m]), 0.5, 1.0)
                assert (la[0], lw[0]) == (a, w)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.01, 10), beta=st.floats(1, 4), psi=st.integers(0, 20))
def test_weight_monotone(alpha, beta, psi):
    assert drift_weight(0, alpha, beta) == 1.0
    assert drift_weight(psi + 1, alpha, beta) < drift_weight(psi, alpha, beta) <= 1.0


def test_dcil_config_validation():
    with pytest.raises(ValueError):
        DcilConfig(trajectory_length=0)
    with pytest.raises(ValueError):
        DcilConfig(samples_per_epoch=10, capacity=5)
    with pytest.raises(ValueError):
        DcilConfig(alpha=0)
    with pytest.raises(ValueError):
        DcilConfig(beta=0.5)


# -- behavioural cloning -----------------------------------------------------------


def test_bc_saturates_on_constant_labels():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 6))
    pol = bc_train(x, np.ones(200, int), SupervisedConfig(epochs=150, batch_size=32), hidden=(16,))
    assert pol.forward(x)[:, 1].min() > 0.9


def test_bc_deterministic_and_descends(synth):
    x, y = expert_samples(synth.sim, synth.clocks)
    cfg = SupervisedConfig(epochs=2, seed=3)
    a = bc_train(x, y, cfg, hidden=(8,))
    b = bc_train(x, y, cfg, hidden=(8,))
    for p, q in zip(a.params, b.params):
        assert p.tobytes() == q.tobytes()
    pol = MlpPolicy((x.shape[1], 8, 3), seed=0)
    pol.set_standardization(x)
    before = pol.loss_and_grads(x[:32], y[:32])[0]
    pol.train_step(x[:32], y[:32], lr=1e-3)
    assert pol.loss_and_grads(x[:32], y[:32])[0] < before


def test_bc_empty_dataset():
    with pytest.raises(TrainingError):
        bc_train(np.zeros((0, 4)), np.zeros(0, int), SupervisedConfig())


def test_expert_labels_match_snapshot_pairs(synth):
    from railsim.schedule import build_snapshot

    clocks = synth.clocks[::40]
    x, y = expert_samples(synth.sim, clocks)
    want = []
    for c in clocks:
        prev, nxt = build_snapshot(synth.log, int(c)), build_snapshot(synth.log, int(c) + 30)
        for t in sorted(prev.trains, key=lambda s: synth.table.row[s.train_id]):
            if t.finished:
                continue
            want.append(derive_expert_action(t, synth.log.runs[t.train_id].state_at(int(c) + 30)))
    np.testing.assert_array_equal(y, want)


# -- DCIL -------------------------------------------------------------------------


def expert_actor(table, dt=30):
    def act(t, batch):
        clocks = np.repeat(batch.clock + dt, batch.shape[1])
        nxt = table.positions_at(clocks, batch.rows.reshape(-1))
        return np.minimum(nxt.reshape(batch.shape) - batch.pos, 2).clip(0)
    return act


def anchor_clocks(synth, n=60):
    ok = synth.clocks[(synth.clocks + 5 * 30) < synth.grid[-1]]
    return ok[:: max(1, len(ok) // n)]


def test_dcil_perfect_mimic_labels(synth):
    anchors = anchor_clocks(synth)
    demos = Demonstrations(synth.sim, anchors)
    cfg = DcilConfig(trajectory_length=5, alpha=0.5, beta=1.0)
    pol = MlpPolicy((synth.sim.dim, 4, 3))
    x, a, w = collect_drift_samples(pol, demos, anchors, cfg, (0, 0, 0), actor=expert_actor(synth.table))
    assert len(a) > 0
    # along the expert path psi equals the expert advance, so w = 1 / (1 + alpha * advance)
    psi = np.rint((1 / w - 1) / 0.5).astype(int)
    np.testing.assert_array_equal(a, np.minimum(psi, 2))
    np.testing.assert_allclose(w[a == 0], 1.0)


def test_dcil_t1_reduces_to_bc_samples(synth):
    anchors = anchor_clocks(synth)
    demos = Demonstrations(synth.sim, anchors)
    cfg = DcilConfig(trajectory_length=1)
    pol = MlpPolicy((synth.sim.dim, 4, 3))
    x, a, w = collect_drift_samples(pol, demos, anchors, cfg, (0, 0, 0), actor=expert_actor(synth.table))
    xe, ye = expert_samples(synth.sim, anchors)
    np.testing.assert_array_equal(x, xe)
    np.testing.assert_array_equal(a, ye)


def test_dcil_fills_buffer_and_logs(synth):
    anchors = anchor_clocks(synth)
    pol = MlpPolicy((synth.sim.dim, 8, 3), seed=1)
    pol.set_standardization(expert_samples(synth.sim, anchors)[0])
    cfg = DcilConfig(epochs=2, capacity=300, samples_per_epoch=300, trajectory_length=3, batch_size=16,
                     trajectories_per_batch=16, seed=5)
    out = dcil_train(Demonstrations(synth.sim, anchors), cfg, pol)
    assert len(out.buffer) == 300
    assert [h["buffer_size"] for h in out.history] == [300, 300]
    assert all(0 < h["mean_weight"] <= 1 for h in out.history)
    assert set(out.history[0]) == {"epoch", "loss", "buffer_size", "mean_weight", "wall_time"}


def test_dcil_deterministic(synth):
    anchors = anchor_clocks(synth)
    cfg = DcilConfig(epochs=1, capacity=200, samples_per_epoch=100, trajectory_length=2,
                     trajectories_per_batch=8, seed=2)

    def run():
        pol = MlpPolicy((synth.sim.dim, 8, 3), seed=1)
        return dcil_train(Demonstrations(synth.sim, anchors), cfg, pol)

    a, b = run(), run()
    for p, q in zip(a.params, b.params):
        assert p.tobytes() == q.tobytes()


def test_dcil_short_demos(synth):
    late = np.array([synth.grid[-1]])
    with pytest.raises(TrainingError, match="shorter"):
        dcil_train(Demonstrations(synth.sim, late), DcilConfig(epochs=1), MlpPolicy((synth.sim.dim, 4, 3)))
    with pytest.raises(TrainingError):
        dcil_train(Demonstrations(synth.sim, np.array([])), DcilConfig(epochs=1), MlpPolicy((synth.sim.dim, 4, 3)))


# -- regression --------------------------------------------------------------------


def test_regression_targets_and_recovery(synth):
    t = synth.table
    clock = synth.clocks[len(synth.clocks) // 2]
    b = worlds_from_log(t, [clock], 0)
    rows, pos = b.rows[b.active], b.pos[b.active]
    keep = pos < t.m[rows]
    rows, pos = rows[keep], pos[keep]
    target, mask = delay_change_targets(t, rows, pos, 15)
    for r, p, tg, mk in zip(rows, pos, target, mask):
        run = synth.log.runs[t.train_ids[r]]
        it = run.itinerary
        last = (it.activation_time if p == 0 else run.actual_times[p - 1]) - it.scheduled_times[p]
        n = min(15, it.m - p)
        assert mk.sum() == n and not mk[n:].any()
        for i in range(n):
            j = p + i + 1
            # absolute delay = predicted change + last known delay
            assert tg[i] + last == run.actual_times[j - 1] - it.scheduled_times[j]


def test_regression_train_runs(synth):
    x, y, m = regression_samples(synth.reg, synth.clocks)
    pol = regression_train(x, y, m, SupervisedConfig(epochs=2, lr=1e-4), hidden=(8,))
    assert pol.head == "linear" and pol.layer_dims[-1] == 15 and pol.output_scale == 600.0
    bad = m.copy()
    bad[0] = False
    with pytest.raises(TrainingError):
        regression_train(x, y, bad, SupervisedConfig(epochs=1), hidden=(8,))
