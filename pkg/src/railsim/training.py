"""Regression, behavioural-cloning and drift-corrected imitation trainers."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import ACTIONS, DT, DynamicsError, apply_action, itinerary_distance
from .engine import rollout, worlds_from_log, world_uniforms
from .policy import MlpPolicy, TrainingError
from .schedule import TrainState

log = logging.getLogger(__name__)


class ReplayBuffer:
    """Bounded FIFO store of (features, synthetic action, weight) triples.

    Backed by ring arrays; every push carries a monotone sequence tag so
    eviction order can be audited.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self._x = np.zeros((capacity, dim))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._w = np.zeros(capacity)
        self._tag = np.zeros(capacity, dtype=np.int64)
        self._start = 0
        self._size = 0
        self._next_tag = 0

    def __len__(self):
        return self._size

    def push(self, x, a, w) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if not (len(x) == len(a) == len(w)):
            raise ValueError("features, actions and weights differ in length")
        if np.any(w <= 0) or np.any(w > 1):
            raise ValueError("weights must lie in (0, 1]")
        for i in range(0, len(x), self.capacity):
            self._push_block(x[i : i + self.capacity], a[i : i + self.capacity], w[i : i + self.capacity])
            assert self._size <= self.capacity

    def _push_block(self, x, a, w):
        n = len(x)
        end = self._start + self._size
        slots = np.arange(end, end + n) % self.capacity
        self._x[slots] = x
        self._a[slots] = a
        self._w[slots] = w
        self._tag[slots] = np.arange(self._next_tag, self._next_tag + n)
        self._next_tag += n
        overflow = max(0, self._size + n - self.capacity)
        self._start = (self._start + overflow) % self.capacity
        self._size = min(self.capacity, self._size + n)

    def _order(self):
        return (self._start + np.arange(self._size)) % self.capacity

    @property
    def features(self):
        return self._x[self._order()]

    @property
    def actions(self):
        return self._a[self._order()]

    @property
    def weights(self):
        return self._w[self._order()]

    @property
    def tags(self):
        """Sequence tags oldest first."""
        return self._tag[self._order()]


@dataclass
class SupervisedConfig:
    epochs: int = 160
    batch_size: int = 32
    lr: float = 1e-3
    patience_fraction: float = 0.25
    seed: int = 0


@dataclass
class DcilConfig:
    epochs: int = 20
    capacity: int = 30000
    samples_per_epoch: int = 10000
    trajectory_length: int = 5
    batch_size: int = 16
    lr: float = 5e-5
    alpha: float = 0.5
    beta: float = 1.0
    greedy: bool = False
    trajectories_per_batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.trajectory_length < 1:
            raise ValueError("trajectory_length must be >= 1")
        if self.samples_per_epoch > self.capacity:
            raise ValueError("samples_per_epoch must not exceed capacity")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")


# -- drift-corrected labels ----------------------------------------------------


def drift_weight(psi, alpha: float, beta: float):
    return 1.0 / (1.0 + alpha * np.power(psi, beta))


def synth_label(expert_next: TrainState, policy_current: TrainState, alpha: float, beta: float):
    """Corrective action towards the expert's next state and its drift weight."""
    if expert_next.train_id != policy_current.train_id:
        raise DynamicsError("mismatched trains")
    clock = policy_current.actual_times[-1]
    best, best_d = None, None
    for a in ACTIONS:
        d = itinerary_distance(expert_next, apply_action(policy_current, a, clock))
        if best_d is None or d < best_d:
            best, best_d = a, d
    psi = itinerary_distance(expert_next, policy_current)
    return best, float(drift_weight(psi, alpha, beta))


def synth_labels_array(expert_next_pos, pos, m, alpha: float, beta: float):
    """Vectorised :func:`synth_label` over position arrays."""
    cand = np.minimum(pos[:, None] + np.array(ACTIONS)[None, :], m[:, None])
    dist = np.abs(expert_next_pos[:, None] - cand)
    labels = np.argmin(dist, axis=1)  # first minimum = smallest action
    psi = np.abs(expert_next_pos - pos)
    return labels.astype(np.int64), drift_weight(psi.astype(float), alpha, beta)


# -- supervised trainers --------------------------------------------------------


def _fit_supervised(policy, x, y, x_val, y_val, cfg: SupervisedConfig, mask=None, mask_val=None, label=""):
    n = len(x)
    if n == 0:
        raise TrainingError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    patience = max(1, int(round(cfg.patience_fraction * cfg.epochs)))
    has_val = x_val is not None and len(x_val) > 0
    best_loss, best_params, since = np.inf, None, 0
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            m = None if mask is None else mask[idx]
            total += policy.train_step(x[idx], y[idx], None, cfg.lr, m) * len(idx)
        train_loss = total / n
        val_loss = policy.loss_and_grads(x_val, y_val, None, mask_val)[0] if has_val else train_loss
        history.append({"epoch": epoch, "loss": train_loss, "val_loss": val_loss,
                        "wall_time": time.perf_counter() - t0})
        log.info("%s epoch %d loss %.5f val %.5f", label, epoch, train_loss, val_loss)
        if val_loss < best_loss - 1e-12:
            best_loss, since = val_loss, 0
            best_params = ([w.copy() for w in policy.weights], [b.copy() for b in policy.biases])
        else:
            since += 1
            if since >= patience:
                break
    if best_params is not None:
        policy.weights, policy.biases = best_params
    policy.reset_optimizer()
    policy.history = history
    return policy


def bc_train(x, y, cfg: SupervisedConfig, hidden=(64, 128, 64), x_val=None, y_val=None,
             policy: MlpPolicy | None = None) -> MlpPolicy:
    """Behavioural cloning: cross-entropy against logged expert actions."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        raise TrainingError("empty dataset")
    if policy is None:
        policy = MlpPolicy((x.shape[1], *hidden, 3), "softmax", seed=cfg.seed)
        policy.set_standardization(x)
    return _fit_supervised(policy, x, np.asarray(y), x_val, y_val, cfg, label="bc")


def regression_train(x, y, mask, cfg: SupervisedConfig, hidden=(64, 128, 64), x_val=None, y_val=None,
                     mask_val=None, output_scale: float = 600.0) -> MlpPolicy:
    """Direct multi-station regression of delay changes with masked L2 loss."""
    x = np.asarray(x, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if len(x) == 0:
        raise TrainingError("empty dataset")
    if not mask.any(axis=1).all():
        raise TrainingError("sample with every target component masked")
    policy = MlpPolicy((x.shape[1], *hidden, y.shape[1]), "linear", seed=cfg.seed)
    policy.set_standardization(x)
    policy.output_scale = output_scale
    return _fit_supervised(policy, x, np.asarray(y, dtype=float), x_val, y_val, cfg, mask, mask_val,
                           label="regression")


# -- DCIL ----------------------------------------------------------------------


@dataclass
class Demonstrations:
    """Expert trajectories: logged windows of ``T + 1`` snapshots from anchor clocks."""

    encoder: object
    anchors: np.ndarray
    dt: int = DT

    def check(self, horizon: int):
        table = self.encoder.table
        if len(self.anchors) == 0:
            raise TrainingError("no demonstration anchors")
        lo = table.activation.min()
        hi = np.max(np.where(np.isfinite(table.final_arrival), table.final_arrival, -np.inf)) + 300
        ends = self.anchors + horizon * self.dt
        if np.any(self.anchors < lo) or np.any(ends > hi):
            raise TrainingError(f"demonstration shorter than T + 1 = {horizon + 1} snapshots")


def collect_drift_samples(policy, demos: Demonstrations, anchors, cfg: DcilConfig, seed_key, actor=None):
    """Roll out from each anchor and label every visited train state.

    Returns features, labels and weights ordered trajectory by trajectory,
    step by step. ``actor(t, batch)`` can replace policy sampling (tests).
    """
    enc = demos.encoder
    table = enc.table
    T = cfg.trajectory_length
    batch = worlds_from_log(table, anchors, T, demos.dt)
    n_w, s = batch.shape
    u = world_uniforms([(*seed_key, w) for w in range(n_w)], T, s)
    per_step = []

    def record(t, b, feats, probs):
        if feats is None:
            return
        w, sl = np.nonzero(b.active)
        rows, pos = b.rows[w, sl], b.pos[w, sl]
        m = table.m[rows]
        e_next = table.positions_at(b.clock[w] + demos.dt, rows)
        labels, weights = synth_labels_array(e_next, pos, m, cfg.alpha, cfg.beta)
        keep = pos < m
        per_step.append((w[keep], np.full(keep.sum(), t), sl[keep], feats[keep], labels[keep], weights[keep]))

    if actor is None:
        rollout(batch, policy, enc, T, u, greedy=cfg.greedy, on_step=record, dt=demos.dt)
    else:
        from .engine import step_worlds

        for t in range(T):
            if batch.active.any():
                feats = enc.encode(batch.rows, batch.pos, batch.actual, batch.clock, batch.active)
                record(t, batch, feats, None)
            step_worlds(batch, actor(t, batch), demos.dt)

    if not per_step:
        return np.zeros((0, enc.dim)), np.zeros(0, dtype=np.int64), np.zeros(0)
    w, t, sl, x, a, wt = (np.concatenate(parts) for parts in zip(*per_step))
    order = np.lexsort((sl, t, w))
    return x[order], a[order], wt[order]


def dcil_train(demos: Demonstrations, cfg: DcilConfig, policy: MlpPolicy, actor=None, buffer=None):
    """Drift-corrected imitation: alternate corrective-sample collection and buffer passes."""
    demos.check(cfg.trajectory_length)
    buffer = buffer if buffer is not None else ReplayBuffer(cfg.capacity, policy.layer_dims[0])
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        added, weights_added, round_no = 0, [], 0
        while added < cfg.samples_per_epoch:
            anchors = demos.anchors[rng.integers(0, len(demos.anchors), cfg.trajectories_per_batch)]
            x, a, w = collect_drift_samples(policy, demos, anchors, cfg, (cfg.seed, epoch, round_no), actor)
            round_no += 1
            take = min(len(x), cfg.samples_per_epoch - added)
            if take == 0:
                if round_no > 1000:
                    raise TrainingError("rollouts produce no trainable samples")
                continue
            buffer.push(x[:take], a[:take], w[:take])
            assert len(buffer) <= buffer.capacity
            added += take
            weights_added.append(w[:take])

        if len(buffer) == 0:
            raise TrainingError("empty buffer at update time")
        bx, ba, bw = buffer.features, buffer.actions, buffer.weights
        perm = rng.permutation(len(buffer))
        total = 0.0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            total += policy.train_step(bx[idx], ba[idx], bw[idx], cfg.lr) * len(idx)
        rec = {
            "epoch": epoch,
            "loss": total / len(perm),
            "buffer_size": len(buffer),
            "mean_weight": float(np.concatenate(weights_added).mean()),
            "wall_time": time.perf_counter() - t0,
        }
        history.append(rec)
        log.info("dcil epoch %d loss %.5f buffer %d mean_weight %.4f", epoch, rec["loss"],
                 rec["buffer_size"], rec["mean_weight"])
    policy.reset_optimizer()
    policy.history = history
    policy.buffer = buffer
    return policy
