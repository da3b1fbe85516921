"""Batched rollouts over many independent copies ("worlds") of the network.

Every world owns a fixed set of train slots: the trains active at its start
clock plus the trains whose pre-departure window opens within the rollout.
The per-slot transition is the same as :func:`railsim.dynamics.step_snapshot`;
the test suite checks the two paths against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DT
from .policy import inverse_cdf, stall_clamp
from .schedule import PLACEHOLDER_WINDOW, TrainTable


@dataclass
class WorldBatch:
    table: TrainTable
    rows: np.ndarray  # (W, S) table row of each slot
    valid: np.ndarray  # (W, S) slot exists (False = padding)
    pos: np.ndarray  # (W, S)
    actual: np.ndarray  # (W, S, width) stamped passage times
    active: np.ndarray  # (W, S)
    retired: np.ndarray  # (W, S)
    clock: np.ndarray  # (W,)

    @property
    def shape(self):
        return self.rows.shape

    def copy(self) -> "WorldBatch":
        return WorldBatch(
            self.table, self.rows, self.valid, self.pos.copy(), self.actual.copy(),
            self.active.copy(), self.retired.copy(), self.clock.copy(),
        )

    def repeat(self, n: int) -> "WorldBatch":
        """Tile a batch ``n`` times along the world axis (world-major)."""
        rep = lambda a: np.repeat(a, n, axis=0)
        return WorldBatch(
            self.table, rep(self.rows), rep(self.valid), rep(self.pos), rep(self.actual),
            rep(self.active), rep(self.retired), rep(self.clock),
        )

    def last_delay(self) -> np.ndarray:
        t = self.table
        stamped = np.take_along_axis(self.actual, self.pos[..., None], axis=2)[..., 0]
        return stamped - t.sched[self.rows, self.pos]


def worlds_from_log(table: TrainTable, clocks, horizon_steps: int, dt: int = DT) -> WorldBatch:
    """One world per start clock, initialised from the logged actual times.

    Slots hold the trains active at the start clock followed by the trains
    that will be injected within ``horizon_steps`` steps.
    """
    if table.actual is None:
        raise ValueError("table has no actual times")
    clocks = np.asarray(clocks, dtype=float).reshape(-1)
    end = clocks + horizon_steps * dt
    slot_lists = []
    for c, e in zip(clocks, end):
        act = np.flatnonzero(table.active_at(c))
        later = np.flatnonzero((table.activation > c) & (table.activation <= e))
        slot_lists.append((act, later))

    n_w = len(clocks)
    s = max((len(a) + len(b) for a, b in slot_lists), default=0)
    s = max(s, 1)
    width = table.width
    rows = np.zeros((n_w, s), dtype=np.int64)
    valid = np.zeros((n_w, s), dtype=bool)
    pos = np.zeros((n_w, s), dtype=np.int64)
    actual = np.full((n_w, s, width), np.inf)
    active = np.zeros((n_w, s), dtype=bool)

    for w, (act, later) in enumerate(slot_lists):
        k = len(act)
        members = np.concatenate([act, later]).astype(np.int64)
        rows[w, : len(members)] = members
        valid[w, : len(members)] = True
        active[w, :k] = True
        if k:
            p = table.positions_at(clocks[w], act)
            pos[w, :k] = p
            cols = np.arange(width)[None, :]
            actual[w, :k] = np.where(cols <= p[:, None], table.actual[act], np.inf)
        actual[w, k : len(members), 0] = table.activation[later]

    return WorldBatch(table, rows, valid, pos, actual, active, np.zeros_like(valid), clocks.copy())


def step_worlds(batch: WorldBatch, actions: np.ndarray, dt: int = DT) -> np.ndarray:
    """Apply per-slot actions in place and advance every world's clock.

    Returns the effective (clipped) advance of each slot.
    """
    t = batch.table
    m = t.m[batch.rows]
    adv = np.where(batch.active, np.minimum(actions, m - batch.pos), 0)
    new_clock = batch.clock + dt
    for k in (1, 2):
        w_idx, s_idx = np.nonzero(adv >= k)
        batch.actual[w_idx, s_idx, batch.pos[w_idx, s_idx] + k] = new_clock[w_idx]
    batch.pos += adv
    batch.clock = new_clock

    final = np.take_along_axis(batch.actual, batch.pos[..., None], axis=2)[..., 0]
    leaving = batch.active & (batch.pos == m) & (new_clock[:, None] > final + PLACEHOLDER_WINDOW)
    batch.active &= ~leaving
    batch.retired |= leaving

    last_sched = t.sched[batch.rows, m + 1]
    entering = (
        batch.valid & ~batch.active & ~batch.retired
        & (t.activation[batch.rows] <= new_clock[:, None])
        & (new_clock[:, None] <= last_sched)
    )
    batch.active |= entering
    return adv


def world_uniforms(seed_keys, n_steps: int, n_slots: int) -> np.ndarray:
    """Per-world uniform draws, shape (W, n_steps, n_slots).

    Each world draws from its own generator keyed by ``seed_keys[w]`` (a
    tuple of non-negative ints), so results do not depend on batching or on
    how many slots the batch is padded to.
    """
    out = np.empty((len(seed_keys), n_steps, n_slots))
    for w, key in enumerate(seed_keys):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))
        # slot-major draws so a slot's stream does not depend on the padded width
        out[w] = rng.random((n_slots, n_steps)).T
    return out


def rollout(
    batch: WorldBatch,
    policy,
    encoder,
    n_steps: int,
    uniforms: np.ndarray | None = None,
    clamp: bool = False,
    greedy: bool = False,
    on_step=None,
    dt: int = DT,
) -> WorldBatch:
    """Roll every world forward ``n_steps`` steps under ``policy`` (in place).

    ``on_step(t, batch, features, probs)`` is called before each transition
    with the encoded features and action probabilities of the active slots
    (row-major slot order). With ``clamp`` the per-slot stall floor is applied.
    """
    floor = np.zeros(batch.shape)
    for t in range(n_steps):
        sel = np.nonzero(batch.active)
        actions = np.zeros(batch.shape, dtype=np.int64)
        if sel[0].size:
            feats = encoder.encode(batch.rows, batch.pos, batch.actual, batch.clock, batch.active)
            probs = policy.forward(feats)
            if clamp:
                raw = probs[:, 1]
                probs = stall_clamp(probs, floor[sel])
                floor[sel] = np.maximum(floor[sel], raw)
            if on_step is not None:
                on_step(t, batch, feats, probs)
            if greedy:
                chosen = np.argmax(probs, axis=1)
            else:
                chosen = inverse_cdf(probs, uniforms[sel[0], t, sel[1]])
            actions[sel] = chosen
        elif on_step is not None:
            on_step(t, batch, None, None)
        adv = step_worlds(batch, actions, dt)
        floor[adv > 0] = 0.0
    return batch
