"""Macroscopic train dynamics: discrete advances on a 30 s clock."""

from __future__ import annotations

from .schedule import PLACEHOLDER_WINDOW, Itinerary, Snapshot, TrainState

DT = 30
ACTIONS = (0, 1, 2)
MAX_ADVANCE = ACTIONS[-1]


class DynamicsError(ValueError):
    pass


def apply_action(state: TrainState, action: int, new_clock: int) -> TrainState:
    """Advance a train by ``action`` stations, stamping passed stations with ``new_clock``.

    Advances are clipped so the train never moves past its final station.
    """
    if action not in ACTIONS:
        raise DynamicsError(f"invalid action {action!r}")
    step = min(int(action), state.itinerary.m - state.position_index)
    if step == 0:
        return state
    return TrainState(
        state.itinerary,
        state.position_index + step,
        state.actual_times + (int(new_clock),) * step,
    )


def step_snapshot(snapshot: Snapshot, joint: dict, timetable: dict[str, Itinerary], dt: int = DT) -> Snapshot:
    """Apply one joint action and advance the clock by ``dt`` seconds.

    Trains past their post-arrival window are retired; trains whose
    pre-departure window opens by the new clock are injected at their
    placeholder unless already retired or beyond their scheduled window.
    """
    ids = set(snapshot.train_ids)
    missing = ids - set(joint)
    if missing:
        raise DynamicsError(f"joint action missing trains: {sorted(missing)}")
    extra = set(joint) - ids
    if extra:
        raise DynamicsError(f"joint action has unknown trains: {sorted(extra)}")

    new_clock = snapshot.clock + dt
    kept, retired = [], set(snapshot.retired)
    for st in snapshot.trains:
        nxt = apply_action(st, joint[st.train_id], new_clock)
        if nxt.finished and new_clock > nxt.actual_times[-1] + PLACEHOLDER_WINDOW:
            retired.add(nxt.train_id)
        else:
            kept.append(nxt)

    present = {t.train_id for t in kept}
    for tid, it in timetable.items():
        if tid in present or tid in retired:
            continue
        if it.activation_time <= new_clock <= it.scheduled_times[-1]:
            kept.append(TrainState.at_placeholder(it))

    return Snapshot(new_clock, tuple(kept), frozenset(retired))


def itinerary_distance(reference: TrainState, other: TrainState) -> int:
    """Number of stations separating two states of the same train."""
    if reference.train_id != other.train_id:
        raise DynamicsError(f"mismatched trains {reference.train_id!r} / {other.train_id!r}")
    return abs(reference.position_index - other.position_index)


def derive_expert_action(prev: TrainState, next: TrainState) -> int:
    if prev.train_id != next.train_id:
        raise DynamicsError(f"mismatched trains {prev.train_id!r} / {next.train_id!r}")
    advance = next.position_index - prev.position_index
    if advance < 0:
        raise DynamicsError(f"{prev.train_id}: negative advance {advance} between snapshots")
    return min(advance, MAX_ADVANCE)
