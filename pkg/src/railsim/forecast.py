"""Monte Carlo delay forecasts, error metrics and calibration curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DT
from .engine import rollout, world_uniforms, worlds_from_log
from .policy import PolicyError
from .samples import CHUNK

HORIZON = 1800
N_TRAJ = 50
K_STATIONS = 15
BIN_WIDTH = 300
N_BINS = 6
LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class ForecastError(ValueError):
    pass


def n_rollout_steps(horizon: int = HORIZON, dt: int = DT) -> int:
    """Steps simulated for a horizon, with a 10 % margin."""
    return math.ceil(round(1.1 * horizon / dt, 9))


@dataclass
class ForecastEnsemble:
    """Rollout outcome for the trains present at each reference clock.

    Arrays are indexed (snapshot, trajectory, train, station slot); station
    slot ``i`` is itinerary index ``start_pos + i + 1``. ``delays`` is NaN
    where the trajectory never reached the station until
    :func:`extract_delays` fills it in.
    """

    reference_clock: np.ndarray  # (N,)
    rows: np.ndarray  # (N, S) table rows
    start_pos: np.ndarray  # (N, S)
    present: np.ndarray  # (N, S) train present at the reference clock
    station_valid: np.ndarray  # (N, S, K)
    delays: np.ndarray  # (N, R, S, K)
    arrivals: np.ndarray  # (N, R, S, K)
    reached: np.ndarray  # (N, R, S, K)
    last_delay: np.ndarray  # (N, R, S)
    last_clock: np.ndarray  # (N,)
    n_trajectories: int
    completed: bool = False
    meta: dict = field(default_factory=dict)


def monte_carlo_forecast(policy, encoder, clocks, n_traj: int = N_TRAJ, horizon: int = HORIZON, seed: int = 0,
                         snapshot_ids=None, clamp: bool = False, dt: int = DT, k: int = K_STATIONS):
    """Roll ``n_traj`` trajectories from each logged snapshot at ``clocks``.

    Trajectory ``r`` of snapshot ``i`` draws its uniforms from a generator
    keyed by ``(seed, snapshot_ids[i], r)``. Only the logged state up to each
    reference clock is read from the encoder's table.
    """
    if policy.head != "softmax":
        raise PolicyError("Monte Carlo forecasting needs a softmax-head policy")
    clocks = np.atleast_1d(np.asarray(clocks, dtype=float))
    ids = np.arange(len(clocks)) if snapshot_ids is None else np.asarray(snapshot_ids)
    n_steps = n_rollout_steps(horizon, dt)
    per = max(1, CHUNK // max(n_traj, 1))
    parts = [
        _forecast_chunk(policy, encoder, clocks[i : i + per], ids[i : i + per], n_traj, n_steps, seed, clamp, dt, k)
        for i in range(0, len(clocks), per)
    ]
    return _concat(parts, n_traj)


def _forecast_chunk(policy, encoder, clocks, ids, n_traj, n_steps, seed, clamp, dt, k):
    table = encoder.table
    base = worlds_from_log(table, clocks, n_steps, dt)
    n_snap, s = base.shape
    present = base.active.copy()
    start_pos = base.pos.copy()
    batch = base.repeat(n_traj)
    keys = [(int(seed), int(i), r) for i in ids for r in range(n_traj)]
    u = world_uniforms(keys, n_steps, s)
    rollout(batch, policy, encoder, n_steps, u, clamp=clamp, dt=dt)

    m = table.m[base.rows]
    j = start_pos[..., None] + np.arange(1, k + 1)
    station_valid = present[..., None] & (j <= m[..., None])
    jc = np.minimum(j, table.width - 1)
    sched = table.sched[base.rows[..., None], jc]  # (N, S, K)

    act = batch.actual.reshape(n_snap, n_traj, s, -1)
    arr = np.take_along_axis(act, np.broadcast_to(jc[:, None], (n_snap, n_traj, s, k)), axis=3)
    reached = np.isfinite(arr) & station_valid[:, None]
    delays = np.where(reached, arr - sched[:, None], np.nan)
    arrivals = np.where(reached, arr, np.nan)
    last = batch.last_delay().reshape(n_snap, n_traj, s)
    return ForecastEnsemble(
        reference_clock=clocks.copy(), rows=base.rows, start_pos=start_pos, present=present,
        station_valid=station_valid, delays=delays, arrivals=arrivals, reached=reached,
        last_delay=last, last_clock=batch.clock.reshape(n_snap, n_traj)[:, 0].copy(),
        n_trajectories=n_traj, meta={"sched": sched},
    )


def _concat(parts, n_traj):
    if len(parts) == 1:
        return parts[0]
    s = max(p.rows.shape[1] for p in parts)

    def pad(a, axis, fill):
        widths = [(0, 0)] * a.ndim
        widths[axis] = (0, s - a.shape[axis])
        return np.pad(a, widths, constant_values=fill)

    cat = lambda name, axis, fill: np.concatenate([pad(getattr(p, name), axis, fill) for p in parts])
    return ForecastEnsemble(
        reference_clock=np.concatenate([p.reference_clock for p in parts]),
        rows=cat("rows", 1, 0), start_pos=cat("start_pos", 1, 0), present=cat("present", 1, False),
        station_valid=cat("station_valid", 1, False), delays=cat("delays", 2, np.nan),
        arrivals=cat("arrivals", 2, np.nan), reached=cat("reached", 2, False),
        last_delay=cat("last_delay", 2, 0.0), last_clock=np.concatenate([p.last_clock for p in parts]),
        n_trajectories=n_traj,
        meta={"sched": np.concatenate([pad(p.meta["sched"], 1, 0.0) for p in parts])},
    )


def extract_delays(ens: ForecastEnsemble, k: int = K_STATIONS) -> ForecastEnsemble:
    """Fill unreached stations by copying the last known delay forward.

    The copied delay is enlarged so the implied arrival is not earlier than
    the last simulated clock. Stations beyond ``k`` are dropped.
    """
    k = min(k, ens.delays.shape[-1])
    sched = ens.meta["sched"][..., :k]  # (N, S, K)
    valid = ens.station_valid[..., :k]
    reached = ens.reached[..., :k]
    floor_delay = ens.last_clock[:, None, None, None] - sched[:, None]
    copied = np.maximum(ens.last_delay[..., None], floor_delay)
    delays = np.where(reached, ens.delays[..., :k], copied)
    delays = np.where(valid[:, None], delays, np.nan)
    return ForecastEnsemble(
        reference_clock=ens.reference_clock, rows=ens.rows, start_pos=ens.start_pos, present=ens.present,
        station_valid=valid, delays=delays, arrivals=np.where(valid[:, None], sched[:, None] + delays, np.nan),
        reached=reached, last_delay=ens.last_delay, last_clock=ens.last_clock,
        n_trajectories=ens.n_trajectories, completed=True, meta={"sched": sched},
    )


def point_forecast(samples, axis=None):
    """Median of the samples (mean of the two middle values for even counts)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0 or (axis is not None and samples.shape[axis] == 0):
        raise ForecastError("no samples")
    return np.median(samples, axis=axis)


# -- prediction records ---------------------------------------------------------


@dataclass
class Predictions:
    """Flat per-event records; every field is an array of equal length."""

    reference_clock: np.ndarray
    train_row: np.ndarray
    station_index: np.ndarray
    predicted: np.ndarray
    observed: np.ndarray
    observed_arrival: np.ndarray
    samples: np.ndarray | None = None  # (n, R) when from an ensemble

    def __len__(self):
        return len(self.predicted)


def ensemble_predictions(ens: ForecastEnsemble, table) -> Predictions:
    """Pair each completed ensemble cell with the logged outcome."""
    if not ens.completed:
        ens = extract_delays(ens)
    n, s, k = ens.station_valid.shape
    idx = np.nonzero(ens.station_valid)
    rows = ens.rows[idx[0], idx[1]]
    j = ens.start_pos[idx[0], idx[1]] + idx[2] + 1
    samples = ens.delays.transpose(0, 2, 3, 1)[idx]  # (n_events, R)
    obs_arr = table.actual[rows, j]
    return Predictions(
        reference_clock=ens.reference_clock[idx[0]], train_row=rows, station_index=j,
        predicted=point_forecast(samples, axis=1), observed=obs_arr - table.sched[rows, j],
        observed_arrival=obs_arr, samples=samples,
    )


def regression_predictions(policy, encoder, clocks, k: int = K_STATIONS) -> Predictions:
    """Direct forecasts: last known delay plus the predicted delay change."""
    if policy.head != "linear":
        raise PolicyError("regression forecasting needs a linear-head policy")
    table = encoder.table
    clocks = np.atleast_1d(np.asarray(clocks, dtype=float))
    out = []
    for i in range(0, len(clocks), CHUNK):
        b = worlds_from_log(table, clocks[i : i + CHUNK], 0)
        if not b.active.any():
            continue
        feats = encoder.encode(b.rows, b.pos, b.actual, b.clock, b.active)
        w, sl = np.nonzero(b.active)
        rows, pos = b.rows[w, sl], b.pos[w, sl]
        keep = pos < table.m[rows]
        w, rows, pos, feats = w[keep], rows[keep], pos[keep], feats[keep]
        if len(rows) == 0:
            continue
        delta = policy.forward(feats)[:, :k]
        last = table.actual[rows, pos] - table.sched[rows, pos]
        jj = pos[:, None] + np.arange(1, k + 1)
        ok = jj <= table.m[rows][:, None]
        r_i, c_i = np.nonzero(ok)
        j = jj[r_i, c_i]
        r = rows[r_i]
        obs_arr = table.actual[r, j]
        out.append(Predictions(
            reference_clock=b.clock[w[r_i]], train_row=r, station_index=j,
            predicted=last[r_i] + delta[r_i, c_i], observed=obs_arr - table.sched[r, j], observed_arrival=obs_arr,
        ))
    return concat_predictions(out)


def concat_predictions(parts) -> Predictions:
    if not parts:
        e = np.zeros(0)
        return Predictions(e, e.astype(np.int64), e.astype(np.int64), e, e, e)
    has_samples = all(p.samples is not None for p in parts)
    return Predictions(
        *(np.concatenate([getattr(p, f) for p in parts]) for f in
          ("reference_clock", "train_row", "station_index", "predicted", "observed", "observed_arrival")),
        samples=np.concatenate([p.samples for p in parts]) if has_samples else None,
    )


def horizon_filter(pred: Predictions, reference_clock=None, horizon: int = HORIZON) -> Predictions:
    ref = pred.reference_clock if reference_clock is None else reference_clock
    lead = pred.observed_arrival - ref
    keep = np.isfinite(lead) & (lead > 0) & (lead <= horizon)
    return Predictions(
        *(np.broadcast_to(getattr(pred, f), keep.shape)[keep] for f in
          ("reference_clock", "train_row", "station_index", "predicted", "observed", "observed_arrival")),
        samples=None if pred.samples is None else pred.samples[keep],
    )


# -- metrics ---------------------------------------------------------------------


@dataclass
class EvaluationReport:
    mae: float
    rmse: float
    mae_by_bin: tuple
    n_predictions: int
    n_by_bin: tuple = ()
    calibration: tuple = ()

    def __post_init__(self):
        assert self.mae >= 0 and self.rmse >= self.mae - 1e-9


def evaluate(pred: Predictions, reference_clock=None, horizon: int = HORIZON) -> EvaluationReport:
    """MAE/RMSE over events whose observed arrival lies in (ref, ref + horizon].

    Events are binned by observed lead time in 5-minute bins; empty bins
    report NaN.
    """
    kept = horizon_filter(pred, reference_clock, horizon)
    if len(kept) == 0:
        raise ForecastError("no events inside the horizon")
    ref = kept.reference_clock if reference_clock is None else reference_clock
    err = kept.predicted - kept.observed
    abs_err = np.abs(err)
    n_bins = math.ceil(horizon / BIN_WIDTH)
    bins = np.minimum(((kept.observed_arrival - ref) // BIN_WIDTH).astype(np.int64), n_bins - 1)
    by_bin, counts = [], []
    for b in range(n_bins):
        sel = bins == b
        counts.append(int(sel.sum()))
        by_bin.append(float(abs_err[sel].mean()) if sel.any() else float("nan"))
    calibration = ()
    if kept.samples is not None:
        calibration = tuple(calibration_curve(kept.samples, kept.observed))
    return EvaluationReport(
        mae=float(abs_err.mean()), rmse=float(np.sqrt(np.mean(err**2))), mae_by_bin=tuple(by_bin),
        n_predictions=len(kept), n_by_bin=tuple(counts), calibration=calibration,
    )


def calibration_curve(samples, observations, levels=LEVELS):
    """Empirical coverage of central percentile intervals at each nominal level.

    ``samples`` is (n_events, n_samples). Intervals are closed.
    """
    samples = np.asarray(samples, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if samples.ndim != 2 or samples.shape[1] < 2:
        raise ForecastError("need at least 2 samples per event")
    if len(obs) != len(samples) or len(obs) == 0:
        raise ForecastError("samples and observations do not line up")
    out = []
    for p in levels:
        lo = np.percentile(samples, 100 * (1 - p) / 2, axis=1)
        hi = np.percentile(samples, 100 * (1 + p) / 2, axis=1)
        out.append((float(p), float(np.mean((obs >= lo) & (obs <= hi)))))
    return out


# -- writers ---------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_report(report: EvaluationReport, path, header=None) -> None:
    lines = [f"{k}={v}" for k, v in sorted((header or {}).items())]
    lines += [f"mae={_fmt(report.mae)}", f"rmse={_fmt(report.rmse)}", f"n_predictions={report.n_predictions}"]
    for b, (v, n) in enumerate(zip(report.mae_by_bin, report.n_by_bin)):
        lines.append(f"mae_bin_{b}={_fmt(v)}")
        lines.append(f"n_bin_{b}={n}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_csv(report: EvaluationReport, path, header=None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in sorted((header or {}).items()):
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "bin", "value"])
        w.writerow(["mae", "all", _fmt(report.mae)])
        w.writerow(["rmse", "all", _fmt(report.rmse)])
        w.writerow(["n_predictions", "all", report.n_predictions])
        for b, v in enumerate(report.mae_by_bin):
            w.writerow(["mae", b, _fmt(v)])


def write_calibration(pairs, path, header=None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in sorted((header or {}).items()):
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nominal", "empirical"])
        for p, c in pairs:
            w.writerow([_fmt(p), _fmt(c)])
