"""Acceptance criteria 1-10, each printing one PASS/FAIL line."""

import time

import numpy as np
import pytest

from railsim import config as rc
from railsim.cli import main
from railsim.experiment import run_experiment
from railsim.forecast import calibration_curve, extract_delays, monte_carlo_forecast, n_rollout_steps
from railsim.network import build_network, jacobi_eigh, normalized_laplacian, spectral_basis, spectral_embedding
from railsim.policy import MlpPolicy
from railsim.schedule import build_snapshot
from railsim.dynamics import step_snapshot
from railsim.training import ReplayBuffer, drift_weight, synth_label

from conftest import T0, FixedPolicy, itinerary
from test_dynamics import check_dynamics_case
from test_forecast import stalled_setup
from test_network import random_connected
from test_policy import max_grad_error
from test_training import piecewise, state


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_gradient_oracle(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for b in range(20):
        rng = np.random.default_rng(100 + b)
        pol = MlpPolicy((20, 8, 3), seed=b)
        for bias in pol.biases:
            bias[:] = rng.normal(scale=0.1, size=bias.shape)
        x, y = rng.normal(size=(16, 20)), rng.integers(0, 3, 16)
        worst = max(worst, max_grad_error(pol, x, y, rng.uniform(0.1, 1.0, 16)))
    dt = time.perf_counter() - t0
    verdict(1, worst < 1e-4 and dt < 10, f"max relative error {worst:.2e} over 20 batches in {dt:.1f}s")


def test_criterion_02_drift_labels(verdict):
    stations = [f"S{i}" for i in range(1, 11)]
    bad = n = 0
    for m in range(2, 11):
        it = itinerary("X", stations[:m], T0)
        for e in range(m + 1):
            for p in range(m + 1):
                a, _ = synth_label(state(it, e), state(it, p), 0.5, 1.0)
                bad += a != piecewise(e - p)
                n += 1
    verdict(2, bad == 0, f"{bad} mismatches over {n} position pairs")


def test_criterion_03_weights(verdict):
    w0 = drift_weight(0, 0.5, 2.0)
    ws = [drift_weight(p, 0.5, 2.0) for p in range(50)]
    dec = all(b < a for a, b in zip(ws, ws[1:]))
    spot = drift_weight(2, 0.5, 2.0)
    ok = w0 == 1.0 and dec and abs(spot - 1 / 3) <= 1e-12
    verdict(3, ok, f"w(0)={w0}, strictly decreasing={dec}, w(2)={float(spot)!r}")


def test_criterion_04_dynamics(verdict):
    rng = np.random.default_rng(2024)
    violations = [v for _ in range(1000) for v in check_dynamics_case(rng)]
    verdict(4, not violations, f"{len(violations)} violations over 1000 cases")


def test_criterion_05_replay_buffer(verdict):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(10_000):
        cap = int(rng.integers(1, 50))
        buf = ReplayBuffer(cap, 1)
        total = 0
        for n in rng.integers(1, 40, size=int(rng.integers(1, 8))):
            buf.push(np.arange(total, total + n, dtype=float)[:, None], np.zeros(n, int), np.ones(n))
            total += n
            ok = len(buf) == min(cap, total) and np.array_equal(buf.tags, np.arange(total - len(buf), total))
            bad += not (ok and np.array_equal(buf.features[:, 0], buf.tags))
    verdict(5, bad == 0, f"{bad} FIFO violations over 10000 push patterns")


def test_criterion_06_spectral(verdict):
    rng = np.random.default_rng(6)
    res = orth = norm = 0.0
    for _ in range(50):
        net = random_connected(rng, int(rng.integers(5, 61)))
        lap = normalized_laplacian(net)
        lam, v = spectral_basis(net)
        res = max(res, np.abs(lap @ v - v * lam).max())
        g = v.T @ v
        orth = max(orth, np.abs(g - np.diag(np.diag(g))).max())
        rows = np.linalg.norm(spectral_embedding(net).embedding_matrix(), axis=1)
        norm = max(norm, np.abs(rows - 1).max())
    k3 = np.sort(jacobi_eigh(normalized_laplacian(build_network("ABC", [("A", "B"), ("B", "C"), ("C", "A")])))[0])
    k3_err = np.abs(k3 - [0, 1.5, 1.5]).max()
    ok = res < 1e-8 and orth < 1e-8 and norm <= 1e-12 and k3_err <= 1e-10
    verdict(6, ok, f"residual {res:.1e}, orthogonality {orth:.1e}, row norm {norm:.1e}, K3 {k3_err:.1e}")


def test_criterion_07_forecast_mechanics(verdict, synth):
    ens = monte_carlo_forecast(FixedPolicy([0, 1, 0]), synth.sim, synth.clocks[100:104], n_traj=50)
    filled = np.nan_to_num(ens.delays, nan=-1)
    identical = bool(np.all(filled == filled[:, :1]))
    steps = n_rollout_steps(1800, 30)
    simulated = bool(np.all(ens.last_clock - ens.reference_clock == steps * 30))

    oplog, _, enc = stalled_setup()
    out = extract_delays(monte_carlo_forecast(FixedPolicy([1, 0, 0]), enc, [T0], n_traj=3))
    snap = build_snapshot(oplog, T0)
    for _ in range(steps):
        snap = step_snapshot(snap, {t: 0 for t in snap.train_ids}, oplog.timetable)
    x = snap.by_id["X"]
    want = [max(x.last_delay, snap.clock - x.itinerary.scheduled_times[j]) for j in (2, 3, 4)]
    copy_ok = want == [1380, 780, 180] and np.all(out.delays[0, :, 0, :3] == want)
    ok = identical and steps == 66 and simulated and copy_ok
    verdict(7, ok, f"identical={identical}, steps={steps}, copy-forward {want}")


def test_criterion_08_calibration(verdict):
    # each event has its own delay distribution: shifted, scaled and skewed
    rng = np.random.default_rng(8)
    n = 6000
    loc = rng.normal(0, 120, n)[:, None]
    scale = rng.uniform(10, 90, n)[:, None]
    shape = rng.uniform(0.5, 4.0, n)[:, None]
    samples = loc + scale * rng.gamma(shape, 1.0, (n, 50))
    obs = (loc + scale * rng.gamma(shape, 1.0, (n, 1)))[:, 0]
    curve = calibration_curve(samples, obs)
    gap = max(abs(c - p) for p, c in curve)
    mono = all(b[1] >= a[1] for a, b in zip(curve, curve[1:]))
    verdict(8, gap <= 0.05 and mono, f"max |coverage - nominal| {gap:.3f} over {n} events, monotone={mono}")


@pytest.mark.slow
def test_criterion_09_ordering(verdict):
    t0 = time.perf_counter()
    seeds = range(5)
    mae = {m: [] for m in ("regression", "bc", "dcil")}
    short = {m: [] for m in mae}
    long = {m: [] for m in mae}
    for seed in seeds:
        out = run_experiment(rc.resolve(overrides={"seed": str(seed)}))
        for m, rep in out["reports"].items():
            mae[m].append(rep.mae)
            short[m].append(rep.mae_by_bin[0])
            # event-weighted MAE over the 15-30 minute bins
            n = np.array(rep.n_by_bin[3:])
            long[m].append(float(np.dot(np.array(rep.mae_by_bin[3:]), n) / n.sum()))
    med = {k: {m: float(np.median(v)) for m, v in d.items()} for k, d in
           (("overall", mae), ("bin0", short), ("long", long))}
    elapsed = time.perf_counter() - t0
    a = med["bin0"]["bc"] < med["bin0"]["regression"]
    b = med["long"]["dcil"] <= med["long"]["bc"]
    c = med["overall"]["dcil"] <= med["overall"]["regression"]
    detail = (f"(a) bc {med['bin0']['bc']:.1f} < reg {med['bin0']['regression']:.1f}: {a}; "
              f"(b) dcil {med['long']['dcil']:.1f} <= bc {med['long']['bc']:.1f}: {b}; "
              f"(c) dcil {med['overall']['dcil']:.1f} <= reg {med['overall']['regression']:.1f}: {c}; "
              f"{elapsed:.0f}s")
    verdict(9, a and b and c and elapsed <= 1800, detail)


REPRO = [
    "data.n_days=4", "data.train_days=2", "data.val_days=1", "data.n_trains_per_day=24", "model.hidden=16,16",
    "bc.epochs=4", "regression.epochs=4", "dcil.epochs=2", "dcil.capacity=2000", "dcil.samples_per_epoch=1000",
    "forecast.n_traj=10", "eval.ref_stride=40",
]


def pipeline(root):
    flags = ["--seed", "11"] + [a for item in REPRO for a in ("--set", item)]
    data = root / "data"
    codes = [main(["gen-data", "--out", str(data), *flags])]
    for method in ("regression", "bc", "dcil"):
        run = root / method
        codes.append(main(["train", "--method", method, "--data", str(data), "--out", str(run), *flags]))
        ckpt = str(run / f"checkpoint_{method}.json")
        codes.append(main(["evaluate", "--checkpoint", ckpt, "--test", str(data / "test.csv"),
                           "--out", str(run / "eval"), *flags]))
        if method != "regression":
            codes.append(main(["calibrate", "--checkpoint", ckpt, "--test", str(data / "test.csv"),
                               "--out", str(run / "cal"), *flags]))
    return codes


def test_criterion_10_reproducibility(verdict, tmp_path):
    assert pipeline(tmp_path / "a") == [0] * 9
    assert pipeline(tmp_path / "b") == [0] * 9
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.suffix in (".json", ".txt", ".csv") and not p.name.startswith("train_log"))
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    kinds = {f.name for f in files}
    covered = {"checkpoint_dcil.json", "report.txt", "calibration.csv"} <= kinds
    verdict(10, not differ and covered, f"{len(files)} artifacts compared, differing: {differ or 'none'}")
