"""Train the three forecasters on a small synthetic network and compare them.

Run with ``python3 demos/quickstart.py``. Takes a minute or two on one core; raise
``data.n_days`` and the epoch counts for numbers closer to the default run.
"""

import numpy as np

from railsim import config as rc
from railsim.experiment import run_experiment

overrides = {
    "seed": "3",
    "data.n_days": "6",
    "data.train_days": "4",
    "data.val_days": "1",
    "bc.epochs": "10",
    "regression.epochs": "10",
    "dcil.epochs": "3",
    "dcil.samples_per_epoch": "5000",
    "forecast.n_traj": "20",
}
cfg = rc.resolve(overrides=overrides)
print(f"config hash {rc.config_hash(cfg)}")

out = run_experiment(cfg)
bins = "  ".join(f"{5 * b:>2d}-{5 * b + 5:<2d}" for b in range(6))
print(f"\n{'method':<11}{'MAE':>7}{'RMSE':>8}   {bins}  (minutes ahead)")
for method, rep in out["reports"].items():
    per_bin = "  ".join(f"{v:5.1f}" for v in rep.mae_by_bin)
    print(f"{method:<11}{rep.mae:7.1f}{rep.rmse:8.1f}   {per_bin}")

# simulation policies also give an ensemble, so their spread can be checked
for method in ("bc", "dcil"):
    cal = out["reports"][method].calibration
    gap = max(abs(c - p) for p, c in cal)
    print(f"{method} calibration: worst coverage gap {gap:.3f} over levels "
          f"{np.round([p for p, _ in cal], 1).tolist()}")

print("\ntraining time (s):", {k: round(v, 1) for k, v in out["timings"].items()})
