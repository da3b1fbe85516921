"""Follow one Monte Carlo ensemble from a single snapshot of the network.

A behavioural-cloning policy is fitted on two synthetic days, then 50
trajectories are rolled out 33 minutes ahead from a busy mid-morning
snapshot. For each train on the network the script prints the median
forecast delay at its next stations with an 80% band, next to what the log
actually recorded.

Run with ``python3 demos/inspect_rollout.py``.
"""

import numpy as np

from railsim.data import DAY, EPOCH_START, TRAIN_TYPES, SyntheticConfig, generate_synthetic, snapshot_grid
from railsim.features import FeatureEncoder
from railsim.forecast import ensemble_predictions, extract_delays, horizon_filter, monte_carlo_forecast
from railsim.samples import expert_samples, fit_stats
from railsim.schedule import TrainTable, build_snapshot
from railsim.training import SupervisedConfig, bc_train

cfg = SyntheticConfig(n_days=3, n_trains_per_day=96, seed=4)
oplog, _ = generate_synthetic(cfg)
table = TrainTable.from_log(oplog, cfg.network, TRAIN_TYPES)
grid = snapshot_grid(oplog)
train_clocks = grid[grid < EPOCH_START + 2 * DAY][::2]

stats = fit_stats(cfg.network, table, train_clocks, TRAIN_TYPES)
enc = FeatureEncoder(cfg.network, table, stats, "simulation")
x, y = expert_samples(enc, train_clocks)
print(f"{len(y)} expert samples, action counts {np.bincount(y, minlength=3).tolist()}")
policy = bc_train(x, y, SupervisedConfig(epochs=30, seed=0), hidden=(64, 64))

# the busiest snapshot between 08:00 and 10:00 on the held-out day
day3 = EPOCH_START + 2 * DAY
window = grid[(grid >= day3 + 8 * 3600) & (grid < day3 + 10 * 3600)]
ref = int(max(window, key=lambda c: len(build_snapshot(oplog, int(c)).trains)))
snap = build_snapshot(oplog, ref)
print(f"reference clock {ref}: {len(snap.trains)} trains on the network")

ens = extract_delays(monte_carlo_forecast(policy, enc, [ref], n_traj=50, seed=1, clamp=True))
# score only stations actually passed within the 30 minute horizon
pred = horizon_filter(ensemble_predictions(ens, table), ref)

print(f"\n{'train':<14}{'stop':>5} {'station':<8}{'lead':>6}{'median':>8}{'10%':>7}{'90%':>7}{'actual':>8}")
for i in np.lexsort((pred.station_index, pred.train_row))[:40]:
    it = table.itineraries[pred.train_row[i]]
    lo, hi = np.percentile(pred.samples[i], [10, 90])
    lead = (pred.observed_arrival[i] - ref) / 60
    print(f"{it.train_id:<14}{pred.station_index[i]:>5} {it.stations[pred.station_index[i]]:<8}"
          f"{lead:5.1f}m{pred.predicted[i]:8.0f}{lo:7.0f}{hi:7.0f}{pred.observed[i]:8.0f}")

inside = np.mean([(np.percentile(s, 10) <= o <= np.percentile(s, 90)) for s, o in zip(pred.samples, pred.observed)])
print(f"\n{len(pred)} station forecasts; {inside:.0%} of observations fall in the 80% band")
