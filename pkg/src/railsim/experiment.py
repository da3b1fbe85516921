"""End-to-end desk-scale pipeline: data, three trainers, forecasts, reports."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS, ConfigError, config_hash, derive_seed, hidden_dims
from .data import DAY, EPOCH_START, TRAIN_TYPES, SyntheticConfig, build_snapshot_dataset, generate_synthetic, \
    snapshot_grid, temporal_split
from .features import FeatureEncoder
from .forecast import ensemble_predictions, evaluate, extract_delays, monte_carlo_forecast, \
    regression_predictions
from .policy import MlpPolicy
from .samples import expert_samples, fit_stats, regression_samples
from .schedule import TrainTable
from .training import DcilConfig, Demonstrations, SupervisedConfig, bc_train, dcil_train, regression_train

log = logging.getLogger(__name__)

METHODS = ("regression", "bc", "dcil")


@dataclass
class Splits:
    network: object
    train: object
    val: object
    test: object
    tables: dict = field(default_factory=dict)


def synthetic_config(cfg: dict) -> SyntheticConfig:
    return SyntheticConfig(
        n_days=cfg["data.n_days"],
        n_trains_per_day=cfg["data.n_trains_per_day"],
        incident_rate=cfg["data.incident_rate"],
        delay_sigma=cfg["data.delay_sigma"],
        min_headway=cfg["data.min_headway"],
        propagation=cfg["data.propagation"],
        recovery_rate=cfg["data.recovery_rate"],
        seed=derive_seed(cfg["seed"], "data"),
    )


def make_splits(cfg: dict, oplog=None) -> Splits:
    syn = synthetic_config(cfg)
    if oplog is None:
        oplog, _ = generate_synthetic(syn)
    train_end = EPOCH_START + cfg["data.train_days"] * DAY
    val_end = train_end + cfg["data.val_days"] * DAY
    tr, va, te = temporal_split(oplog, (train_end, val_end))
    sp = Splits(syn.network, tr, va, te)
    for name in ("train", "val", "test"):
        sp.tables[name] = TrainTable.from_log(getattr(sp, name), syn.network, TRAIN_TYPES)
    return sp


def training_clocks(cfg: dict, oplog, name: str):
    rng = np.random.default_rng(derive_seed(cfg["seed"], f"subsample:{name}"))
    return build_snapshot_dataset(oplog, cfg["data.dt"], cfg["data.subsample_fraction"], rng).clocks


def encoders(sp: Splits, stats, split: str):
    t = sp.tables[split]
    return FeatureEncoder(sp.network, t, stats, "simulation"), FeatureEncoder(sp.network, t, stats, "regression")


def train_models(cfg: dict, sp: Splits, methods=METHODS):
    """Fit the requested models; returns ({method: policy}, stats, timings)."""
    hidden = hidden_dims(cfg)
    tr_clocks = training_clocks(cfg, sp.train, "train")
    va_clocks = training_clocks(cfg, sp.val, "val")
    stats = fit_stats(sp.network, sp.tables["train"], tr_clocks, TRAIN_TYPES)
    sim_tr, reg_tr = encoders(sp, stats, "train")
    sim_va, reg_va = encoders(sp, stats, "val")
    models, timings = {}, {}

    if "regression" in methods:
        t0 = time.perf_counter()
        x, y, m = regression_samples(reg_tr, tr_clocks, cfg["forecast.k"])
        xv, yv, mv = regression_samples(reg_va, va_clocks, cfg["forecast.k"])
        rc = SupervisedConfig(cfg["regression.epochs"], cfg["regression.batch_size"], cfg["regression.lr"],
                              seed=derive_seed(cfg["seed"], "regression"))
        models["regression"] = regression_train(x, y, m, rc, hidden, xv, yv, mv)
        timings["regression"] = time.perf_counter() - t0

    if "bc" in methods or "dcil" in methods:
        t0 = time.perf_counter()
        x, y = expert_samples(sim_tr, tr_clocks, cfg["data.dt"])
        xv, yv = expert_samples(sim_va, va_clocks, cfg["data.dt"])
        bcfg = SupervisedConfig(cfg["bc.epochs"], cfg["bc.batch_size"], cfg["bc.lr"],
                                seed=derive_seed(cfg["seed"], "bc"))
        bc = bc_train(x, y, bcfg, hidden, xv, yv)
        timings["bc"] = time.perf_counter() - t0
        if "bc" in methods:
            models["bc"] = bc

        if "dcil" in methods:
            t0 = time.perf_counter()
            dc = dcil_config(cfg)
            if cfg["dcil.init"] not in ("bc", "random"):
                raise ConfigError(f"dcil.init must be bc or random, got {cfg['dcil.init']!r}")
            if cfg["dcil.init"] == "bc":
                policy = bc.copy()
                policy.reset_optimizer()
            else:
                policy = MlpPolicy((sim_tr.dim, *hidden, 3), "softmax", seed=dc.seed)
                policy.set_standardization(x)
            anchors = dcil_anchors(sp.tables["train"], tr_clocks, dc.trajectory_length, cfg["data.dt"])
            models["dcil"] = dcil_train(Demonstrations(sim_tr, anchors, cfg["data.dt"]), dc, policy)
            timings["dcil"] = time.perf_counter() - t0
    return models, stats, timings


def dcil_config(cfg: dict) -> DcilConfig:
    return DcilConfig(
        epochs=cfg["dcil.epochs"], capacity=cfg["dcil.capacity"], samples_per_epoch=cfg["dcil.samples_per_epoch"],
        trajectory_length=cfg["dcil.trajectory_length"], batch_size=cfg["dcil.batch_size"], lr=cfg["dcil.lr"],
        alpha=cfg["dcil.alpha"], beta=cfg["dcil.beta"], greedy=cfg["dcil.greedy"],
        seed=derive_seed(cfg["seed"], "dcil"),
    )


def dcil_anchors(table, clocks, horizon: int, dt: int):
    """Anchor clocks whose ``horizon``-step window lies inside the log."""
    finite = np.isfinite(table.final_arrival)
    hi = table.final_arrival[finite].max() + 300
    clocks = np.asarray(clocks)
    return clocks[(clocks >= table.activation.min()) & (clocks + horizon * dt <= hi)]


def reference_clocks(cfg: dict, oplog):
    grid = snapshot_grid(oplog, cfg["data.dt"])
    return grid[:: cfg["eval.ref_stride"]]


def predict(cfg: dict, method: str, policy, sp: Splits, stats, clocks, split: str = "test"):
    sim, reg = encoders(sp, stats, split)
    if method == "regression":
        return regression_predictions(policy, reg, clocks, cfg["forecast.k"]), None
    ens = monte_carlo_forecast(
        policy, sim, clocks, n_traj=cfg["forecast.n_traj"], horizon=cfg["forecast.horizon"],
        seed=derive_seed(cfg["seed"], f"forecast:{method}"), clamp=(method == "bc"), dt=cfg["data.dt"],
        k=cfg["forecast.k"],
    )
    ens = extract_delays(ens, cfg["forecast.k"])
    return ensemble_predictions(ens, sp.tables[split]), ens


def run_experiment(cfg: dict | None = None, methods=METHODS) -> dict:
    """Train every method on one seed and report test-set errors."""
    cfg = dict(DEFAULTS if cfg is None else cfg)
    t0 = time.perf_counter()
    sp = make_splits(cfg)
    models, stats, timings = train_models(cfg, sp, methods)
    clocks = reference_clocks(cfg, sp.test)
    reports = {}
    for method, policy in models.items():
        pred, _ = predict(cfg, method, policy, sp, stats, clocks)
        reports[method] = evaluate(pred, horizon=cfg["forecast.horizon"])
        log.info("seed %s %s mae %.2f bins %s", cfg["seed"], method, reports[method].mae,
                 np.round(reports[method].mae_by_bin, 1))
    return {
        "reports": reports, "models": models, "stats": stats, "timings": timings,
        "config_hash": config_hash(cfg), "wall_time": time.perf_counter() - t0,
    }
