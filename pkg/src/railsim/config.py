"""Flat ``section.key=value`` run configuration with seed fan-out."""

from __future__ import annotations

import hashlib
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "data.n_days": 18,
    "data.train_days": 14,
    "data.val_days": 2,
    "data.n_trains_per_day": 40,
    "data.incident_rate": 1.5,
    "data.delay_sigma": 1.0,
    "data.min_headway": 120,
    "data.propagation": 1.0,
    "data.recovery_rate": 10.0,
    "data.dt": 30,
    "data.subsample_fraction": 1.0,
    "model.hidden": "64,128,64",
    "bc.epochs": 40,
    "bc.batch_size": 32,
    "bc.lr": 1e-3,
    "regression.epochs": 40,
    "regression.batch_size": 32,
    "regression.lr": 1e-4,
    "dcil.epochs": 100,
    "dcil.capacity": 30000,
    "dcil.samples_per_epoch": 10000,
    "dcil.trajectory_length": 5,
    "dcil.batch_size": 16,
    "dcil.lr": 5e-5,
    "dcil.alpha": 0.5,
    "dcil.beta": 1.0,
    "dcil.greedy": False,
    "dcil.init": "bc",
    "forecast.n_traj": 50,
    "forecast.horizon": 1800,
    "forecast.k": 15,
    "eval.ref_stride": 10,
}


def _coerce(key, text, default):
    if isinstance(default, bool):
        low = str(text).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return str(text).strip()


def parse_lines(lines) -> dict:
    out = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(file_path=None, overrides=None, **flags) -> dict:
    """Defaults, then file values, then ``overrides`` and keyword flags."""
    raw = {}
    if file_path is not None:
        try:
            raw.update(parse_lines(Path(file_path).read_text().splitlines()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {file_path}: {exc}") from exc
    raw.update(overrides or {})
    raw.update({k: v for k, v in flags.items() if v is not None})
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    for k, v in raw.items():
        cfg[k] = _coerce(k, v, DEFAULTS[k])
    return cfg


def dump(cfg: dict) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump(cfg).encode()).hexdigest()[:16]


def derive_seed(master: int, name: str) -> int:
    """Module seed: first 8 bytes of sha256("<master>:<name>")."""
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def hidden_dims(cfg: dict) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in str(cfg["model.hidden"]).split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"model.hidden: {exc}") from exc
    if not dims or min(dims) < 1:
        raise ConfigError("model.hidden needs positive layer sizes")
    return dims
