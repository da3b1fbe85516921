"""Command-line entry point: ``python -m railsim <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as rc
from .data import TRAIN_TYPES, DataError, default_network, ingest_csv, write_csv
from .experiment import METHODS, Splits, dcil_anchors, dcil_config, make_splits, predict, reference_clocks, \
    train_models, training_clocks
from .features import FeatureEncoder
from .forecast import calibration_curve, evaluate, horizon_filter, write_calibration, write_report, \
    write_report_csv
from .network import read_network, write_network
from .policy import load_checkpoint, save_checkpoint
from .schedule import TrainTable

log = logging.getLogger("railsim")


class CliError(RuntimeError):
    pass


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", required=True, help="run directory for all outputs")
    p.add_argument("--workers", type=int, default=1, help="upper bound on worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railsim", description="Imitation-learning railway delay simulator")
    sub = parser.add_subparsers(dest="command", metavar="{gen-data,train,evaluate,calibrate,simulate}")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic operations log split into train/val/test")
    _common(p)

    p = sub.add_parser("train", help="fit a model and write a checkpoint plus training log")
    _common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", "--demos", dest="data", help="directory written by gen-data")

    for name, text in (("evaluate", "write an evaluation report"), ("calibrate", "write a calibration curve"),
                       ("simulate", "write one ensemble's raw trajectories")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--test", required=True, help="operations CSV to forecast")
        p.add_argument("--network", help="network file (default: network.txt next to --test)")
        if name == "simulate":
            p.add_argument("--clock", type=int, help="reference clock (default: first evaluation clock)")
    return parser


def resolve_config(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise rc.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return rc.resolve(args.config, overrides)


def _header(cfg, **extra):
    return {"seed": cfg["seed"], "config_hash": rc.config_hash(cfg), **extra}


def _out_dir(args) -> Path:
    out = Path(os.environ.get("RAILSIM_OUT_ROOT", "")) / args.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path, what):
    if path is None or not Path(path).exists():
        raise CliError(f"missing input {what}: {path}")
    return Path(path)


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args, cfg):
    out = _out_dir(args)
    sp = make_splits(cfg)
    comments = [f"{k}={v}" for k, v in _header(cfg).items()]
    for name in ("train", "val", "test"):
        write_csv(getattr(sp, name), out / f"{name}.csv", comments)
    timetable = sp.train.merge(sp.val).merge(sp.test)
    write_csv(timetable, out / "timetable.csv", comments, include_actual=False)
    write_network(sp.network, out / "network.txt")
    (out / "config.txt").write_text(rc.dump(cfg))
    log.info("wrote synthetic data to %s", out)


def _load_network(path):
    from .network import spectral_embedding

    return spectral_embedding(read_network(path)) if path is not None else default_network()


def _network_for(args, csv_path):
    if getattr(args, "network", None):
        return _load_network(_require(args.network, "network"))
    sibling = Path(csv_path).parent / "network.txt"
    return _load_network(sibling if sibling.exists() else None)


def cmd_train(args, cfg):
    data = _require(args.data, "demonstrations directory (--data/--demos)")
    for name in ("train.csv", "val.csv"):
        _require(data / name, name)
    network = _network_for(args, data / "train.csv")
    train_log = ingest_csv(data / "train.csv", network)
    val_log = ingest_csv(data / "val.csv", network)
    if not len(train_log):
        raise CliError("training log is empty")
    sp = Splits(network, train_log, val_log, None)
    for name in ("train", "val"):
        sp.tables[name] = TrainTable.from_log(getattr(sp, name), network, TRAIN_TYPES)
    models, stats, timings = train_models(cfg, sp, (args.method,))
    policy = models[args.method]

    out = _out_dir(args)
    meta = {**_header(cfg), "mode": args.method}
    save_checkpoint(policy, stats, out / f"checkpoint_{args.method}.json", meta)
    with open(out / f"train_log_{args.method}.txt", "w") as fh:
        for k, v in _header(cfg, method=args.method).items():
            fh.write(f"# {k}={v}\n")
        for rec in getattr(policy, "history", []):
            fh.write(" ".join(f"{k}={v}" for k, v in rec.items()) + "\n")
    (out / "config.txt").write_text(rc.dump(cfg))
    log.info("trained %s in %.1fs", args.method, timings.get(args.method, float("nan")))


def _load_for_forecast(args, cfg):
    policy, stats = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    method = policy.meta.get("mode")
    if method not in METHODS:
        raise CliError(f"checkpoint has unknown method {method!r}")
    test_path = _require(args.test, "test CSV")
    network = _network_for(args, test_path)
    test_log = ingest_csv(test_path, network)
    if not len(test_log):
        raise CliError("test log is empty")
    sp = Splits(network, None, None, test_log)
    sp.tables["test"] = TrainTable.from_log(test_log, network, stats.train_types)
    return policy, stats, method, sp


def cmd_evaluate(args, cfg):
    policy, stats, method, sp = _load_for_forecast(args, cfg)
    pred, _ = predict(cfg, method, policy, sp, stats, reference_clocks(cfg, sp.test))
    report = evaluate(pred, horizon=cfg["forecast.horizon"])
    out = _out_dir(args)
    hdr = _header(cfg, method=method, checkpoint_config_hash=policy.meta.get("config_hash"))
    write_report(report, out / "report.txt", hdr)
    write_report_csv(report, out / "report.csv", hdr)
    if report.calibration:
        write_calibration(report.calibration, out / "calibration.csv", hdr)
    log.info("%s mae %.2f rmse %.2f over %d events", method, report.mae, report.rmse, report.n_predictions)


def cmd_calibrate(args, cfg):
    policy, stats, method, sp = _load_for_forecast(args, cfg)
    if method == "regression":
        raise CliError("calibration needs a simulation policy (bc or dcil)")
    pred, _ = predict(cfg, method, policy, sp, stats, reference_clocks(cfg, sp.test))
    kept = horizon_filter(pred, horizon=cfg["forecast.horizon"])
    pairs = calibration_curve(kept.samples, kept.observed)
    out = _out_dir(args)
    write_calibration(pairs, out / "calibration.csv", _header(cfg, method=method))


def cmd_simulate(args, cfg):
    policy, stats, method, sp = _load_for_forecast(args, cfg)
    if method == "regression":
        raise CliError("simulate needs a simulation policy (bc or dcil)")
    clock = args.clock if args.clock is not None else int(reference_clocks(cfg, sp.test)[0])
    _, ens = predict(cfg, method, policy, sp, stats, [clock])
    table = sp.tables["test"]
    out = _out_dir(args)
    with open(out / "trajectories.csv", "w", newline="") as fh:
        for k, v in _header(cfg, method=method, reference_clock=clock).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "train_id", "sequence_index", "station_id", "reached", "delay", "arrival"])
        n_traj = ens.n_trajectories
        for s in np.flatnonzero(ens.present[0]):
            row = ens.rows[0, s]
            it = table.itineraries[row]
            for kk in np.flatnonzero(ens.station_valid[0, s]):
                j = int(ens.start_pos[0, s] + kk + 1)
                for r in range(n_traj):
                    w.writerow([r, it.train_id, j, it.stations[j], int(ens.reached[0, r, s, kk]),
                                repr(float(ens.delays[0, r, s, kk])), repr(float(ens.arrivals[0, r, s, kk]))])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        log.info("resolved config (hash %s):\n%s", rc.config_hash(cfg), rc.dump(cfg).rstrip())
        COMMANDS[args.command](args, cfg)
    except (CliError, rc.ConfigError, DataError, ValueError, OSError) as exc:
        print(f"railsim {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
