"""Command line entry point: ``hcm {train,score,calibrate,eval,experiment}``.

Exit codes: 0 success, 1 internal failure (including training divergence),
2 usage or configuration error, 3 data-quality error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import nn
from .calibrate import CalibrationModel, UncalibratableError, normalize_minmax
from .data import CSVFormatError, csv_read
from .experiments import (EXPERIMENTS, ConfigError, RunConfig, Table, history_table, run_experiment,
                          score_table, train_from_config, write_run_dir)
from .head import ZeroTargetError, embed_scalar
from .metrics import MetricsReport, evaluate
from .training import TrainingDiverged

log = logging.getLogger("hcm")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataQualityError(Exception):
    pass


# --- helpers ------------------------------------------------------------------------


def _load_config(path: str | None, experiment: str | None = None, seed: int | None = None) -> RunConfig:
    if path is None:
        if experiment is None:
            raise UsageError("--config is required")
        doc = {"experiment": experiment}
    else:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: expected a JSON object")
        if experiment is not None:
            if doc.setdefault("experiment", experiment) != experiment:
                raise ConfigError(f"config.experiment: {doc['experiment']!r} does not match "
                                  f"subcommand argument {experiment!r}")
    if seed is not None:
        doc["seed"] = seed
    return RunConfig.from_dict(doc)


def read_table(path: str | Path) -> Table:
    """Read a CSV with a header row; numeric columns become float arrays (empty cells are NaN)."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CSVFormatError(f"{path}: line {i}: expected {len(header)} fields, found {len(row)}")
    t = Table()
    for j, name in enumerate(header):
        col = [row[j] for row in body]
        try:
            t[name] = np.array([float(v) if v != "" else np.nan for v in col], dtype=np.float64)
        except ValueError:
            t[name] = np.array(col)
    return t


def _require(t: Table, cols, path) -> None:
    missing = [c for c in cols if c not in t.columns]
    if missing:
        raise UsageError(f"{path}: missing required column(s) {missing}")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands --------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args.config, seed=args.seed)
    if cfg.dataset is not None and not Path(cfg.dataset).exists():
        raise UsageError(f"dataset file not found: {cfg.dataset}")
    params, hist = train_from_config(cfg)
    out = _out_dir(args.out)
    files = {"params.json": json.dumps(params.to_dict()) + "\n",
             "training_loss.csv": history_table(hist).to_csv()}
    for name, text in files.items():
        (out / name).write_text(text)
    log.info("trained %s for %d epochs; final loss %.6g", cfg.experiment, cfg.epochs, hist.total[-1])
    return EXIT_OK


def cmd_score(args) -> int:
    for p in (args.params, args.data):
        if not Path(p).exists():
            raise UsageError(f"file not found: {p}")
    params = nn.NetworkParams.load(args.params)
    data = csv_read(args.data)
    D = params.output_width - 1
    targets = data.targets
    if targets.shape[1] == 1 and D == 2:
        targets = embed_scalar(targets[:, 0])
    if data.inputs.shape[1] != params.input_width:
        raise UsageError(f"width mismatch: data has {data.inputs.shape[1]} input columns, "
                         f"checkpoint expects {params.input_width}")
    if targets.shape[1] != D:
        raise UsageError(f"width mismatch: data has {data.targets.shape[1]} target columns, "
                         f"checkpoint predicts {D}")
    full, _, _ = score_table(params, data, None, targets)
    order = ([c for c in full.columns if c.startswith("x")] + [c for c in full.columns if c.startswith("y_hat")]
             + ["R_hat", "d_norm", "u"] + [c for c in full.columns if c[0] == "y" and c[1:].isdigit()] + ["r"])
    t = Table({c: full[c] for c in order})
    (_out_dir(args.out) / "scores.csv").write_text(t.to_csv())
    log.info("scored %d rows", len(t))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    t = read_table(args.scores)
    _require(t, ["u", "r"], args.scores)
    u, r = t["u"], t["r"]
    keep = np.isfinite(u) & np.isfinite(r)
    if keep.sum() < 10:
        raise DataQualityError(f"uncalibratable: only {int(keep.sum())} rows with finite u and r (need 10)")
    try:
        calib = CalibrationModel.fit(u[keep], r[keep], normalizer=args.normalizer)
    except UncalibratableError as exc:
        raise DataQualityError(str(exc)) from None
    out = _out_dir(args.out)
    finite_u = np.where(np.isfinite(u), u, np.nan)
    t["u_cal"] = calib.T * finite_u
    t["conf"] = np.exp(-calib.T * finite_u)
    t["conf_norm"] = calib.normalized_confidence(np.where(np.isfinite(u), u, 0.0))
    (out / "calibration.json").write_text(json.dumps(calib.to_dict(), indent=2) + "\n")
    (out / "calibrated_scores.csv").write_text(t.to_csv())
    log.info("temperature %.6g", calib.T)
    return EXIT_OK


def cmd_eval(args) -> int:
    t = read_table(args.scores)
    _require(t, ["u", "r"], args.scores)
    if not Path(args.calibration).exists():
        raise UsageError(f"file not found: {args.calibration}")
    try:
        calib = CalibrationModel.load(args.calibration)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{args.calibration}: not a calibration file ({exc})") from None
    u, r = t["u"], t["r"]
    has_ood = "ood" in t.columns
    keep = np.isfinite(u) & np.isfinite(r)
    if not keep.any():
        raise DataQualityError("no rows with finite u and r")
    ood = {}
    if has_ood:
        ood = {"ood_scores": u, "ood_labels": t["ood"].astype(bool)}
    rep = evaluate(calib.calibrate(u[keep]), r[keep], args.bins, **ood)
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(rep.to_json())
    (out / "metrics.csv").write_text(MetricsReport.csv_header() + "\n" + rep.csv_row() + "\n")
    log.info("%s", json.dumps(rep.to_dict()))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config, experiment=args.name, seed=args.seed)
    art = run_experiment(cfg)
    manifest = write_run_dir(art, args.out)
    log.info("wrote %d files to %s", len(manifest["files"]) + 1, args.out)
    log.info("%s", json.dumps(art.metrics_doc()["summary"], sort_keys=True))
    return EXIT_OK


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, metavar="DIR", help="output directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="only report errors")
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="hcm", description="Deterministic uncertainty scores from a "
                                "magnitude/direction output head.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train a network from a JSON config")
    s.add_argument("--config", required=True, metavar="PATH")
    s.add_argument("--seed", type=int, metavar="U64")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score a CSV dataset with a checkpoint")
    s.add_argument("--params", required=True, metavar="PATH")
    s.add_argument("--data", required=True, metavar="PATH")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("calibrate", parents=[common], help="fit a temperature to scored errors")
    s.add_argument("--scores", required=True, metavar="PATH")
    s.add_argument("--normalizer", choices=("minmax", "quantile"), default="minmax")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("eval", parents=[common], help="compute the metrics report")
    s.add_argument("--scores", required=True, metavar="PATH")
    s.add_argument("--calibration", required=True, metavar="PATH")
    s.add_argument("--bins", type=int, default=10)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", parents=[common], help="run a study end to end")
    s.add_argument("name", choices=EXPERIMENTS)
    s.add_argument("--config", metavar="PATH")
    s.add_argument("--seed", type=int, metavar="U64")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="hcm: %(message)s", stream=sys.stderr, force=True)

    threads = os.environ.get("HCM_THREADS")
    if threads is not None and not (threads.isdigit() and int(threads) > 0):
        log.error("HCM_THREADS must be a positive integer, got %r", threads)
        return EXIT_USAGE
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        log.error("--seed must be an unsigned 64-bit integer")
        return EXIT_USAGE
    if getattr(args, "bins", 1) < 1:
        log.error("--bins must be >= 1")
        return EXIT_USAGE

    try:
        return args.func(args)
    except (UsageError, ConfigError, CSVFormatError, nn.DimensionError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataQualityError, ZeroTargetError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.error("internal error: %s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
