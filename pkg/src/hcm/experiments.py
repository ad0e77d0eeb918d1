"""Desk-scale studies: configs, runners and deterministic run directories.

Each runner takes a :class:`RunConfig`, trains one or more HCM networks and
returns :class:`RunArtifacts`. ``write_run_dir`` turns artifacts into files:

    config.json  params.json  calibration.json  metrics.json
    scores.csv   bands.csv (toy1d)  <extra tables>.csv  manifest.json

Every file is a pure function of the config, so reruns are byte-identical.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .calibrate import CalibrationModel, fit_threshold, flag, normalize_minmax
from .data import (Dirichlet, LabeledSet, Pairwise, RampNoise, blob_centers, gen_blobs_ood, gen_cubic,
                   csv_read, gen_manifold_regression, gen_two_moons, perturb_inputs)
from .head import HCMOutput, embed_scalar, recompose, sigma_hat_sq, uncertainty_score
from .loss import LossSpec
from .metrics import MetricsReport, UndefinedCorrelation, evaluate, pearson, per_sample_rmse, spearman
from .training import History, TrainingDiverged, fold_scaling, hcm_output, hcm_specs, train

EXPERIMENTS = ("toy1d", "two-moons", "noise-shift", "blob-ood", "lambda-sweep")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


_REGRESSION_DATA = {
    "n": 5000, "latent_dim": 2, "input_dim": 8, "output_dim": 3, "noise_std": 0.05,
    "offset": 3.0, "basis_seed": 12345, "splits": [0.8, 0.1, 0.1], "a_max": 0.2,
}

_DEFAULTS: dict[str, dict] = {
    "toy1d": {
        "hidden": [64, 64], "epochs": 1000, "batch_size": 64, "milestones": [],
        "optimizer": {"kind": "adam", "lr": 1e-3},
        "data": {"n": 2000, "domain": [-4.0, 4.0], "noise": RampNoise().to_dict(),
                 "splits": [0.8, 0.1, 0.1], "input_scale": 4.0, "target_scale": 10.0,
                 "grid": [-6.0, 6.0], "grid_n": 1201},
        "targets": {"pearson_sigma_min": 0.9, "noisy_interval": [-2.0, 2.0],
                    "beyond_interval": [5.0, 6.0], "clean_interval": [3.0, 4.0]},
    },
    "two-moons": {
        "hidden": [32, 32], "epochs": 1000, "batch_size": 32, "milestones": [500, 750],
        "optimizer": {"kind": "adam", "lr": 3e-3},
        "data": {"n": 500, "noise_std": 0.25, "grid_n": 200, "pad": 0.2},
        "targets": {"spearman_max": -0.5, "accuracy_min": 0.95, "high_u": 0.15},
    },
    "noise-shift": {
        "hidden": [64, 64], "epochs": 150, "batch_size": 32, "milestones": [75, 112],
        "optimizer": {"kind": "adam", "lr": 1e-3},
        "data": dict(_REGRESSION_DATA),
        "targets": {"curve_spearman_max": -0.7, "curve_min_bins": 8},
    },
    "blob-ood": {
        "hidden": [32, 32], "epochs": 150, "batch_size": 32, "milestones": [],
        "optimizer": {"kind": "adam", "lr": 1e-3},
        "mixup": {"kind": "pairwise", "alpha": 1.0},
        "data": {"n_id": 1000, "n_ood": 500, "dim": 2, "k": 4, "spacing": 6.0, "std": 1.0,
                 "ood_radius": 1.6, "splits": [0.8, 0.1, 0.1]},
        "targets": {"auroc_min": 0.8, "mixup_slack": 0.02},
    },
    "lambda-sweep": {
        "hidden": [64, 64], "epochs": 100, "batch_size": 32, "milestones": [50, 75],
        "optimizer": {"kind": "adam", "lr": 1e-3},
        "data": dict(_REGRESSION_DATA),
        "lambdas": [0.0, 1.0, 3.0, 5.0],
        "targets": {"norm_dev_max": 0.5},
    },
}

_COMMON = {
    "experiment": None, "seed": 0, "hidden": [32, 32], "activation": "relu", "slope": 0.01,
    "loss": LossSpec().to_dict(), "optimizer": {"kind": "adam", "lr": 1e-3}, "epochs": 100,
    "batch_size": 32, "milestones": [], "gamma": 0.1, "mixup": None, "data": {},
    "calibration": {"normalizer": "minmax", "bins": 10, "threshold": {"kind": "quantile", "value": 0.95}},
    "targets": {}, "lambdas": [0.0, 1.0, 3.0, 5.0], "dataset": None,
}


def _merge(base: dict, override: dict, where: str) -> dict:
    """Override keys of ``base``; keys it does not know are an error."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"{where}: unknown key {key!r}; expected one of {sorted(base)}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    """Everything a run depends on. ``to_dict`` round-trips exactly through JSON."""

    experiment: str
    seed: int
    hidden: list
    activation: str
    slope: float
    loss: LossSpec
    optimizer: dict
    epochs: int
    batch_size: int
    milestones: list
    gamma: float
    mixup: dict | None
    data: dict
    calibration: dict
    targets: dict
    lambdas: list
    dataset: str | None = None  # optional CSV to train on instead of generated data

    @classmethod
    def default(cls, experiment: str) -> RunConfig:
        return cls.from_dict({"experiment": experiment})

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a JSON object")
        name = doc.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(f"config.experiment: {name!r} is not one of {list(EXPERIMENTS)}")
        unknown = set(doc) - set(_COMMON)
        if unknown:
            raise ConfigError(f"config: unknown key {sorted(unknown)[0]!r}; expected one of {sorted(_COMMON)}")
        base = {**copy.deepcopy(_COMMON), **copy.deepcopy(_DEFAULTS[name]), "experiment": name}
        # loss and optimizer are replaced wholesale, not merged
        merged = _merge({k: v for k, v in base.items() if k not in ("loss", "optimizer", "mixup")},
                        {k: v for k, v in doc.items() if k not in ("loss", "optimizer", "mixup")}, "config")
        try:
            loss = LossSpec.from_dict(doc.get("loss", base["loss"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config.loss: {exc}") from None
        cfg = cls(loss=loss, optimizer=copy.deepcopy(doc.get("optimizer", base["optimizer"])),
                  mixup=copy.deepcopy(doc.get("mixup", base["mixup"])), **merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, fieldname, msg):
            if not cond:
                raise ConfigError(f"config.{fieldname}: {msg}")

        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(all(isinstance(h, int) and h > 0 for h in self.hidden), "hidden", "widths must be positive integers")
        need(self.activation in ("relu", "leaky_relu", "identity"), "activation",
             f"unknown activation {self.activation!r}")
        need(isinstance(self.epochs, int) and self.epochs >= 1, "epochs", "must be an integer >= 1")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size", "must be an integer >= 1")
        need(all(isinstance(m, int) and m >= 0 for m in self.milestones), "milestones", "must be epoch indices")
        need(0 < self.gamma <= 1, "gamma", "must lie in (0, 1]")
        need(self.calibration.get("normalizer") in ("minmax", "quantile"), "calibration.normalizer",
             "must be 'minmax' or 'quantile'")
        need(int(self.calibration.get("bins", 0)) >= 1, "calibration.bins", "must be >= 1")
        need(len(self.lambdas) >= 1 and all(float(v) >= 0 for v in self.lambdas), "lambdas",
             "must be a nonempty list of non-negative numbers")
        try:
            self.make_optimizer()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"config.optimizer: {exc}") from None
        try:
            self.make_mixup()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"config.mixup: {exc}") from None
        th = self.calibration.get("threshold", {})
        try:
            if th.get("kind") == "tolerance":
                fit_threshold("tolerance", value=float(th.get("value", 0)))
            elif th.get("kind") == "quantile":
                fit_threshold("quantile", [0.0], float(th.get("value", 0)))
            else:
                raise ValueError(f"unknown threshold kind {th.get('kind')!r}")
        except ValueError as exc:
            raise ConfigError(f"config.calibration.threshold: {exc}") from None
        need(self.dataset is None or isinstance(self.dataset, str), "dataset", "must be a path string or null")
        splits = self.data.get("splits")
        if splits is not None:
            need(len(splits) == 3 and all(s > 0 for s in splits), "data.splits",
                 "must be three positive fractions")

    def make_optimizer(self) -> nn.SGD | nn.Adam:
        opt = dict(self.optimizer)
        kind = opt.pop("kind", None)
        if kind == "adam":
            return nn.Adam(**{k: float(v) for k, v in opt.items()})
        if kind == "sgd":
            return nn.SGD(**{k: float(v) for k, v in opt.items()})
        raise ValueError(f"unknown optimizer {kind!r}; expected 'adam' or 'sgd'")

    def make_mixup(self) -> Pairwise | Dirichlet | None:
        if self.mixup is None:
            return None
        m = dict(self.mixup)
        kind = m.pop("kind", None)
        if kind == "pairwise":
            mode = Pairwise(float(m.pop("alpha", 1.0)))
        elif kind == "dirichlet":
            mode = Dirichlet(int(m.pop("k", 20)), float(m.pop("alpha", 0.5)))
        else:
            raise ValueError(f"unknown mixup kind {kind!r}; expected 'pairwise' or 'dirichlet'")
        if m:
            raise ValueError(f"unknown mixup keys {sorted(m)}")
        if mode.alpha <= 0:
            raise ValueError("alpha must be positive")
        return mode

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "seed": self.seed, "hidden": list(self.hidden),
            "activation": self.activation, "slope": self.slope, "loss": self.loss.to_dict(),
            "optimizer": self.optimizer, "epochs": self.epochs, "batch_size": self.batch_size,
            "milestones": list(self.milestones), "gamma": self.gamma, "mixup": self.mixup,
            "data": self.data, "calibration": self.calibration, "targets": self.targets,
            "lambdas": list(self.lambdas), "dataset": self.dataset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def replace(self, **changes) -> RunConfig:
        doc = self.to_dict()
        doc.update(changes)
        return RunConfig.from_dict(doc)


# --- tables -------------------------------------------------------------------


class Table:
    """Ordered, row-aligned columns written as CSV with a header row."""

    def __init__(self, columns: dict | None = None):
        self.columns: dict[str, np.ndarray] = {}
        for k, v in (columns or {}).items():
            self[k] = v

    def __setitem__(self, key: str, values) -> None:
        arr = np.asarray(values)
        if arr.ndim != 1:
            raise ValueError(f"column {key!r} must be one-dimensional")
        if self.columns and len(arr) != len(self):
            raise ValueError(f"column {key!r} has {len(arr)} rows, table has {len(self)}")
        self.columns[key] = arr

    def __getitem__(self, key: str) -> np.ndarray:
        return self.columns[key]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def add_matrix(self, prefix: str, m) -> None:
        m = np.asarray(m)
        for j in range(m.shape[1]):
            self[f"{prefix}{j}"] = m[:, j]

    @staticmethod
    def concat(tables: list[Table]) -> Table:
        keys = list(tables[0].columns)
        if any(list(t.columns) != keys for t in tables):
            raise ValueError("tables have different columns")
        return Table({k: np.concatenate([t[k] for t in tables]) for k in keys})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.columns))
        cols = [[_cell(v) for v in col] for col in self.columns.values()]
        w.writerows(zip(*cols))
        return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not np.isfinite(obj) else float(obj)
    return obj


@dataclass
class RunArtifacts:
    config: RunConfig
    params: nn.NetworkParams
    calibration: CalibrationModel | None
    reports: dict[str, MetricsReport]
    summary: dict
    scores: Table
    bands: Table | None = None
    tables: dict[str, Table] = field(default_factory=dict)
    extra_params: dict[str, nn.NetworkParams] = field(default_factory=dict)
    history: History | None = None

    def metrics_doc(self) -> dict:
        return {"experiment": self.config.experiment, "seed": self.config.seed,
                "reports": {k: r.to_dict() for k, r in self.reports.items()},
                "summary": _jsonable(self.summary)}


def history_table(hist: History) -> Table:
    rows = list(hist.rows())
    return Table({"epoch": np.array([r[0] for r in rows], dtype=int),
                  "dir_term": np.array([r[1] for r in rows]), "mag_term": np.array([r[2] for r in rows]),
                  "norm_term": np.array([r[3] for r in rows]), "total": np.array([r[4] for r in rows])})


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_dir(art: RunArtifacts, out_dir: str | Path) -> dict:
    """Write every artifact under ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {
        "config.json": art.config.to_json(),
        "params.json": json.dumps(art.params.to_dict()) + "\n",
        "metrics.json": json.dumps(art.metrics_doc(), indent=2, sort_keys=True) + "\n",
        "scores.csv": art.scores.to_csv(),
    }
    if art.calibration is not None:
        files["calibration.json"] = json.dumps(art.calibration.to_dict(), indent=2) + "\n"
    if art.bands is not None:
        files["bands.csv"] = art.bands.to_csv()
    if art.history is not None:
        files["training_loss.csv"] = history_table(art.history).to_csv()
    for name, p in art.extra_params.items():
        files[f"params_{name}.json"] = json.dumps(p.to_dict()) + "\n"
    for name, t in art.tables.items():
        files[f"{name}.csv"] = t.to_csv()
    # single writer, after every artifact has been rendered
    entries = []
    for name in sorted(files):
        data = files[name].encode()
        (out / name).write_bytes(data)
        entries.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {"experiment": art.config.experiment, "files": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Names of files whose checksum no longer matches; empty when intact."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    bad = []
    for e in manifest["files"]:
        p = run_dir / e["file"]
        if not p.exists() or sha256_file(p) != e["sha256"]:
            bad.append(e["file"])
    return bad


# --- shared pieces --------------------------------------------------------------


def _train_model(cfg: RunConfig, x, y, in_width: int, D: int, mixup=None, lambda_norm=None,
                 seed_offset: int = 0) -> tuple[nn.NetworkParams, History]:
    specs = hcm_specs(in_width, list(cfg.hidden), D, cfg.activation, cfg.slope)
    params = nn.init_params(specs, cfg.seed + seed_offset)
    loss = cfg.loss if lambda_norm is None else LossSpec(cfg.loss.phi_d, cfg.loss.phi_R,
                                                         cfg.loss.phi_norm, float(lambda_norm))
    hist = train(params, x, y, loss, cfg.make_optimizer(), cfg.epochs, cfg.batch_size,
                 seed=cfg.seed + seed_offset, mixup=mixup, milestones=tuple(cfg.milestones), gamma=cfg.gamma)
    return params, hist


def score_table(params: nn.NetworkParams, data: LabeledSet, calib: CalibrationModel | None = None,
                targets=None) -> tuple[Table, HCMOutput, np.ndarray]:
    """Per-sample ``x, y, y_hat, R_hat, d_norm, u, u_cal, conf, r``; returns (table, output, r)."""
    out = hcm_output(params, data.inputs)
    y_hat = recompose(out)
    u = uncertainty_score(out)
    t = Table()
    t.add_matrix("x", data.inputs)
    if targets is not None:
        t.add_matrix("y", targets)
    t.add_matrix("y_hat", y_hat)
    t["R_hat"] = out.R_hat
    t["d_norm"] = out.d_norm
    t["u"] = u
    r = per_sample_rmse(y_hat, targets) if targets is not None else np.full(len(u), np.nan)
    if calib is not None:
        t["u_cal"] = calib.calibrate(u)
        t["conf"] = calib.confidence(u)
    t["r"] = r
    return t, out, r


def _fit_calibration(cfg: RunConfig, u, r) -> CalibrationModel:
    return CalibrationModel.fit(u, r, normalizer=cfg.calibration["normalizer"])


def _report(cfg: RunConfig, calib: CalibrationModel, u, r, **ood) -> MetricsReport:
    return evaluate(calib.calibrate(u), r, int(cfg.calibration["bins"]), **ood)


def _threshold(cfg: RunConfig, val_u):
    th = cfg.calibration["threshold"]
    return fit_threshold(th["kind"], val_u, float(th["value"]))


def _safe_corr(fn, a, b) -> float:
    try:
        return fn(a, b)
    except UndefinedCorrelation:
        return float("nan")


# --- toy 1-D ----------------------------------------------------------------------


def run_toy1d(config: RunConfig) -> RunArtifacts:
    """Cubic with a noise ramp; compares the variance surrogate against the true noise std."""
    cfg = config
    dc = cfg.data
    noise = RampNoise(**{k: float(v) for k, v in dc["noise"].items() if k != "kind"})
    data = gen_cubic(int(dc["n"]), cfg.seed, tuple(dc["domain"]), noise)
    train_set, val_set, test_set = data.split(dc["splits"], cfg.seed)
    sx, sy = float(dc["input_scale"]), float(dc["target_scale"])
    y_tr = embed_scalar(train_set.targets[:, 0])
    params, hist = _train_model(cfg, train_set.inputs / sx, y_tr / sy, 1, 2)
    params = fold_scaling(params, sx, sy)

    def ev(s):
        return score_table(params, s, None, embed_scalar(s.targets[:, 0]))

    _, out_val, r_val = ev(val_set)
    calib = _fit_calibration(cfg, uncertainty_score(out_val), r_val)
    scores, out_test, r_test = score_table(params, test_set, calib, embed_scalar(test_set.targets[:, 0]))
    u_test = scores["u"]
    reports = {"test": _report(cfg, calib, u_test, r_test)}

    grid = np.linspace(dc["grid"][0], dc["grid"][1], int(dc["grid_n"]))
    g_out = hcm_output(params, grid[:, None])
    pred = recompose(g_out).mean(axis=1)
    s_hat = np.sqrt(sigma_hat_sq(g_out))
    bands = Table({"x": grid, "prediction": pred, "sigma_hat": s_hat})
    for k in (1, 2, 3):
        bands[f"lo_{k}"] = pred - k * s_hat
        bands[f"hi_{k}"] = pred + k * s_hat
    sigma_true = noise.std(grid)
    sigma_tab = Table({"x": grid, "sigma_true": sigma_true, "sigma_hat": s_hat,
                       "u": uncertainty_score(g_out)})

    tg = cfg.targets

    def within(iv):
        return (grid >= iv[0]) & (grid <= iv[1])

    noisy = within(tg["noisy_interval"])
    pear = _safe_corr(pearson, s_hat[noisy], sigma_true[noisy])
    beyond = float(s_hat[within(tg["beyond_interval"])].mean())
    clean = float(s_hat[within(tg["clean_interval"])].mean())
    summary = {
        "pearson_sigma": pear, "sigma_hat_beyond": beyond, "sigma_hat_clean": clean,
        "mean_u_test": float(u_test.mean()), "mean_abs_y_test": float(np.abs(test_set.targets).mean()),
        "temperature": calib.T, "final_loss": hist.total[-1],
        "pass_pearson": bool(pear >= tg["pearson_sigma_min"]), "pass_widening": bool(beyond > clean),
    }
    return RunArtifacts(cfg, params, calib, reports, summary, scores, bands,
                        {"sigma": sigma_tab}, history=hist)


# --- two moons ----------------------------------------------------------------------


def boundary_distance(params: nn.NetworkParams, points, lo, hi, grid_n: int = 200
                      ) -> tuple[np.ndarray, bool]:
    """Distance from each point to the nearest grid cell where the predicted class changes.

    Returns ``(distances, degenerate)``; a single predicted class over the whole
    grid is degenerate and yields NaN distances.
    """
    gx = np.linspace(lo[0], hi[0], grid_n)
    gy = np.linspace(lo[1], hi[1], grid_n)
    G = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1)
    cls = hcm_output(params, G.reshape(-1, 2)).d_hat.argmax(axis=1).reshape(grid_n, grid_n)
    edge = np.zeros(cls.shape, dtype=bool)
    dx = cls[:-1] != cls[1:]
    dy = cls[:, :-1] != cls[:, 1:]
    edge[:-1] |= dx
    edge[1:] |= dx
    edge[:, :-1] |= dy
    edge[:, 1:] |= dy
    if not edge.any():
        return np.full(len(points), np.nan), True
    dist, _ = cKDTree(G[edge]).query(np.asarray(points, dtype=np.float64))
    return dist, False


def run_two_moons(config: RunConfig) -> RunArtifacts:
    """Relates each training sample's score to its distance from the learned decision boundary."""
    cfg = config
    dc = cfg.data
    data = gen_two_moons(int(dc["n"]), float(dc["noise_std"]), cfg.seed)
    params, hist = _train_model(cfg, data.inputs, data.targets, 2, 2)
    out = hcm_output(params, data.inputs)
    u = uncertainty_score(out)
    r = per_sample_rmse(recompose(out), data.targets)
    calib = _fit_calibration(cfg, u, r)
    scores, _, _ = score_table(params, data, calib, data.targets)
    pred = out.d_hat.argmax(axis=1)
    acc = float(np.mean(pred == data.labels))

    lo, hi = data.inputs.min(axis=0), data.inputs.max(axis=0)
    pad = float(dc["pad"]) * (hi - lo)
    dist, degenerate = boundary_distance(params, data.inputs, lo - pad, hi + pad, int(dc["grid_n"]))
    scores["label"] = data.labels
    scores["pred"] = pred
    scores["boundary_dist"] = dist

    tg = cfg.targets
    high = u > tg["high_u"]
    sp = float("nan") if degenerate else _safe_corr(spearman, u, dist)
    med_all = float(np.median(dist)) if not degenerate else float("nan")
    med_high = float(np.median(dist[high])) if high.any() and not degenerate else float("nan")
    summary = {
        "accuracy": acc, "spearman_u_dist": sp, "n_high_u": int(high.sum()),
        "median_dist_high_u": med_high, "median_dist_all": med_all, "degenerate": degenerate,
        "temperature": calib.T, "final_loss": hist.total[-1],
        "pass_spearman": bool(sp <= tg["spearman_max"]), "pass_accuracy": bool(acc >= tg["accuracy_min"]),
        "pass_median": bool(med_high < med_all),
    }
    return RunArtifacts(cfg, params, calib, {"train": _report(cfg, calib, u, r)}, summary, scores,
                        history=hist)


# --- noise shift --------------------------------------------------------------------


def _regression_data(cfg: RunConfig) -> LabeledSet:
    dc = cfg.data
    return gen_manifold_regression(int(dc["n"]), cfg.seed, int(dc["latent_dim"]), int(dc["input_dim"]),
                                   int(dc["output_dim"]), float(dc["noise_std"]), float(dc["offset"]),
                                   int(dc["basis_seed"]))


def calibration_curve(conf, err, n_bins: int = 10) -> Table:
    """Mean error per equal-width bin of confidence in [0, 1]; empty bins are dropped."""
    conf = np.asarray(conf, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    idx = np.clip((conf * n_bins).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    keep = counts > 0
    return Table({
        "bin": np.arange(n_bins)[keep],
        "conf_mean": (np.bincount(idx, conf, n_bins)[keep] / counts[keep]),
        "err_mean": (np.bincount(idx, err, n_bins)[keep] / counts[keep]),
        "count": counts[keep],
    })


def run_noise_shift(config: RunConfig) -> RunArtifacts:
    """Calibrate on clean validation data, then evaluate on clean and input-perturbed test data."""
    cfg = config
    data = _regression_data(cfg)
    train_set, val_set, test_set = data.split(cfg.data["splits"], cfg.seed)
    D = data.targets.shape[1]
    params, hist = _train_model(cfg, train_set.inputs, train_set.targets, data.inputs.shape[1], D)

    _, out_val, r_val = score_table(params, val_set, None, val_set.targets)
    u_val = uncertainty_score(out_val)
    calib = _fit_calibration(cfg, u_val, r_val)
    policy = _threshold(cfg, u_val)
    shifted = perturb_inputs(test_set, float(cfg.data["a_max"]), cfg.seed + 1)

    tables, reports, conf_mean, normed = [], {}, {}, {}
    for name, s in (("clean", test_set), ("perturbed", shifted)):
        t, _, r = score_table(params, s, calib, s.targets)
        t["conf_norm"] = normalize_minmax(t["conf"])
        t["flagged"] = flag(t["u"], policy)
        t["amplitude"] = np.asarray(s.meta.get("perturb_amplitude", np.zeros(len(s))), dtype=np.float64)
        t["split"] = np.full(len(s), name)
        tables.append(t)
        reports[name] = _report(cfg, calib, t["u"], r)
        conf_mean[name] = float(t["conf"].mean())
        normed[name] = t
    scores = Table.concat(tables)

    pert = normed["perturbed"]
    curve = calibration_curve(pert["conf_norm"], pert["r"], int(cfg.calibration["bins"]))
    curve_sp = _safe_corr(spearman, curve["conf_mean"], curve["err_mean"]) if len(curve) >= 2 else float("nan")
    tg = cfg.targets
    summary = {
        "pearson_clean": reports["clean"].pearson, "pearson_perturbed": reports["perturbed"].pearson,
        "mean_conf_clean": conf_mean["clean"], "mean_conf_perturbed": conf_mean["perturbed"],
        "curve_spearman": curve_sp, "curve_bins": len(curve), "temperature": calib.T,
        "threshold_cutoff": policy.cutoff,
        "flag_rate_clean": float(normed["clean"]["flagged"].mean()),
        "flag_rate_perturbed": float(pert["flagged"].mean()),
        "final_loss": hist.total[-1],
        "pass_pearson_shift": bool(reports["perturbed"].pearson > reports["clean"].pearson),
        "pass_conf_drop": bool(conf_mean["perturbed"] < conf_mean["clean"]),
        "pass_curve": bool(curve_sp <= tg["curve_spearman_max"] and len(curve) >= tg["curve_min_bins"]),
    }
    return RunArtifacts(cfg, params, calib, reports, summary, scores,
                        tables={"calibration-curve": curve}, history=hist)


# --- blob OOD -------------------------------------------------------------------------


def blob_probes(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(midpoints of every pair of ID centers, the centers themselves)``."""
    dc = cfg.data
    c = blob_centers(int(dc["k"]), int(dc["dim"]), float(dc["spacing"]), float(dc["std"]))
    mids = np.array([(c[i] + c[j]) / 2 for i, j in itertools.combinations(range(len(c)), 2)])
    return mids, c


def run_blob_ood(config: RunConfig, with_mixup: bool) -> RunArtifacts:
    """Train on labeled blobs and rank ID-test against OOD samples by ``u``."""
    cfg = config
    dc = cfg.data
    id_set, ood_set = gen_blobs_ood(int(dc["n_id"]), int(dc["n_ood"]), int(dc["dim"]), cfg.seed, int(dc["k"]),
                                    float(dc["spacing"]), float(dc["std"]), float(dc["ood_radius"]))
    train_set, val_set, test_set = id_set.split(dc["splits"], cfg.seed)
    mode = cfg.make_mixup() if with_mixup else None
    if with_mixup and mode is None:
        raise ConfigError("config.mixup: a mixup mode is required for the mixup run")
    params, hist = _train_model(cfg, train_set.inputs, train_set.targets, int(dc["dim"]), int(dc["k"]), mode)

    _, out_val, r_val = score_table(params, val_set, None, val_set.targets)
    calib = _fit_calibration(cfg, uncertainty_score(out_val), r_val)
    t_id, _, r_id = score_table(params, test_set, calib, test_set.targets)
    t_ood, _, _ = score_table(params, ood_set, calib, np.full_like(ood_set.targets, np.nan))
    for t, name in ((t_id, "id"), (t_ood, "ood")):
        t["split"] = np.full(len(t), name)
    scores = Table.concat([t_id, t_ood])
    labels = np.r_[np.zeros(len(t_id)), np.ones(len(t_ood))]
    rep = _report(cfg, calib, t_id["u"], r_id, ood_scores=scores["u"], ood_labels=labels)

    mids, centers = blob_probes(cfg)
    u_mid = float(uncertainty_score(hcm_output(params, mids)).mean())
    u_ctr = float(uncertainty_score(hcm_output(params, centers)).mean())
    summary = {"auroc": rep.auroc, "fpr_at_95tpr": rep.fpr_at_95tpr, "mixup": with_mixup,
               "u_between": u_mid, "u_centers": u_ctr, "temperature": calib.T,
               "final_loss": hist.total[-1]}
    return RunArtifacts(cfg, params, calib, {"mixup" if with_mixup else "vanilla": rep}, summary, scores,
                        history=hist)


def run_blob_pair(config: RunConfig) -> RunArtifacts:
    """Vanilla and mixup runs on the same data, merged into one artifact set."""
    van = run_blob_ood(config, False)
    mix = run_blob_ood(config, True)
    for art, name in ((van, "vanilla"), (mix, "mixup")):
        art.scores["variant"] = np.full(len(art.scores), name)
    tg = config.targets
    a0, a1 = van.summary["auroc"], mix.summary["auroc"]
    summary = {
        "auroc_vanilla": a0, "auroc_mixup": a1,
        "fpr95_vanilla": van.summary["fpr_at_95tpr"], "fpr95_mixup": mix.summary["fpr_at_95tpr"],
        "u_between_mixup": mix.summary["u_between"], "u_centers_mixup": mix.summary["u_centers"],
        "pass_vanilla": bool(a0 >= tg["auroc_min"]), "pass_noninferior": bool(a1 >= a0 - tg["mixup_slack"]),
        "mixup_better": bool(a1 > a0),
        "pass_probes": bool(mix.summary["u_between"] > mix.summary["u_centers"]),
    }
    return RunArtifacts(config, mix.params, mix.calibration, {**van.reports, **mix.reports}, summary,
                        Table.concat([van.scores, mix.scores]),
                        tables={"training_loss_vanilla": history_table(van.history)},
                        extra_params={"vanilla": van.params}, history=mix.history)


# --- lambda sweep -----------------------------------------------------------------------


def run_lambda_sweep(config: RunConfig, lambdas=None) -> RunArtifacts:
    """One run per norm-penalty weight, all from the same seed and split."""
    cfg = config
    lambdas = [float(v) for v in (cfg.lambdas if lambdas is None else lambdas)]
    data = _regression_data(cfg)
    train_set, val_set, _ = data.split(cfg.data["splits"], cfg.seed)
    D = data.targets.shape[1]
    rows = {"lambda": [], "val_error": [], "mean_u": [], "median_norm_dev": [], "final_loss": [],
            "stable": []}
    score_parts, first = [], None
    for lam in lambdas:
        try:
            params, hist = _train_model(cfg, train_set.inputs, train_set.targets, data.inputs.shape[1], D,
                                        lambda_norm=lam)
        except (TrainingDiverged, nn.NonFiniteGradientError, FloatingPointError):
            for k, v in (("lambda", lam), ("val_error", np.nan), ("mean_u", np.nan),
                         ("median_norm_dev", np.nan), ("final_loss", np.nan), ("stable", False)):
                rows[k].append(v)
            continue
        t, out, r = score_table(params, val_set, None, val_set.targets)
        dev = float(np.median(np.abs(out.d_norm - 1.0)))
        finite = bool(np.all(np.isfinite(hist.total)))
        stable = finite and dev < cfg.targets["norm_dev_max"]
        for k, v in (("lambda", lam), ("val_error", float(r.mean())), ("mean_u", float(t["u"].mean())),
                     ("median_norm_dev", dev), ("final_loss", hist.total[-1]), ("stable", stable)):
            rows[k].append(v)
        t["lambda"] = np.full(len(t), lam)
        score_parts.append(t)
        if first is None:
            first = (params, hist, t, r)
    if first is None:
        raise TrainingDiverged(-1, -1, "every lambda in the sweep diverged")
    sweep = Table({k: np.asarray(v) for k, v in rows.items()})
    params, hist, t0, r0 = first
    calib = _fit_calibration(cfg, t0["u"], r0)
    summary = {"n_rows": len(sweep), "lambdas": lambdas,
               "stable_lambda0": bool(sweep["stable"][0]) if lambdas and lambdas[0] == 0 else None}
    return RunArtifacts(cfg, params, calib, {"val_lambda_first": _report(cfg, calib, t0["u"], r0)}, summary,
                        Table.concat(score_parts), tables={"sweep": sweep}, history=hist)


# --- standalone training ---------------------------------------------------------------


def training_set(cfg: RunConfig) -> LabeledSet:
    """The split a run of ``cfg.experiment`` trains on, or the CSV named by ``cfg.dataset``."""
    if cfg.dataset is not None:
        return csv_read(cfg.dataset)
    dc = cfg.data
    if cfg.experiment == "toy1d":
        noise = RampNoise(**{k: float(v) for k, v in dc["noise"].items() if k != "kind"})
        return gen_cubic(int(dc["n"]), cfg.seed, tuple(dc["domain"]), noise).split(dc["splits"], cfg.seed)[0]
    if cfg.experiment == "two-moons":
        return gen_two_moons(int(dc["n"]), float(dc["noise_std"]), cfg.seed)
    if cfg.experiment == "blob-ood":
        id_set, _ = gen_blobs_ood(int(dc["n_id"]), int(dc["n_ood"]), int(dc["dim"]), cfg.seed, int(dc["k"]),
                                  float(dc["spacing"]), float(dc["std"]), float(dc["ood_radius"]))
        return id_set.split(dc["splits"], cfg.seed)[0]
    return _regression_data(cfg).split(dc["splits"], cfg.seed)[0]


def train_from_config(cfg: RunConfig, data: LabeledSet | None = None) -> tuple[nn.NetworkParams, History]:
    """Train one network; scalar targets are embedded in the plane, and any
    ``input_scale``/``target_scale`` preprocessing is folded into the weights."""
    data = training_set(cfg) if data is None else data
    y = embed_scalar(data.targets[:, 0]) if data.targets.shape[1] == 1 else data.targets
    sx = float(cfg.data.get("input_scale", 1.0))
    sy = float(cfg.data.get("target_scale", 1.0))
    params, hist = _train_model(cfg, data.inputs / sx, y / sy, data.inputs.shape[1], y.shape[1],
                                cfg.make_mixup())
    return fold_scaling(params, sx, sy), hist


RUNNERS = {
    "toy1d": run_toy1d,
    "two-moons": run_two_moons,
    "noise-shift": run_noise_shift,
    "blob-ood": run_blob_pair,
    "lambda-sweep": run_lambda_sweep,
}


def run_experiment(config: RunConfig) -> RunArtifacts:
    return RUNNERS[config.experiment](config)
