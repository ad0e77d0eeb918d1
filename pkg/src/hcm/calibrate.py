"""Temperature fitting, confidence mapping, normalization and thresholding.

Calibrated uncertainty is ``u_cal = T * u``. ``T`` is chosen so that the
fraction of errors inside ``k * u_cal`` matches the 68/95/99.7 rule for
k = 1, 2, 3. Confidence is ``exp(-u_cal)``, then normalized to [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COVERAGE_TARGETS = (0.68, 0.95, 0.997)


class UncalibratableError(ValueError):
    """Scores carry no information to fit a temperature against."""


def _coverage_curves(u: np.ndarray, err: np.ndarray, temps: np.ndarray) -> np.ndarray:
    """``cov[k-1, j] = mean(err <= k * temps[j] * u)`` for k = 1, 2, 3."""
    n = u.size
    covs = []
    for k in (1, 2, 3):
        with np.errstate(divide="ignore", invalid="ignore"):
            # smallest T covering each sample; u == 0 covers only zero errors
            need = np.where(u > 0, err / (k * np.where(u > 0, u, 1.0)), np.where(err <= 0, 0.0, np.inf))
        need.sort()
        covs.append(np.searchsorted(need, temps, side="right") / n)
    return np.array(covs)


def coverage_objective(u, err, temps, targets=COVERAGE_TARGETS) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    cov = _coverage_curves(u, err, np.atleast_1d(np.asarray(temps, dtype=np.float64)))
    return ((cov - np.asarray(targets)[:, None]) ** 2).sum(axis=0)


def fit_temperature(val_u, val_errors, n_grid: int = 400, t_min: float = 1e-4, t_max: float = 1e4) -> float:
    """Grid search over log-spaced temperatures, then one zoom around the best cell.

    Ties resolve to the smaller temperature.
    """
    u = np.asarray(val_u, dtype=np.float64).ravel()
    err = np.asarray(val_errors, dtype=np.float64).ravel()
    if u.shape != err.shape:
        raise ValueError("val_u and val_errors differ in length")
    if u.size < 10:
        raise ValueError(f"need at least 10 validation samples, got {u.size}")
    if np.any(u < 0) or np.any(err < 0):
        raise ValueError("scores and errors must be non-negative")
    if not np.any(u > 0):
        raise UncalibratableError("uncalibratable: degenerate scores (all zero)")

    grid = np.logspace(np.log10(t_min), np.log10(t_max), n_grid)
    obj = coverage_objective(u, err, grid)
    i = int(np.argmin(obj))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    fine = np.logspace(np.log10(lo), np.log10(hi), n_grid + 1)
    fobj = coverage_objective(u, err, fine)
    j = int(np.argmin(fobj))
    if fobj[j] < obj[i] or (fobj[j] == obj[i] and fine[j] < grid[i]):
        return float(fine[j])
    return float(grid[i])


def confidence(u, T: float):
    """``exp(-u * T)``: 1 at zero uncertainty, strictly decreasing."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("uncertainty must be non-negative")
    return np.exp(-u * T)


def normalize_minmax(conf, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Rescale to [0, 1] with the list's own range unless ``lo``/``hi`` are given.

    A constant list maps to 0.5.
    """
    c = np.asarray(conf, dtype=np.float64)
    if c.size == 0:
        raise ValueError("empty input")
    lo = float(c.min()) if lo is None else lo
    hi = float(c.max()) if hi is None else hi
    if hi <= lo:
        return np.full_like(c, 0.5)
    return np.clip((c - lo) / (hi - lo), 0.0, 1.0)


def normalize_quantile(conf, reference) -> np.ndarray:
    """Empirical CDF of ``reference`` evaluated at ``conf``."""
    ref = np.sort(np.asarray(reference, dtype=np.float64).ravel())
    if ref.size == 0:
        raise ValueError("empty quantile reference")
    return np.searchsorted(ref, np.asarray(conf, dtype=np.float64), side="right") / ref.size


@dataclass
class CalibrationModel:
    T: float
    normalizer: str = "minmax"  # "minmax" | "quantile"
    lo: float = 0.0
    hi: float = 1.0
    reference: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("temperature must be positive")
        if self.normalizer not in ("minmax", "quantile"):
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        self.reference = np.sort(np.asarray(self.reference, dtype=np.float64))
        if self.normalizer == "quantile" and self.reference.size == 0:
            raise ValueError("quantile normalizer needs a nonempty reference")

    @classmethod
    def fit(cls, val_u, val_errors, normalizer: str = "minmax", **grid) -> CalibrationModel:
        T = fit_temperature(val_u, val_errors, **grid)
        conf = confidence(np.asarray(val_u, dtype=np.float64), T)
        if normalizer == "quantile":
            return cls(T, "quantile", reference=conf)
        return cls(T, "minmax", lo=float(conf.min()), hi=float(conf.max()))

    def calibrate(self, u) -> np.ndarray:
        return self.T * np.asarray(u, dtype=np.float64)

    def confidence(self, u) -> np.ndarray:
        return confidence(u, self.T)

    def normalized_confidence(self, u) -> np.ndarray:
        c = self.confidence(u)
        if self.normalizer == "quantile":
            return normalize_quantile(c, self.reference)
        return normalize_minmax(c, self.lo, self.hi)

    def to_dict(self) -> dict:
        if self.normalizer == "quantile":
            norm = {"kind": "quantile", "reference": self.reference.tolist()}
        else:
            norm = {"kind": "minmax", "lo": self.lo, "hi": self.hi}
        return {"temperature": self.T, "normalizer": norm}

    @classmethod
    def from_dict(cls, doc: dict) -> CalibrationModel:
        norm = doc["normalizer"]
        if norm["kind"] == "quantile":
            return cls(float(doc["temperature"]), "quantile", reference=np.asarray(norm["reference"]))
        return cls(float(doc["temperature"]), "minmax", lo=float(norm["lo"]), hi=float(norm["hi"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> CalibrationModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str  # "tolerance" | "quantile"
    value: float  # tolerance eps, or tail quantile q
    cutoff: float

    def flag(self, u):
        return flag(u, self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "cutoff": self.cutoff}


def fit_threshold(kind: str, val_u=None, value: float = 0.95) -> ThresholdPolicy:
    """Tolerance: cutoff is the tolerance itself. Quantile: empirical q-quantile of ``val_u``."""
    if kind == "tolerance":
        if value <= 0:
            raise ValueError("tolerance must be positive")
        return ThresholdPolicy("tolerance", float(value), float(value))
    if kind == "quantile":
        if not 0 < value < 1:
            raise ValueError(f"quantile must lie in (0, 1), got {value}")
        u = np.asarray(val_u if val_u is not None else [], dtype=np.float64).ravel()
        if u.size == 0:
            raise ValueError("quantile threshold needs validation scores")
        return ThresholdPolicy("quantile", float(value), float(np.quantile(u, value)))
    raise ValueError(f"unknown threshold kind {kind!r}")


def flag(u, policy: ThresholdPolicy):
    """True where the prediction is unreliable (``u > cutoff``, strict)."""
    return np.asarray(u) > policy.cutoff
