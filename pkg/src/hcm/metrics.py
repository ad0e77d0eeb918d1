"""Calibration, correlation and ranking metrics.

Regression metrics work on pairs ``(u_cal, r)``: calibrated uncertainty and
per-sample RMSE. Ranking metrics treat OOD as the positive class and a higher
score as "more OOD".
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import rankdata


def _pairs(u, r) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if u.shape != r.shape:
        raise ValueError(f"length mismatch: {u.size} scores vs {r.size} errors")
    if u.size == 0:
        raise ValueError("empty input")
    return u, r


def per_sample_rmse(y_hat, y) -> np.ndarray:
    diff = np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.sqrt(np.mean(diff * diff, axis=-1))


def coverage_at_k(u_cal, r, k: float) -> float:
    """Fraction of samples with ``r <= k * u_cal`` (inclusive)."""
    u, r = _pairs(u_cal, r)
    return float(np.mean(r <= k * u))


def ece_reg(u_cal, r, n_bins: int = 10) -> float:
    """Count-weighted mean ``|mean(u) - mean(r)|`` over equal-width bins of ``u_cal``."""
    u, r = _pairs(u_cal, r)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    lo, hi = u.min(), u.max()
    if hi > lo:
        edges = np.linspace(lo, hi, n_bins + 1)
        # bins are [t_{b-1}, t_b); the maximum joins the last bin
        idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, n_bins - 1)
    else:
        idx = np.zeros(u.size, dtype=int)
    counts = np.bincount(idx, minlength=n_bins)
    su = np.bincount(idx, weights=u, minlength=n_bins)
    sr = np.bincount(idx, weights=r, minlength=n_bins)
    full = counts > 0
    gap = np.abs(su[full] - sr[full])  # = |S_b| * |mean u - mean r|
    return float(gap.sum() / counts.sum())


class UndefinedCorrelation(ValueError):
    pass


def pearson(x, y) -> float:
    x, y = _pairs(x, y)
    if x.size < 2:
        raise UndefinedCorrelation("correlation undefined for fewer than 2 samples")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined: zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def spearman(x, y) -> float:
    x, y = _pairs(x, y)
    return pearson(rankdata(x), rankdata(y))


def rmse_report(r) -> float:
    """Mean of per-sample RMSE values."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty input")
    return float(r.mean())


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if y.all() or not y.any():
        raise ValueError("both classes must be present")
    return s, y


def auroc(scores, labels) -> float:
    """P(score_ood > score_id) + P(tie) / 2, via the Mann-Whitney rank sum."""
    s, y = _binary(scores, labels)
    ranks = rankdata(s)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    u_stat = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u_stat / (n_pos * n_neg))


def fpr_at_tpr(scores, labels, tpr: float = 0.95) -> float:
    """ID false-positive rate at the highest threshold whose OOD recall reaches ``tpr``.

    A sample is flagged OOD when ``score >= threshold``.
    """
    s, y = _binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # only evaluate at the last index of each tied group
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tpr_at = tp[last] / y.sum()
    fpr_at = fp[last] / (~y).sum()
    hit = np.flatnonzero(tpr_at >= tpr - 1e-12)
    return float(fpr_at[hit[0]])


def fpr_at_95tpr(scores, labels) -> float:
    return fpr_at_tpr(scores, labels, 0.95)


@dataclass
class MetricsReport:
    cov_1s: float
    cov_2s: float
    cov_3s: float
    ece_reg: float
    pearson: float
    spearman: float
    rmse: float
    auroc: float | None = None
    fpr_at_95tpr: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        # NaN (undefined correlation) is not valid JSON
        return {k: (None if v is None or not np.isfinite(v) else float(v)) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def csv_row(self) -> str:
        return ",".join("" if v is None else repr(v) for v in self.to_dict().values())

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.columns())


def evaluate(u_cal, r, n_bins: int = 10, ood_scores=None, ood_labels=None) -> MetricsReport:
    u, r = _pairs(u_cal, r)

    def corr(fn):
        try:
            return fn(u, r)
        except UndefinedCorrelation:
            return float("nan")

    rep = MetricsReport(
        cov_1s=coverage_at_k(u, r, 1), cov_2s=coverage_at_k(u, r, 2), cov_3s=coverage_at_k(u, r, 3),
        ece_reg=ece_reg(u, r, n_bins), pearson=corr(pearson), spearman=corr(spearman),
        rmse=rmse_report(r),
    )
    if ood_labels is not None:
        scores = u if ood_scores is None else ood_scores
        rep.auroc = auroc(scores, ood_labels)
        rep.fpr_at_95tpr = fpr_at_95tpr(scores, ood_labels)
    return rep
