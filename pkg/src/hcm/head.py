"""Magnitude/direction decomposition and the constraint-violation score.

A target ``y`` is written as ``R * d`` with ``R = |y|`` and ``|d| = 1``. A model
predicts ``(R_hat, d_hat)`` where ``d_hat`` is *not* projected back onto the
sphere; how far it strays, scaled by ``R_hat``, is the uncertainty score.

All functions broadcast over leading axes: directions have shape ``(..., D)``
and magnitudes shape ``(...)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# event counters for diagnostics, e.g. negative predicted magnitudes
DIAGNOSTICS: Counter = Counter()


class ZeroTargetError(ValueError):
    """A zero target has no direction."""


@dataclass(frozen=True)
class TargetDecomposition:
    R: np.ndarray
    d: np.ndarray

    @property
    def D(self) -> int:
        return self.d.shape[-1]


@dataclass(frozen=True)
class HCMOutput:
    R_hat: np.ndarray
    d_hat: np.ndarray

    @property
    def D(self) -> int:
        return self.d_hat.shape[-1]

    @property
    def d_norm(self) -> np.ndarray:
        return np.linalg.norm(self.d_hat, axis=-1)

    @classmethod
    def from_raw(cls, out) -> HCMOutput:
        """Split a raw network output ``(..., D + 1)``: direction first, magnitude last."""
        out = np.asarray(out, dtype=np.float64)
        return cls(out[..., -1], out[..., :-1])


@dataclass(frozen=True)
class ErrorTriple:
    e_y: np.ndarray
    e_d: np.ndarray
    e_R: np.ndarray
    epsilon: np.ndarray  # nan where undefined


def _check_dim(D: int) -> None:
    if D < 2:
        raise ValueError(f"dimension must be >= 2, got D={D}; embed scalars with embed_scalar()")


def decompose(y) -> TargetDecomposition:
    y = np.asarray(y, dtype=np.float64)
    _check_dim(y.shape[-1] if y.ndim else 1)
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    R = np.linalg.norm(y, axis=-1)
    zero = R == 0
    if np.any(zero):
        where = np.argwhere(np.atleast_1d(zero))[0].tolist() if y.ndim > 1 else []
        raise ZeroTargetError(f"zero target has no direction (at index {where}); "
                              "filter such rows or apply a target shift")
    return TargetDecomposition(R, y / R[..., None])


def embed_scalar(y) -> np.ndarray:
    """Duplicate a scalar target into the plane: ``y -> (y, y)``."""
    y = np.asarray(y, dtype=np.float64)
    return np.stack([y, y], axis=-1)


def scalar_readback(y_hat) -> np.ndarray:
    """Scalar estimate from a duplicated 2-D prediction (mean of both coordinates)."""
    return np.asarray(y_hat, dtype=np.float64).mean(axis=-1)


def recompose(out: HCMOutput) -> np.ndarray:
    return np.asarray(out.R_hat)[..., None] * out.d_hat


def _abs_magnitude(R_hat) -> np.ndarray:
    R_hat = np.asarray(R_hat, dtype=np.float64)
    neg = int(np.count_nonzero(R_hat < 0))
    if neg:
        DIAGNOSTICS["negative_magnitude"] += neg
    return np.abs(R_hat)


def uncertainty_score(out: HCMOutput) -> np.ndarray:
    """``u = R_hat * | |d_hat| - 1 |``; a negative ``R_hat`` is counted and its absolute value used."""
    return _abs_magnitude(out.R_hat) * np.abs(out.d_norm - 1.0)


def sigma_hat_sq(out: HCMOutput, D: int | None = None) -> np.ndarray:
    """Variance surrogate ``u * R_hat * (1 + |d_hat|) / (D - 1)``."""
    D = out.D if D is None else D
    _check_dim(D)
    R = _abs_magnitude(out.R_hat)
    n = out.d_norm
    return R * np.abs(n - 1.0) * R * (1.0 + n) / (D - 1)


def errors(target: TargetDecomposition, out: HCMOutput) -> ErrorTriple:
    R_hat = np.asarray(out.R_hat, dtype=np.float64)
    e_d = out.d_hat - target.d
    e_R = R_hat - target.R
    e_y = recompose(out) - np.asarray(target.R)[..., None] * target.d
    denom = R_hat * np.linalg.norm(e_d, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(denom > 0, np.abs(e_R) / np.where(denom > 0, denom, 1.0), np.nan)
    return ErrorTriple(e_y, e_d, e_R, eps)


@dataclass(frozen=True)
class LowerBound:
    lower: np.ndarray  # u * (1 - eps), or 0 where eps is undefined or >= 1
    epsilon: np.ndarray  # nan where undefined
    e_y_norm: np.ndarray
    u: np.ndarray
    sandwich_lo: np.ndarray  # R_hat |e_d| - |e_R|
    sandwich_hi: np.ndarray  # R_hat |e_d| + |e_R|

    @property
    def epsilon_defined(self) -> np.ndarray:
        return np.isfinite(self.epsilon)


def error_lower_bound(target: TargetDecomposition, out: HCMOutput) -> LowerBound:
    """Error lower bound ``|e_y| >= u (1 - eps)`` with ``eps = |e_R| / (R_hat |e_d|)``."""
    err = errors(target, out)
    u = uncertainty_score(out)
    eps = err.epsilon
    ok = np.isfinite(eps) & (eps < 1)
    lower = np.where(ok, u * (1.0 - np.where(ok, eps, 0.0)), 0.0)
    r_ed = np.asarray(out.R_hat) * np.linalg.norm(err.e_d, axis=-1)
    abs_eR = np.abs(err.e_R)
    return LowerBound(lower, eps, np.linalg.norm(err.e_y, axis=-1), u, r_ed - abs_eR, r_ed + abs_eR)


class NoiseEstimate(NamedTuple):
    estimate: float  # R*^2 |1 - |d*|^2| / (D - 1)
    std_error: float  # batch-means Monte-Carlo standard error of ``estimate``
    magnitude_sq: float  # E|y|^2
    direction_norm_sq: float  # |E[y/|y|]|^2
    remainder: float  # (D+2)(D+4) sigma^4 / ((D-1) |g|^2)


def noise_remainder(g_norm: float, D: int, sigma: float) -> float:
    return (D + 2) * (D + 4) * sigma**4 / ((D - 1) * g_norm**2)


def noise_variance_oracle(g_norm: float, D: int, sigma: float, n_samples: int = 10**6,
                    seed: int = 0, n_batches: int = 20) -> NoiseEstimate:
    """Monte-Carlo population minimizers for ``y = g + N(0, sigma^2 I)``.

    Estimates ``R*^2 = E|y|^2`` and ``d* = E[y/|y|]`` and returns the variance
    surrogate built from them. Samples are split into ``n_batches`` blocks,
    each with its own spawned seed, reduced in a fixed order; the spread of the
    per-block estimates gives the standard error.
    """
    _check_dim(D)
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if g_norm <= 0 or sigma < 0:
        raise ValueError("need g_norm > 0 and sigma >= 0")
    rem = noise_remainder(g_norm, D, sigma)
    if sigma == 0:
        return NoiseEstimate(0.0, 0.0, float(g_norm**2), 1.0, rem)

    g = np.zeros(D)
    g[0] = g_norm
    n_batches = max(1, min(n_batches, n_samples))
    sizes = np.full(n_batches, n_samples // n_batches)
    sizes[: n_samples % n_batches] += 1
    children = np.random.SeedSequence(seed).spawn(n_batches)
    r2_sums, d_sums, per_batch = [], [], []
    for size, child in zip(sizes, children):
        rng = np.random.default_rng(child)
        r2_acc, d_acc = 0.0, np.zeros(D)
        for lo in range(0, int(size), 100_000):
            m = min(100_000, int(size) - lo)
            y = g + sigma * rng.standard_normal((m, D))
            r2 = np.einsum("ij,ij->i", y, y)
            r2_acc += r2.sum()
            d_acc += (y / np.sqrt(r2)[:, None]).sum(axis=0)
        r2_sums.append(r2_acc)
        d_sums.append(d_acc)
        db = d_acc / size
        per_batch.append((r2_acc / size) * abs(1.0 - db @ db) / (D - 1))

    R2 = float(np.sum(r2_sums) / n_samples)
    dbar = np.sum(d_sums, axis=0) / n_samples
    dn2 = float(dbar @ dbar)
    est = R2 * abs(1.0 - dn2) / (D - 1)
    se = float(np.std(per_batch, ddof=1) / np.sqrt(n_batches)) if n_batches > 1 else float("nan")
    return NoiseEstimate(float(est), se, R2, dn2, rem)


# operation names used by the published interface
prop1_bound = error_lower_bound
prop2_mc_oracle = noise_variance_oracle
