"""Training objective over ``(R_hat, d_hat)`` and its analytic gradient.

    total = phi_d(R |e_d|) + phi_R(|e_R|) + lambda_norm * phi_norm(| |d_hat| - 1 |)

The direction term is weighted by the ground-truth magnitude ``R``. The
unrelaxed squared error ``|R_hat d_hat - R d|^2`` is available as
``loss_exact_primal`` for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .head import HCMOutput, TargetDecomposition


@dataclass(frozen=True)
class PowerP:
    p: float = 2.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"power p must be >= 1, got {self.p}")

    def value(self, z):
        return np.power(z, self.p)

    def deriv(self, z):
        # subgradient 0 at the origin
        z = np.asarray(z, dtype=np.float64)
        safe = np.where(z > 0, z, 1.0)
        return np.where(z > 0, self.p * np.power(safe, self.p - 1.0), 0.0)

    def to_dict(self):
        return {"kind": "power", "p": self.p}


@dataclass(frozen=True)
class Huber:
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("Huber delta must be positive")

    def value(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z <= self.delta, 0.5 * z * z, self.delta * (z - 0.5 * self.delta))

    def deriv(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z <= self.delta, z, self.delta)

    def to_dict(self):
        return {"kind": "huber", "delta": self.delta}


@dataclass(frozen=True)
class SmoothL1:
    beta: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("smooth-L1 beta must be positive")

    def value(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z <= self.beta, z * z / (2 * self.beta), z - 0.5 * self.beta)

    def deriv(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z <= self.beta, z / self.beta, 1.0)

    def to_dict(self):
        return {"kind": "smooth_l1", "beta": self.beta}


Phi = PowerP | Huber | SmoothL1


def phi_from_dict(doc: dict) -> Phi:
    kind = doc.get("kind")
    if kind == "power":
        return PowerP(float(doc.get("p", 2.0)))
    if kind == "huber":
        return Huber(float(doc.get("delta", 1.0)))
    if kind == "smooth_l1":
        return SmoothL1(float(doc.get("beta", 1.0)))
    raise ValueError(f"unknown phi family {kind!r}; expected power, huber or smooth_l1")


def phi(family: Phi, z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise ValueError("phi is defined on z >= 0")
    return family.value(z)


@dataclass(frozen=True)
class LossSpec:
    phi_d: Phi = PowerP(2.0)
    phi_R: Phi = PowerP(2.0)
    phi_norm: Phi = PowerP(2.0)
    lambda_norm: float = 0.0

    def __post_init__(self):
        if self.lambda_norm < 0:
            raise ValueError("lambda_norm must be non-negative")

    def to_dict(self) -> dict:
        return {"phi_d": self.phi_d.to_dict(), "phi_R": self.phi_R.to_dict(),
                "phi_norm": self.phi_norm.to_dict(), "lambda_norm": self.lambda_norm}

    @classmethod
    def from_dict(cls, doc: dict) -> LossSpec:
        unknown = set(doc) - {"phi_d", "phi_R", "phi_norm", "lambda_norm"}
        if unknown:
            raise ValueError(f"unknown loss keys: {sorted(unknown)}")
        default = PowerP(2.0).to_dict()
        return cls(phi_from_dict(doc.get("phi_d", default)), phi_from_dict(doc.get("phi_R", default)),
                   phi_from_dict(doc.get("phi_norm", default)), float(doc.get("lambda_norm", 0.0)))


@dataclass(frozen=True)
class LossBreakdown:
    dir_term: np.ndarray
    mag_term: np.ndarray
    norm_term: np.ndarray

    @property
    def total(self):
        return self.dir_term + self.mag_term + self.norm_term

    def mean(self) -> LossBreakdown:
        return LossBreakdown(*(float(np.mean(t)) for t in (self.dir_term, self.mag_term, self.norm_term)))


def loss_total(spec: LossSpec, target: TargetDecomposition, out: HCMOutput) -> LossBreakdown:
    if target.D != out.D:
        raise ValueError(f"target dimension {target.D} != prediction dimension {out.D}")
    R = np.asarray(target.R, dtype=np.float64)
    e_d = np.linalg.norm(out.d_hat - target.d, axis=-1)
    e_R = np.abs(np.asarray(out.R_hat, dtype=np.float64) - R)
    viol = np.abs(out.d_norm - 1.0)
    norm = spec.lambda_norm * spec.phi_norm.value(viol) if spec.lambda_norm else np.zeros_like(viol)
    return LossBreakdown(spec.phi_d.value(R * e_d), spec.phi_R.value(e_R), norm)


def loss_grad(spec: LossSpec, target: TargetDecomposition, out: HCMOutput
              ) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dL/dR_hat, dL/dd_hat)``; subgradient 0 at every kink."""
    R = np.asarray(target.R, dtype=np.float64)
    R_hat = np.asarray(out.R_hat, dtype=np.float64)

    e_R = R_hat - R
    g_R = spec.phi_R.deriv(np.abs(e_R)) * np.sign(e_R)

    diff = out.d_hat - target.d
    nd = np.linalg.norm(diff, axis=-1)
    scale = spec.phi_d.deriv(R * nd) * R
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(nd > 0, scale / np.where(nd > 0, nd, 1.0), 0.0)
    g_d = coef[..., None] * diff

    if spec.lambda_norm:
        n = out.d_norm
        dev = n - 1.0
        c = spec.lambda_norm * spec.phi_norm.deriv(np.abs(dev)) * np.sign(dev)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(n > 0, c / np.where(n > 0, n, 1.0), 0.0)
        g_d = g_d + c[..., None] * out.d_hat
    return g_R, g_d


def loss_exact_primal(target: TargetDecomposition, out: HCMOutput) -> np.ndarray:
    """Squared prediction error ``|R_hat d_hat - R d|^2``."""
    e_y = np.asarray(out.R_hat)[..., None] * out.d_hat - np.asarray(target.R)[..., None] * target.d
    return np.einsum("...i,...i->...", e_y, e_y)


def primal_expansion(target: TargetDecomposition, out: HCMOutput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three summands of ``|e_y|^2 = |R_hat e_d|^2 + e_R^2 + 2 R_hat e_R <e_d, d>``."""
    R_hat = np.asarray(out.R_hat, dtype=np.float64)
    e_d = out.d_hat - target.d
    e_R = R_hat - target.R
    directional = R_hat**2 * np.einsum("...i,...i->...", e_d, e_d)
    cross = 2 * R_hat * e_R * np.einsum("...i,...i->...", e_d, target.d)
    return directional, e_R**2, cross
