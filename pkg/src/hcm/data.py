"""Synthetic datasets, input perturbation, mixup and CSV persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class LabeledSet:
    inputs: np.ndarray  # (n, D*)
    targets: np.ndarray  # (n, D)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if len(self.inputs) < 1:
            raise ValueError("empty dataset")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def labels(self) -> np.ndarray:
        return self.targets.argmax(axis=1)

    def subset(self, idx) -> LabeledSet:
        return LabeledSet(self.inputs[idx], self.targets[idx], dict(self.meta))

    def split(self, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> list[LabeledSet]:
        """Shuffle once and cut into consecutive parts sized by ``fractions``."""
        perm = np.random.default_rng(seed).permutation(len(self))
        cuts = np.round(np.cumsum(fractions)[:-1] / np.sum(fractions) * len(self)).astype(int)
        return [self.subset(part) for part in np.split(perm, cuts)]


# --- generators ---------------------------------------------------------------


@dataclass(frozen=True)
class RampNoise:
    """Gaussian noise whose std rises linearly across ``[x_lo, x_hi]`` and is zero outside."""

    x_lo: float = -2.0
    x_hi: float = 2.0
    sigma_lo: float = 0.0
    sigma_hi: float = 20.0

    def std(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        t = (x - self.x_lo) / (self.x_hi - self.x_lo)
        s = self.sigma_lo + t * (self.sigma_hi - self.sigma_lo)
        return np.where((x >= self.x_lo) & (x <= self.x_hi), s, 0.0)

    def to_dict(self) -> dict:
        return {"kind": "ramp", "x_lo": self.x_lo, "x_hi": self.x_hi,
                "sigma_lo": self.sigma_lo, "sigma_hi": self.sigma_hi}


def gen_cubic(n: int, seed: int = 0, domain=(-4.0, 4.0), noise: RampNoise = RampNoise()) -> LabeledSet:
    """``y = x^3 + N(0, sigma(x)^2)`` with ``x ~ U(domain)``; targets are scalar."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(domain[0], domain[1], n)
    y = x**3 + noise.std(x) * rng.standard_normal(n)
    meta = {"generator": "cubic", "n": n, "seed": seed, "domain": list(domain), "noise": noise.to_dict()}
    return LabeledSet(x[:, None], y[:, None], meta)


def one_hot(label, C: int) -> np.ndarray:
    if C < 2:
        raise ValueError("need at least two classes")
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= C):
        raise ValueError(f"label out of range [0, {C})")
    return np.eye(C)[label]


def moon_curve(t, moon: int) -> np.ndarray:
    """Noise-free moon points at angles ``t`` in [0, pi]."""
    t = np.asarray(t, dtype=np.float64)
    if moon == 0:
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    return np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=-1)


def gen_two_moons(n: int, noise_std: float = 0.1, seed: int = 0) -> LabeledSet:
    """Two interleaved half circles; class 0 on top, class 1 shifted by (1, -0.5) and flipped."""
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even number")
    rng = np.random.default_rng(seed)
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, half)
    x = np.vstack([moon_curve(t0, 0), moon_curve(t1, 1)]) + noise_std * rng.standard_normal((n, 2))
    labels = np.r_[np.zeros(half, dtype=int), np.ones(half, dtype=int)]
    perm = rng.permutation(n)
    meta = {"generator": "two_moons", "n": n, "seed": seed, "noise_std": noise_std}
    return LabeledSet(x[perm], one_hot(labels[perm], 2), meta)


def blob_centers(k: int = 4, dim: int = 2, spacing: float = 6.0, std: float = 1.0) -> np.ndarray:
    """ID centers on a circle of radius ``spacing * std`` (first two coordinates)."""
    if dim < 2:
        raise ValueError("blobs need dim >= 2")
    ang = 2 * np.pi * np.arange(k) / k
    c = np.zeros((k, dim))
    c[:, 0] = np.cos(ang)
    c[:, 1] = np.sin(ang)
    return spacing * std * c


def blob_ood_center(k: int = 4, dim: int = 2, spacing: float = 6.0, std: float = 1.0,
                    ood_radius: float = 1.6) -> np.ndarray:
    """OOD center outside the ring, on the bisector of ID classes 0 and 1."""
    c = blob_centers(k, dim, spacing, std)
    axis = c[0] + c[1]
    axis = axis / np.linalg.norm(axis) if np.linalg.norm(axis) > 0 else c[0] / np.linalg.norm(c[0])
    return ood_radius * spacing * std * axis


def gen_blobs_ood(n_id: int, n_ood: int, dim: int = 2, seed: int = 0, k: int = 4,
                  spacing: float = 6.0, std: float = 1.0, ood_radius: float = 1.6
                  ) -> tuple[LabeledSet, LabeledSet]:
    """``k`` labeled Gaussian clusters on a ring plus one unlabeled cluster beyond it.

    ID centers sit on a circle of radius ``spacing * std``; the OOD center lies
    at ``ood_radius`` times that radius between classes 0 and 1, and must be at
    least ``spacing * std`` from every ID center.
    """
    if n_id < 1 or n_ood < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    centers = blob_centers(k, dim, spacing, std)
    labels = rng.integers(0, k, n_id)
    x_id = centers[labels] + std * rng.standard_normal((n_id, dim))
    ood_center = blob_ood_center(k, dim, spacing, std, ood_radius)
    gap = np.linalg.norm(centers - ood_center, axis=1).min()
    if gap < spacing * std - 1e-9:
        raise ValueError(f"OOD center only {gap / std:.2f} std from an ID center; need >= {spacing}")
    x_ood = ood_center + std * rng.standard_normal((n_ood, dim))
    meta = {"generator": "blobs_ood", "seed": seed, "k": k, "dim": dim, "spacing": spacing,
            "std": std, "ood_radius": ood_radius, "centers": centers.tolist(), "ood_center": ood_center.tolist()}
    id_set = LabeledSet(x_id, one_hot(labels, k), {**meta, "split": "id", "n": n_id})
    ood_set = LabeledSet(x_ood, np.zeros((n_ood, k)), {**meta, "split": "ood", "n": n_ood, "unlabeled": True})
    return id_set, ood_set


def gen_manifold_regression(n: int, seed: int = 0, latent_dim: int = 2, input_dim: int = 8,
                            output_dim: int = 3, noise_std: float = 0.05, offset: float = 3.0,
                            basis_seed: int = 12345) -> LabeledSet:
    """Regression whose inputs live on a ``latent_dim`` subspace of ``input_dim``.

    ``z ~ U(-1, 1)^latent_dim``, ``x = z @ basis`` for a fixed orthonormal basis
    (drawn from ``basis_seed``), and ``y_j = offset + sin(pi * <w_j, z>) + noise``.
    Isotropic input noise pushes samples off the subspace, which the trained
    model has never seen.
    """
    if latent_dim > input_dim:
        raise ValueError("latent_dim must not exceed input_dim")
    brng = np.random.default_rng(basis_seed)
    basis = np.linalg.qr(brng.standard_normal((input_dim, latent_dim)))[0].T
    w = brng.standard_normal((output_dim, latent_dim))
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, (n, latent_dim))
    y = offset + np.sin(np.pi * z @ w.T) + noise_std * rng.standard_normal((n, output_dim))
    meta = {"generator": "manifold_regression", "n": n, "seed": seed, "latent_dim": latent_dim,
            "input_dim": input_dim, "output_dim": output_dim, "noise_std": noise_std,
            "offset": offset, "basis_seed": basis_seed}
    return LabeledSet(z @ basis, y, meta)


# --- transforms ---------------------------------------------------------------


def perturb_inputs(data: LabeledSet, a_max: float, seed: int = 0, amplitude=None) -> LabeledSet:
    """``x' = x + a * eps`` with ``a ~ U(0, a_max)`` per sample and ``eps ~ N(0, I)``.

    ``amplitude`` fixes ``a`` for every sample instead of drawing it.
    """
    if a_max < 0:
        raise ValueError("a_max must be non-negative")
    rng = np.random.default_rng(seed)
    n = len(data)
    a = np.full(n, float(amplitude)) if amplitude is not None else rng.uniform(0.0, a_max, n)
    eps = rng.standard_normal(data.inputs.shape)
    meta = {**data.meta, "perturb": {"a_max": a_max, "seed": seed}, "perturb_amplitude": a.tolist()}
    return LabeledSet(data.inputs + a[:, None] * eps, data.targets.copy(), meta)


@dataclass(frozen=True)
class Pairwise:
    alpha: float = 1.0


@dataclass(frozen=True)
class Dirichlet:
    k: int = 20
    alpha: float = 0.5


def mixup_weights(n: int, mode: Pairwise | Dirichlet, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Source indices ``(n, k)`` and convex weights ``(n, k)`` for ``n`` mixed samples."""
    if isinstance(mode, Pairwise):
        if n < 2:
            raise ValueError("pairwise mixup needs a batch of at least 2")
        lam = rng.beta(mode.alpha, mode.alpha, n)
        idx = np.column_stack([np.arange(n), rng.permutation(n)])
        return idx, np.column_stack([lam, 1.0 - lam])
    if mode.k > n:
        raise ValueError(f"Dirichlet mixup over k={mode.k} samples needs a batch of at least k, got {n}")
    w = rng.dirichlet(np.full(mode.k, mode.alpha), n)
    idx = np.array([rng.choice(n, mode.k, replace=False) for _ in range(n)])
    return idx, w


def mix_arrays(x: np.ndarray, y: np.ndarray, idx: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.einsum("nk,nkd->nd", w, x[idx]), np.einsum("nk,nkd->nd", w, y[idx])


def mixup(batch: LabeledSet, mode: Pairwise | Dirichlet, seed: int = 0) -> LabeledSet:
    rng = np.random.default_rng(seed)
    idx, w = mixup_weights(len(batch), mode, rng)
    x, y = mix_arrays(batch.inputs, batch.targets, idx, w)
    return LabeledSet(x, y, {**batch.meta, "mixup": {"mode": type(mode).__name__, **vars(mode), "seed": seed}})


# --- CSV ----------------------------------------------------------------------


class CSVFormatError(ValueError):
    pass


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def csv_write(data: LabeledSet, path: str | Path) -> None:
    path = Path(path)
    din, dout = data.inputs.shape[1], data.targets.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(din)] + [f"y{j}" for j in range(dout)])
        for xi, yi in zip(data.inputs, data.targets):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])
    meta_path(path).write_text(json.dumps(data.meta, indent=2, sort_keys=True) + "\n")


def _parse_header(header: list[str]) -> tuple[int, int]:
    din = 0
    while din < len(header) and header[din] == f"x{din}":
        din += 1
    dout = len(header) - din
    expected = [f"x{i}" for i in range(din)] + [f"y{j}" for j in range(dout)]
    if din == 0 or dout == 0 or header != expected:
        raise CSVFormatError(f"line 1: header mismatch; expected columns x0..x<m>, y0..y<k>, found {header}")
    return din, dout


def csv_read(path: str | Path, target_shift: float = 0.0) -> LabeledSet:
    """Read a dataset written by ``csv_write``; ``target_shift`` is added to every target."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(f"{path}: empty file")
    din, dout = _parse_header(rows[0])
    if len(rows) < 2:
        raise CSVFormatError(f"{path}: no data rows")
    values = np.empty((len(rows) - 1, din + dout))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != din + dout:
            raise CSVFormatError(f"{path}: line {i}: expected {din + dout} fields, found {len(row)}")
        try:
            values[i - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise CSVFormatError(f"{path}: line {i}: {exc}") from None
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    if target_shift:
        meta["target_shift"] = target_shift
    return LabeledSet(values[:, :din], values[:, din:] + target_shift, meta)


def moon_centroids() -> np.ndarray:
    """Expected class centroids of ``gen_two_moons`` for noise-free uniform angles."""
    m = 2 / math.pi
    return np.array([[0.0, m], [1.0, 0.5 - m]])
