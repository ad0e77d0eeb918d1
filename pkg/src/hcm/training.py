"""Mini-batch training of an MLP with a direction head and a magnitude head.

The network's raw output has ``D + 1`` units: the first ``D`` are ``d_hat``,
the last is ``R_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import Dirichlet, Pairwise, mix_arrays, mixup_weights
from .head import HCMOutput, decompose
from .loss import LossSpec, loss_grad, loss_total


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, step: int, detail: str):
        self.epoch, self.step = epoch, step
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {detail}")


def hcm_specs(input_width: int, hidden: list[int], D: int, activation: str = "relu",
              slope: float = 0.01) -> list[nn.LayerSpec]:
    return nn.mlp_specs([input_width, *hidden, D + 1], activation, slope)


def hcm_output(params: nn.NetworkParams, x) -> HCMOutput:
    return HCMOutput.from_raw(nn.predict(params, x))


@dataclass
class History:
    dir_term: list[float] = field(default_factory=list)
    mag_term: list[float] = field(default_factory=list)
    norm_term: list[float] = field(default_factory=list)

    @property
    def total(self) -> list[float]:
        return [a + b + c for a, b, c in zip(self.dir_term, self.mag_term, self.norm_term)]

    def rows(self):
        for i, (a, b, c) in enumerate(zip(self.dir_term, self.mag_term, self.norm_term)):
            yield i, a, b, c, a + b + c


def train(params: nn.NetworkParams, x, y, loss: LossSpec = LossSpec(),
          optimizer: nn.SGD | nn.Adam = nn.Adam(), epochs: int = 100, batch_size: int = 32,
          seed: int = 0, mixup: Pairwise | Dirichlet | None = None,
          milestones: tuple[int, ...] = (), gamma: float = 0.1) -> History:
    """Train ``params`` in place on targets ``y`` (n, D). Returns per-epoch mean loss terms.

    With ``mixup`` set, each batch is replaced by convex mixtures of its own
    samples before the targets are decomposed. The learning rate is multiplied
    by ``gamma`` at each epoch listed in ``milestones``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if params.output_width != y.shape[1] + 1:
        raise nn.DimensionError(f"network has {params.output_width} outputs; "
                                f"targets of width {y.shape[1]} need {y.shape[1] + 1}")
    target = decompose(y) if mixup is None else None
    state = nn.make_optimizer(optimizer, params)
    rng = np.random.default_rng(seed)
    hist = History()
    step_no = 0
    for epoch in range(epochs):
        if epoch in milestones:
            state.kind = replace(state.kind, lr=state.kind.lr * gamma)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            xb = x[idx]
            if mixup is None:
                tb = type(target)(target.R[idx], target.d[idx])
            else:
                src, w = mixup_weights(len(idx), mixup, rng)
                xb, yb = mix_arrays(xb, y[idx], src, w)
                tb = decompose(yb)
            acts = nn.forward(params, xb)
            out = HCMOutput.from_raw(acts[-1])
            br = loss_total(loss, tb, out)
            batch_terms = np.array([br.dir_term.sum(), br.mag_term.sum(), br.norm_term.sum()])
            if not np.all(np.isfinite(batch_terms)):
                raise TrainingDiverged(epoch, step_no, f"loss terms {batch_terms.tolist()}")
            sums += batch_terms
            g_R, g_d = loss_grad(loss, tb, out)
            grad_out = np.concatenate([g_d, g_R[:, None]], axis=1) / len(idx)
            grads = nn.backward(params, acts, grad_out)
            nn.step(state, params, grads)
            step_no += 1
        hist.dir_term.append(float(sums[0] / n))
        hist.mag_term.append(float(sums[1] / n))
        hist.norm_term.append(float(sums[2] / n))
    return hist


def fold_scaling(params: nn.NetworkParams, input_scale=1.0, target_scale: float = 1.0
                 ) -> nn.NetworkParams:
    """Absorb ``x / input_scale`` and ``y / target_scale`` preprocessing into the weights.

    The returned network takes raw inputs and predicts ``R_hat`` in raw target
    units; the direction head is scale-free and left untouched.
    """
    out = params.copy()
    s = np.broadcast_to(np.asarray(input_scale, dtype=np.float64), (params.input_width,))
    out.weights[0] = out.weights[0] / s[None, :]
    out.weights[-1][-1] *= target_scale
    out.biases[-1][-1] *= target_scale
    return out
