"""Small dense networks with hand-written reverse-mode gradients.

Everything is float64. A network is a list of affine layers, each followed by
an elementwise activation. ``forward`` returns the full activation list and
``backward`` consumes exactly that list, so the two never drift apart.

Inputs may be a single vector ``(in,)`` or a batch ``(n, in)``. For a batch,
``backward`` returns gradients summed over rows; callers that want a mean
reduction scale ``output_grad`` by ``1/n`` first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "relu", "leaky_relu")


class DimensionError(ValueError):
    """Input or gradient width does not match the network."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, layer: int, which: str, index: tuple[int, ...], value: float):
        self.layer = layer
        self.which = which
        self.index = index
        self.value = value
        super().__init__(
            f"non-finite gradient {value!r} in layer {layer} {which}{list(index)}"
        )


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = "identity"
    slope: float = 0.01  # only used by leaky_relu

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ValueError(f"layer widths must be >= 1, got {self.input_width}->{self.output_width}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {self.slope}")

    def to_dict(self) -> dict:
        d = {"input_width": self.input_width, "output_width": self.output_width,
             "activation": self.activation}
        if self.activation == "leaky_relu":
            d["slope"] = self.slope
        return d


def mlp_specs(widths: list[int], activation: str = "relu", slope: float = 0.01) -> list[LayerSpec]:
    """Layer specs for a plain MLP; the last layer is always linear."""
    if len(widths) < 2:
        raise ValueError("need at least input and output width")
    specs = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        specs.append(LayerSpec(a, b, "identity" if last else activation, slope))
    return specs


@dataclass
class NetworkParams:
    specs: list[LayerSpec]
    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]  # each (out,)
    seed: int = 0

    def __post_init__(self):
        if not (len(self.specs) == len(self.weights) == len(self.biases)):
            raise ValueError("specs, weights and biases must have equal length")
        for i, (s, w, b) in enumerate(zip(self.specs, self.weights, self.biases)):
            if w.shape != (s.output_width, s.input_width) or b.shape != (s.output_width,):
                raise DimensionError(f"layer {i}: parameter shapes {w.shape}, {b.shape} do not match spec")
            if i and self.specs[i - 1].output_width != s.input_width:
                raise DimensionError(f"layer {i}: input width {s.input_width} does not chain "
                                     f"from previous output width {self.specs[i - 1].output_width}")

    @property
    def input_width(self) -> int:
        return self.specs[0].input_width

    @property
    def output_width(self) -> int:
        return self.specs[-1].output_width

    def arrays(self) -> list[np.ndarray]:
        """Flat view order used by optimizers: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> NetworkParams:
        return NetworkParams(list(self.specs), [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.seed)

    def zeros_like(self) -> NetworkParams:
        return NetworkParams(list(self.specs), [np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases], self.seed)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "layers": [
                {**s.to_dict(), "weight": w.tolist(), "bias": b.tolist()}
                for s, w, b in zip(self.specs, self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> NetworkParams:
        specs, ws, bs = [], [], []
        for i, layer in enumerate(doc["layers"]):
            spec = LayerSpec(int(layer["input_width"]), int(layer["output_width"]),
                             layer.get("activation", "identity"), float(layer.get("slope", 0.01)))
            w = np.asarray(layer["weight"], dtype=np.float64).reshape(spec.output_width, spec.input_width)
            b = np.asarray(layer["bias"], dtype=np.float64).reshape(spec.output_width)
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: checkpoint contains non-finite values")
            specs.append(spec)
            ws.append(w)
            bs.append(b)
        return cls(specs, ws, bs, int(doc.get("seed", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> NetworkParams:
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(specs: list[LayerSpec], seed: int = 0) -> NetworkParams:
    """Normal weights with std ``1/sqrt(fan_in)``, zero biases."""
    if not specs:
        raise ValueError("cannot build a network from an empty layer list")
    for i in range(1, len(specs)):
        if specs[i].input_width != specs[i - 1].output_width:
            raise DimensionError(f"layer {i}: input width {specs[i].input_width} does not chain "
                                 f"from previous output width {specs[i - 1].output_width}")
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((s.output_width, s.input_width)) / np.sqrt(s.input_width)
               for s in specs]
    biases = [np.zeros(s.output_width) for s in specs]
    return NetworkParams(list(specs), weights, biases, seed)


def _activate(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, z, spec.slope * z)
    return z


def _activation_grad(a: np.ndarray, grad: np.ndarray, spec: LayerSpec) -> np.ndarray:
    # post-activation sign equals pre-activation sign for all supported activations
    if spec.activation == "relu":
        return grad * (a > 0)
    if spec.activation == "leaky_relu":
        return np.where(a > 0, grad, spec.slope * grad)
    return grad


def forward(params: NetworkParams, x) -> list[np.ndarray]:
    """Return ``[x, a_1, ..., a_L]``; the last entry is the network output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (params.input_width,):
        raise DimensionError(f"layer 0: expected input width {params.input_width}, got shape {x.shape}")
    acts = [x]
    a = x
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        a = _activate(a @ w.T + b, spec)
        acts.append(a)
    return acts


def predict(params: NetworkParams, x) -> np.ndarray:
    return forward(params, x)[-1]


def backward(params: NetworkParams, activations: list[np.ndarray], output_grad,
             check_finite: bool = True) -> NetworkParams:
    """Gradients of ``sum(output_grad * output)`` w.r.t. every weight and bias."""
    if len(activations) != len(params.specs) + 1:
        raise DimensionError("activation list does not come from this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != activations[-1].shape:
        raise DimensionError(f"layer {len(params.specs) - 1}: output_grad shape {g.shape} "
                             f"does not match output shape {activations[-1].shape}")
    batched = g.ndim == 2
    gw, gb = [None] * len(params.specs), [None] * len(params.specs)
    for i in range(len(params.specs) - 1, -1, -1):
        spec = params.specs[i]
        g = _activation_grad(activations[i + 1], g, spec)
        a_in = activations[i]
        if batched:
            gw[i] = g.T @ a_in
            gb[i] = g.sum(axis=0)
        else:
            gw[i] = np.outer(g, a_in)
            gb[i] = g.copy()
        if i:
            g = g @ params.weights[i]
    grads = NetworkParams(list(params.specs), gw, gb, params.seed)
    if check_finite:
        for i, (w, b) in enumerate(zip(gw, gb)):
            for name, arr in (("weight", w), ("bias", b)):
                bad = np.argwhere(~np.isfinite(arr))
                if len(bad):
                    idx = tuple(int(j) for j in bad[0])
                    raise NonFiniteGradientError(i, name, idx, float(arr[idx]))
    return grads


# --- optimizers -------------------------------------------------------------


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class OptimizerState:
    kind: SGD | Adam
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def make_optimizer(kind: SGD | Adam, params: NetworkParams) -> OptimizerState:
    arrays = params.arrays()
    if isinstance(kind, Adam):
        return OptimizerState(kind, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])
    return OptimizerState(kind)


def step(state: OptimizerState, params: NetworkParams, grads: NetworkParams
         ) -> tuple[NetworkParams, OptimizerState]:
    """Apply one update in place and return ``(params, state)``."""
    ps, gs = params.arrays(), grads.arrays()
    if len(ps) != len(gs) or any(p.shape != g.shape for p, g in zip(ps, gs)):
        raise DimensionError("gradient shapes do not match parameters")
    state.t += 1
    opt = state.kind
    if isinstance(opt, SGD):
        for p, g in zip(ps, gs):
            p -= opt.lr * g
        return params, state

    if not state.m:
        state.m = [np.zeros_like(p) for p in ps]
        state.v = [np.zeros_like(p) for p in ps]
    bc1 = 1.0 - opt.beta1 ** state.t
    bc2 = 1.0 - opt.beta2 ** state.t
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        denom = np.sqrt(v / bc2) + opt.eps
        # eps = 0 with a zero gradient history would give 0/0; such entries stay put
        p -= opt.lr * np.divide(m / bc1, denom, out=np.zeros_like(p), where=denom > 0)
    return params, state
