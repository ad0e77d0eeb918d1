import json

import numpy as np
import pytest

from hcm import nn
from hcm.head import HCMOutput, decompose
from hcm.loss import Huber, LossSpec, PowerP, SmoothL1, loss_grad, loss_total


def single_layer(activation="identity", w=None, b=None):
    spec = nn.LayerSpec(2, 2, activation)
    w = np.eye(2) if w is None else np.asarray(w, dtype=float)
    b = np.zeros(2) if b is None else np.asarray(b, dtype=float)
    return nn.NetworkParams([spec], [w], [b])


def test_identity_layer_forward():
    np.testing.assert_array_equal(nn.predict(single_layer(), [3.0, 4.0]), [3.0, 4.0])


def test_relu_clamps_negatives():
    np.testing.assert_array_equal(nn.predict(single_layer("relu"), [-1.0, 2.0]), [0.0, 2.0])


def test_leaky_relu_slope():
    p = nn.NetworkParams([nn.LayerSpec(2, 2, "leaky_relu", 0.01)], [np.eye(2)], [np.zeros(2)])
    np.testing.assert_allclose(nn.predict(p, [-1.0, 2.0]), [-0.01, 2.0])


def test_forward_matches_independent_matmul():
    p = nn.init_params(nn.mlp_specs([2, 16, 3]), seed=7)
    x = np.array([0.5, -0.5])
    w0, w1 = p.weights
    b0, b1 = p.biases
    h = np.maximum(0.0, w0 @ x + b0)
    expected = w1 @ h + b1
    np.testing.assert_allclose(nn.predict(p, x), expected, rtol=0, atol=1e-14)


def test_forward_returns_every_layer():
    p = nn.init_params(nn.mlp_specs([3, 5, 4, 2]), seed=1)
    acts = nn.forward(p, np.ones((6, 3)))
    assert [a.shape for a in acts] == [(6, 3), (6, 5), (6, 4), (6, 2)]


def test_forward_dimension_error_names_layer():
    p = nn.init_params(nn.mlp_specs([2, 4, 1]), seed=0)
    with pytest.raises(nn.DimensionError, match="layer 0"):
        nn.forward(p, np.ones(3))


def test_backward_linear_chain_rule():
    p = single_layer()
    acts = nn.forward(p, np.array([1.0, 2.0]))
    g = nn.backward(p, acts, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(g.weights[0][0], [1.0, 2.0])
    np.testing.assert_array_equal(g.weights[0][1], [0.0, 0.0])
    np.testing.assert_array_equal(g.biases[0], [1.0, 0.0])


def test_backward_zero_grad():
    p = nn.init_params(nn.mlp_specs([2, 8, 2]), seed=3)
    acts = nn.forward(p, np.array([0.3, -1.2]))
    g = nn.backward(p, acts, np.zeros(2))
    assert all(np.all(a == 0) for a in g.arrays())


def test_backward_nonfinite_reports_coordinate():
    p = nn.init_params(nn.mlp_specs([2, 3, 2]), seed=3)
    acts = nn.forward(p, np.array([0.3, -1.2]))
    with pytest.raises(nn.NonFiniteGradientError) as err:
        nn.backward(p, acts, np.array([np.inf, 0.0]))
    # parameters are scanned in order w0, b0, w1, ...; the first bad entry is reported
    assert (err.value.layer, err.value.which, err.value.index) == (0, "weight", (0, 0))


def _flat_fd(params, loss_fn, h=1e-5):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            fp = loss_fn(params)
            arr[i] = old - h
            fm = loss_fn(params)
            arr[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def _assert_rel(analytic, numeric, tol=1e-4):
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.abs(a), np.abs(n))
        err = np.abs(a - n)
        # exact zeros on both sides (dead units) are agreement
        ok = (err <= tol * scale) | (scale == 0)
        assert ok.all(), f"max rel err {np.max(err[~ok] / scale[~ok]):.3g}"


def test_backward_squared_error_fd():
    rng = np.random.default_rng(0)
    p = nn.init_params(nn.mlp_specs([2, 8, 2]), seed=11)
    x = rng.standard_normal((5, 2))
    y = rng.standard_normal((5, 2))

    def loss(params):
        return 0.5 * np.sum((nn.predict(params, x) - y) ** 2)

    acts = nn.forward(p, x)
    g = nn.backward(p, acts, acts[-1] - y)
    _assert_rel(g.arrays(), _flat_fd(p, loss))


def _hcm_loss_and_grad(spec, params, x, y):
    target = decompose(y)

    def loss(pp):
        out = HCMOutput.from_raw(nn.predict(pp, x))
        return float(loss_total(spec, target, out).total.sum())

    acts = nn.forward(params, x)
    out = HCMOutput.from_raw(acts[-1])
    g_R, g_d = loss_grad(spec, target, out)
    return loss, nn.backward(params, acts, np.concatenate([g_d, g_R[:, None]], axis=1))


@pytest.mark.parametrize("widths,activation", [
    ([2, 16, 3], "relu"),
    ([2, 16, 16, 3], "leaky_relu"),
    ([400, 50, 26], "relu"),
])
def test_architecture_fd(widths, activation):
    rng = np.random.default_rng(sum(widths))
    p = nn.init_params(nn.mlp_specs(widths, activation), seed=5)
    n = 3
    x = rng.standard_normal((n, widths[0]))
    y = rng.standard_normal((n, widths[-1] - 1)) + 2.0
    spec = LossSpec(PowerP(2.0), Huber(0.5), SmoothL1(0.3), lambda_norm=0.7)
    loss, g = _hcm_loss_and_grad(spec, p, x, y)
    _assert_rel(g.arrays(), _flat_fd(p, loss))


def test_sgd_step():
    p = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[1.0]])], [np.array([0.0])])
    g = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[2.0]])], [np.array([0.0])])
    state = nn.make_optimizer(nn.SGD(0.1), p)
    nn.step(state, p, g)
    assert p.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)
    assert state.t == 1


def test_adam_degenerate_betas_is_sign_descent():
    p = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[0.0]])], [np.array([0.0])])
    g = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[4.0]])], [np.array([0.0])])
    state = nn.make_optimizer(nn.Adam(lr=1.0, beta1=0.0, beta2=0.0, eps=0.0), p)
    nn.step(state, p, g)
    assert p.weights[0][0, 0] == pytest.approx(-1.0, abs=1e-15)


def test_adam_converges_on_quadratic():
    p = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[0.0]])], [np.array([0.0])])
    state = nn.make_optimizer(nn.Adam(lr=0.1), p)
    for _ in range(200):
        y = p.weights[0][0, 0]
        g = nn.NetworkParams([nn.LayerSpec(1, 1)], [np.array([[2 * (y - 3.0)]])], [np.array([0.0])])
        nn.step(state, p, g)
    assert abs(p.weights[0][0, 0] - 3.0) < 1e-2
    assert state.t == 200


def test_step_shape_mismatch():
    p = nn.init_params(nn.mlp_specs([2, 3, 1]), seed=0)
    q = nn.init_params(nn.mlp_specs([2, 4, 1]), seed=0)
    with pytest.raises(nn.DimensionError):
        nn.step(nn.make_optimizer(nn.SGD(), p), p, q)


def test_optimizer_validation():
    with pytest.raises(ValueError):
        nn.SGD(0.0)
    with pytest.raises(ValueError):
        nn.Adam(beta1=1.0)


def test_init_deterministic():
    a = nn.init_params(nn.mlp_specs([3, 7, 2]), seed=42)
    b = nn.init_params(nn.mlp_specs([3, 7, 2]), seed=42)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))


def test_init_scale_and_zero_bias():
    p = nn.init_params([nn.LayerSpec(100, 100)], seed=0)
    assert abs(p.weights[0].std() - 0.1) < 0.01
    assert np.all(p.biases[0] == 0)


def test_init_rejects_bad_specs():
    with pytest.raises(ValueError):
        nn.init_params([], seed=0)
    with pytest.raises(nn.DimensionError):
        nn.init_params([nn.LayerSpec(2, 3), nn.LayerSpec(4, 1)], seed=0)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        nn.LayerSpec(0, 2)
    with pytest.raises(ValueError):
        nn.LayerSpec(2, 2, "leaky_relu", slope=1.5)
    with pytest.raises(ValueError):
        nn.LayerSpec(2, 2, "tanh")


def test_checkpoint_roundtrip(tmp_path):
    p = nn.init_params(nn.mlp_specs([3, 5, 2], "leaky_relu", 0.05), seed=9)
    p.save(tmp_path / "p.json")
    q = nn.NetworkParams.load(tmp_path / "p.json")
    assert q.seed == 9
    assert [s.to_dict() for s in q.specs] == [s.to_dict() for s in p.specs]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(p.arrays(), q.arrays()))
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["layers"][0]["activation"] == "leaky_relu"
    assert len(doc["layers"][0]["weight"]) == 5  # row-major (out, in)


def test_checkpoint_rejects_nonfinite():
    doc = nn.init_params(nn.mlp_specs([1, 1]), seed=0).to_dict()
    doc["layers"][0]["weight"] = [[float("nan")]]
    with pytest.raises(ValueError, match="non-finite"):
        nn.NetworkParams.from_dict(doc)
