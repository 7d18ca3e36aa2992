import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctrain import nn
from dctrain.autodiff import Graph, evaluate, grad

from oracles import simpson


def relu(x):
    return np.maximum(x, 0.0)


# -- activations ------------------------------------------------------------------

def test_irelu_values():
    assert nn.activation_apply("IRelu", 2.0) == 2.0
    assert nn.activation_apply("IRelu", -3.0) == 0.0


@pytest.mark.parametrize("x", [-1.0, 0.5, 1.7])
def test_irelu_matches_quadrature(x):
    assert abs(nn.activation_apply("IRelu", x) - simpson(relu, 0.0, x, 10_000)) < 1e-8


def test_irelu_quadrature_identity_on_range():
    for x in np.linspace(-10, 10, 81):
        assert abs(nn.activation_apply("IRelu", x) - simpson(relu, 0.0, x, 10_000)) < 1e-8


def test_shifted_softplus_zero_at_origin():
    assert nn.activation_apply("ShiftedSoftplus", 0.0) == 0.0
    assert math.isclose(nn.activation_apply("ShiftedSoftplus", 3.0), math.log1p(math.exp(3.0)) - math.log(2.0))


@pytest.mark.parametrize("kind", list(nn.Activation))
def test_graph_node_matches_scalar(kind):
    xs = np.linspace(-6, 6, 49)
    g = Graph()
    x = g.var("x", xs.shape)
    g.output("y", nn.activation_node(g, kind, x))
    got = evaluate(g, {"x": xs})["y"]
    want = np.array([nn.activation_apply(kind, v) for v in xs])
    np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("kind", list(nn.Activation))
def test_activation_derivatives_match_fd(kind):
    for z in (-1.3, 0.4, 2.2):
        d1, d2 = nn.activation_derivatives(kind, z)
        h = 1e-5
        f = lambda t: nn.activation_apply(kind, t)
        assert d1 == pytest.approx((f(z + h) - f(z - h)) / (2 * h), rel=1e-6, abs=1e-9)
        assert d2 == pytest.approx((f(z + h) - 2 * f(z) + f(z - h)) / h ** 2, rel=1e-3, abs=1e-5)


def test_parse_activation():
    assert nn.Activation.parse("irelu") is nn.Activation.IRELU
    with pytest.raises(ValueError):
        nn.Activation.parse("gelu")


def _irelu_derivative_grid(n=100_001):
    xs = np.linspace(-10.0, 10.0, n)
    assert 0.0 in xs
    g = Graph()
    x = g.var("x", xs.shape)
    g.output("y", g.sum(g.irelu(x)))
    g = grad(g, "y", ["x"])
    g.output("s", g.sum(g.ref("dy/dx")))
    g = grad(g, "s", ["x"])
    return xs, evaluate(g, {"x": xs}, ["dy/dx", "ds/dx"])


def test_irelu_first_derivative_is_relu_exactly():
    xs, out = _irelu_derivative_grid()
    np.testing.assert_array_equal(out["dy/dx"], relu(xs))


def test_irelu_second_derivative_is_heaviside_exactly():
    xs, out = _irelu_derivative_grid()
    np.testing.assert_array_equal(out["ds/dx"], (xs > 0).astype(float))


# -- update ratio -------------------------------------------------------------------------

def test_update_ratio_examples():
    assert nn.update_ratio("Relu", 1.0, 7.0) == 0.5
    assert nn.update_ratio("IRelu", 1.0, 1.0) == pytest.approx(1 / 3, abs=0)
    assert nn.update_ratio("Tanh", 0.0, 5.0) == 0.5


def test_update_ratio_undefined():
    with pytest.raises(nn.UndefinedRatioError):
        nn.update_ratio("Relu", -1.0, 1.0)
    with pytest.raises(nn.UndefinedRatioError):
        nn.update_ratio("IRelu", 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(z=st.floats(0.01, 5), g=st.floats(0, 5))
def test_update_ratio_irelu_closed_form(z, g):
    # sigma' = z and sigma'' = 1 for z > 0
    assert nn.update_ratio("IRelu", z, g) == pytest.approx(1.0 / (2.0 + g / z), rel=1e-12)


# -- construction --------------------------------------------------------------------------

def test_build_deterministic():
    cfg = nn.MLPConfig(2, [8, 8], 1, "Tanh", seed=5)
    a, b = nn.build_mlp(cfg), nn.build_mlp(cfg)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    c = nn.build_mlp(nn.MLPConfig(2, [8, 8], 1, "Tanh", seed=6))
    assert c.params["W0"].tobytes() != a.params["W0"].tobytes()


def test_pinn_default_shapes():
    m = nn.build_mlp(nn.MLPConfig(2, [40] * 6, 1))
    shapes = nn.layer_shapes(m)
    assert shapes[0] == (40, 2) and shapes[-1] == (1, 40)
    assert shapes[1:-1] == [(40, 40)] * 5
    assert len(shapes) == 7 and all(np.all(m.params[f"b{i}"] == 0) for i in range(7))


def test_glorot_bounds():
    m = nn.build_mlp(nn.MLPConfig(30, [50], 1, seed=1))
    limit = math.sqrt(6.0 / 80.0)
    assert np.abs(m.params["W0"]).max() <= limit


def test_zero_hidden_layers_is_affine():
    m = nn.build_mlp(nn.MLPConfig(3, [], 2, "IRelu", seed=2))
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(nn.predict(m, x), x @ m.params["W0"].T + m.params["b0"], rtol=1e-14)


def test_invalid_configs():
    with pytest.raises(ValueError):
        nn.MLPConfig(2, [0], 1)
    with pytest.raises(ValueError):
        nn.MLPConfig(2, [4, 4], 1, activation_overrides=["Tanh"])


def test_activation_overrides():
    cfg = nn.MLPConfig(2, [4, 4, 4], 1, "Tanh", activation_overrides=[None, None, "IRelu"])
    assert [cfg.layer_activation(i) for i in range(3)] == [nn.Activation.TANH] * 2 + [nn.Activation.IRELU]
    g = Graph()
    nn.forward(nn.build_mlp(cfg), g, g.var("x", (3, 2)))
    hist = g.op_histogram()
    assert hist["Tanh"] == 2 and hist["IRelu"] == 1


# -- forward -----------------------------------------------------------------------------

def test_identity_affine_model():
    m = nn.build_mlp(nn.MLPConfig(2, [], 2))
    m.params["W0"] = np.eye(2)
    m.params["b0"] = np.zeros(2)
    np.testing.assert_array_equal(nn.predict(m, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_forward_pure():
    m = nn.build_mlp(nn.MLPConfig(2, [6, 6], 1, "Silu", seed=3))
    x = np.random.default_rng(1).normal(size=(4, 2))
    assert nn.predict(m, x).tobytes() == nn.predict(m, x).tobytes()


def test_irelu_dead_network_gives_bias_path():
    m = nn.build_mlp(nn.MLPConfig(2, [3], 1, "IRelu", seed=0))
    m.params["W0"] = -np.abs(m.params["W0"]) - 0.1
    m.params["b0"] = -np.ones(3)
    m.params["b1"] = np.array([0.75])
    x = np.abs(np.random.default_rng(2).normal(size=(5, 2)))
    np.testing.assert_array_equal(nn.predict(m, x), np.full((5, 1), 0.75))


def test_forward_shape_mismatch():
    m = nn.build_mlp(nn.MLPConfig(2, [4], 1))
    g = Graph()
    with pytest.raises(ValueError):
        nn.forward(m, g, g.var("x", (3, 5)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12), kind=st.sampled_from(list(nn.Activation)))
def test_denormalized_batch_independence(seed, n, kind):
    rng = np.random.default_rng(seed)
    m = nn.build_mlp(nn.MLPConfig(3, [9, 5], 1, kind, seed=seed))
    X = rng.normal(size=(n, 3))
    whole = nn.predict(m, X)
    # BLAS may use different kernels for one row and for many; allow round-off only
    atol = 1e-14 * (1.0 + np.abs(whole).max())
    for i in range(n):
        np.testing.assert_allclose(nn.predict(m, X[i:i + 1]), whole[i:i + 1], rtol=1e-13, atol=atol)
    # permuting the batch permutes the outputs
    perm = rng.permutation(n)
    np.testing.assert_allclose(nn.predict(m, X[perm]), whole[perm], rtol=1e-13, atol=atol)


def test_irelu_homogeneity():
    # single hidden layer, no biases, identity readout exposes the hidden activations
    m = nn.build_mlp(nn.MLPConfig(3, [4], 4, "IRelu", seed=7))
    m.params["W1"] = np.eye(4)
    x = np.random.default_rng(3).normal(size=(10, 3))
    np.testing.assert_array_equal(nn.predict(m, 2.0 * x), 4.0 * nn.predict(m, x))


# -- batch norm ---------------------------------------------------------------------------

def _bn_model():
    return nn.build_mlp(nn.MLPConfig(2, [5], 1, "Tanh", use_batchnorm=True, seed=1))


def test_batchnorm_train_uses_batch_statistics():
    m = _bn_model()
    X = np.random.default_rng(4).normal(size=(16, 2)) * 3 + 1
    g = Graph()
    nn.forward(m, g, g.var("X", X.shape), train=True)
    out = evaluate(g, {"X": X, **nn.bindings(m, train=True)}, ["bn0.batch_mean", "bn0.batch_var"])
    pre = X @ m.params["W0"].T + m.params["b0"]
    np.testing.assert_allclose(out["bn0.batch_mean"], pre.mean(axis=0), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(out["bn0.batch_var"], pre.var(axis=0), rtol=1e-12)


def test_batchnorm_eval_uses_running_statistics():
    m = _bn_model()
    m.buffers["bn0.running_mean"] = np.full(5, 0.5)
    m.buffers["bn0.running_var"] = np.full(5, 4.0)
    X = np.random.default_rng(5).normal(size=(3, 2))
    pre = X @ m.params["W0"].T + m.params["b0"]
    hidden = np.tanh((pre - 0.5) / np.sqrt(4.0 + nn.BN_EPS))
    np.testing.assert_allclose(nn.predict(m, X), hidden @ m.params["W1"].T + m.params["b1"], rtol=1e-13)
    # eval mode is per-sample
    np.testing.assert_allclose(nn.predict(m, X[:1]), nn.predict(m, X)[:1], rtol=1e-13, atol=1e-15)


def test_running_stat_update():
    m = _bn_model()
    stats = {"bn0.batch_mean": np.arange(5.0), "bn0.batch_var": np.full(5, 2.0)}
    nn.update_running_stats(m, stats, "", batch_size=5)
    np.testing.assert_allclose(m.buffers["bn0.running_mean"], 0.1 * np.arange(5.0))
    np.testing.assert_allclose(m.buffers["bn0.running_var"], 0.9 + 0.1 * 2.0 * 5 / 4)


def test_no_norm_blocks_when_denormalized():
    m = nn.build_mlp(nn.MLPConfig(2, [5, 5], 1, use_batchnorm=False))
    assert not m.buffers and not any(k.startswith("bn") for k in m.params)


# -- checkpoints ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = nn.build_mlp(nn.MLPConfig(2, [4, 3], 1, "IRelu", use_batchnorm=True, seed=11,
                                  activation_overrides=["Tanh", None]))
    m.params["W0"] *= np.pi
    m.buffers["bn1.running_var"] = np.array([0.1, 1 / 3, 7.0])
    path = tmp_path / "ck.json"
    nn.save_checkpoint(path, {"energy": m})
    back = nn.load_checkpoint(path)["energy"]
    assert back.config == m.config
    for src, dst in ((m.params, back.params), (m.buffers, back.buffers)):
        assert src.keys() == dst.keys()
        for k in src:
            assert src[k].tobytes() == dst[k].tobytes() and src[k].shape == dst[k].shape
    nn.save_checkpoint(tmp_path / "again.json", {"energy": back})
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
    assert '"seed": 11' in path.read_text()


def test_count_params():
    m = nn.build_mlp(nn.MLPConfig(2, [3], 1))
    assert nn.count_params(m) == 2 * 3 + 3 + 3 + 1
