import numpy as np
import pytest

from conftest import assert_grad_close, numeric_grad
from errors import ContractError, NumericError, ShapeError
from tensor_core import (
    Graph,
    ParamBundle,
    Tensor,
    evaluate,
    gradients,
    make_optimizer,
    optimizer_step,
    rng_stream,
)


def _check_unary(build, x: np.ndarray, seed: int = 0):
    """Compare d/dx sum(w * build(g, x)) with finite differences."""
    shape_graph = Graph()
    w = np.random.default_rng(seed).standard_normal(build(shape_graph, shape_graph.constant(x)).shape)

    def f(v):
        g = Graph()
        return float((build(g, g.constant(v)) * w).sum().value)

    g = Graph()
    leaf = g.leaf(x, requires_grad=True)
    loss = (build(g, leaf) * w).sum()
    assert_grad_close(gradients(g, loss)[leaf.id].data, numeric_grad(f, x))


def _away_from_zero(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    return np.where(np.abs(x) < 0.1, 0.5, x)


@pytest.mark.parametrize("seed", range(20))
def test_elementwise_grads(seed):
    x = _away_from_zero((3, 4), seed)
    _check_unary(lambda g, v: v.exp(), x, seed)
    _check_unary(lambda g, v: v.tanh(), x, seed)
    _check_unary(lambda g, v: v.sigmoid(), x, seed)
    _check_unary(lambda g, v: g.leaky_relu(v, 0.2), x, seed)
    _check_unary(lambda g, v: (v * v + 1.0).log(), x, seed)
    _check_unary(lambda g, v: g.softmax(v, axis=1), x, seed)
    _check_unary(lambda g, v: g.clip(v, -3.0, 3.0), x, seed)


@pytest.mark.parametrize("seed", range(20))
def test_structural_grads(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 3))
    b = rng.standard_normal((3,))
    m = rng.standard_normal((3, 5))
    _check_unary(lambda g, v: v + b, x, seed)
    _check_unary(lambda g, v: v * b - v, x, seed)
    _check_unary(lambda g, v: v @ m, x, seed)
    _check_unary(lambda g, v: v.sum(axis=0), x, seed)
    _check_unary(lambda g, v: v.mean(axis=1, keepdims=True), x, seed)
    _check_unary(lambda g, v: v.reshape(2, 6), x, seed)
    _check_unary(lambda g, v: g.concat([v, g.constant(m.T)], axis=0), x, seed)
    _check_unary(lambda g, v: g.embedding(v, [0, 2, 2, 3]), x, seed)


@pytest.mark.parametrize("seed", range(20))
def test_image_op_grads(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    _check_unary(lambda g, v: g.conv2d(v, g.constant(w), stride=2, padding=1), x, seed)
    _check_unary(lambda g, v: g.conv2d(g.constant(x), v, stride=1, padding=1), w, seed)
    _check_unary(lambda g, v: g.upsample2d(v, 2), x, seed)

    gamma, beta = rng.uniform(0.5, 1.5, 2), rng.standard_normal(2)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    for train in (True, False):
        _check_unary(
            lambda g, v: g.batch_norm(v, g.constant(gamma), g.constant(beta), rm, rv, train), x, seed
        )
        _check_unary(
            lambda g, v: g.batch_norm(g.constant(x), v, g.constant(beta), rm, rv, train), gamma, seed
        )


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = Graph()
    out = g.conv2d(g.constant(x), g.constant(w), stride=2, padding=1).value
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                expected[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_batch_norm_saves_batch_statistics():
    x = np.arange(16, dtype=float).reshape(2, 2, 2, 2)
    g = Graph()
    node = g.batch_norm(g.constant(x), g.constant(np.ones(2)), g.constant(np.zeros(2)),
                        np.zeros(2), np.ones(2), train=True)
    np.testing.assert_allclose(node.saved["mean"], x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(node.saved["var"], x.var(axis=(0, 2, 3)))
    assert node.saved["count"] == 8


def test_dropout_is_identity_in_eval_mode():
    g = Graph()
    x = g.constant(np.ones((3, 3)))
    assert g.dropout(x, 0.5, None, train=False) is x
    with pytest.raises(ContractError):
        g.dropout(x, 0.5, None, train=True)


def test_unreached_leaves_get_zero_gradients():
    g = Graph()
    a = g.leaf(np.ones(3), requires_grad=True)
    b = g.leaf(np.ones(2), requires_grad=True)
    grads = gradients(g, (a * 2.0).sum())
    np.testing.assert_array_equal(grads[a.id].data, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(grads[b.id].data, [0.0, 0.0])


def test_gradients_need_a_scalar():
    g = Graph()
    a = g.leaf(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        gradients(g, a * 2.0)


def test_evaluate_returns_a_copy():
    g = Graph()
    n = g.constant([1.0, 2.0]) + 1.0
    t = evaluate(g, n)
    assert isinstance(t, Tensor)
    t.data[0] = 99.0
    np.testing.assert_array_equal(n.value, [2.0, 3.0])


def test_shape_errors():
    g = Graph()
    with pytest.raises(ShapeError):
        g.constant(np.ones((2, 3))) @ g.constant(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        g.constant(np.ones(3)) + g.constant(np.ones(4))


def test_log_rejects_non_positive():
    g = Graph()
    with pytest.raises(NumericError):
        g.constant([1.0, 0.0]).log()


def test_nodes_from_another_graph_are_rejected():
    a, b = Graph(), Graph()
    with pytest.raises(ContractError):
        a.add(a.constant(1.0), b.constant(1.0))


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def test_sgd_step():
    params, state = optimizer_step({"w": np.array([1.0, 2.0])}, {"w": np.array([0.5, -1.0])},
                                   make_optimizer("sgd", 0.1))
    np.testing.assert_allclose(params["w"], [0.95, 2.1])
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    # bias-corrected first Adam step is lr * sign(g) (up to eps)
    params, _ = optimizer_step({"w": np.array([1.0, -1.0])}, {"w": np.array([3.0, -0.2])},
                               make_optimizer("adam", 0.01))
    np.testing.assert_allclose(params["w"], [0.99, -0.99], atol=1e-7)


def test_adadelta_first_step():
    g = np.array([2.0])
    params, state = optimizer_step({"w": np.array([0.0])}, {"w": g}, make_optimizer("adadelta", 1.0))
    sq = 0.1 * g * g
    delta = np.sqrt(1e-6) / np.sqrt(sq + 1e-6) * g
    np.testing.assert_allclose(params["w"], -delta)
    np.testing.assert_allclose(state.moments["acc_delta"]["w"], 0.1 * delta * delta)


def test_optimizer_step_is_functional():
    state = make_optimizer("adam", 0.1)
    w = np.array([1.0])
    optimizer_step({"w": w}, {"w": np.array([1.0])}, state)
    assert state.step == 0 and not state.moments
    np.testing.assert_array_equal(w, [1.0])


def test_optimizer_refuses_non_finite_gradients():
    with pytest.raises(NumericError):
        optimizer_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, make_optimizer("sgd", 0.1))


def test_optimizer_requires_matching_names():
    with pytest.raises(ShapeError):
        optimizer_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, make_optimizer("sgd", 0.1))


def test_unknown_optimizer():
    with pytest.raises(ContractError):
        make_optimizer("rmsprop", 0.1)


# ---------------------------------------------------------------------------
# Parameter bundles and RNG streams
# ---------------------------------------------------------------------------

def test_param_bundle_bind_respects_prefixes():
    bundle = ParamBundle(params={"g.w": np.ones(2), "d.w": np.ones(2)})
    g = Graph()
    nodes = bundle.bind(g, trainable=("d.",))
    assert not g.nodes[nodes["g.w"].id].requires_grad
    assert g.nodes[nodes["d.w"].id].requires_grad


def test_param_bundle_with_params_and_equals():
    bundle = ParamBundle(params={"a": np.zeros(2), "b": np.ones(1)}, buffers={"m": np.zeros(1)})
    updated = bundle.with_params({"a": np.array([1.0, 2.0])})
    np.testing.assert_array_equal(updated.params["a"], [1.0, 2.0])
    np.testing.assert_array_equal(bundle.params["a"], [0.0, 0.0])
    assert bundle.equals(bundle.copy())
    assert not bundle.equals(updated)
    assert bundle.size == 3


def test_rng_streams_are_addressed_not_advanced():
    a = rng_stream(7, "base", 1, 2).standard_normal(4)
    b = rng_stream(7, "base", 1, 2).standard_normal(4)
    c = rng_stream(7, "base", 2, 1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
