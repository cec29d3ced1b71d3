import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avsteer import tensor as T
from avsteer.nn import LayerNorm
from avsteer.tensor import ShapeError, Tensor

from oracles import central_difference, relative_error


def leaf(a):
    return T.parameter(np.asarray(a, dtype=np.float64))


# ------------------------------------------------------------- forward values


def test_shape_algebra():
    assert T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1)))).shape == (2, 1)
    assert T.concatenate([Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4)))], axis=0).shape == (2, 4)
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(T.flip(T.flip(Tensor(x), 1), 1).data, x)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_softplus_values():
    sp = lambda v: float(T.softplus(Tensor(np.array([v]))).data[0])  # noqa: E731
    assert sp(0.0) == pytest.approx(0.693147, abs=1e-6)
    assert abs(sp(50.0) - 50.0) < 1e-12
    assert sp(-20.0) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-12)
    assert sp(-20.0) == pytest.approx(2.0612e-9, rel=1e-4)
    assert np.isfinite(sp(1000.0)) and np.isfinite(sp(-1000.0))


def test_layer_norm_values():
    ones, zeros = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(T.layer_norm(Tensor(np.full(3, 7.0)), ones, zeros).data, np.zeros(3))
    out = T.layer_norm(Tensor(np.array([1.0, -1.0])), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-15)
    x = np.array([0.0, 1.0, 2.0])
    expected = (x - x.mean()) / np.sqrt(x.var() + 1e-5)
    np.testing.assert_allclose(T.layer_norm(Tensor(x), ones, zeros).data, expected, atol=1e-12)
    np.testing.assert_allclose(expected, [-1.22474, 0.0, 1.22474], atol=1e-4)


def test_simple_gradients():
    x = leaf([3.0])
    (g,) = T.backward(T.sum_(x * x), [x])
    np.testing.assert_allclose(g, [6.0])
    x = leaf([0.0])
    (g,) = T.backward(T.sum_(T.tanh(x * 2.0)), [x])
    np.testing.assert_allclose(g, [2.0])


# ------------------------------------------------------------------ gradients

# Each case: (name, builder(list of leaves) -> scalar loss, input arrays)
def _cases():
    r = np.random.default_rng(7)
    w = r.normal(size=(3, 4))
    pos = r.uniform(0.5, 2.0, size=(3, 4))
    v = r.normal(size=(4,))
    w3 = r.normal(size=(2, 3, 5))
    w5 = r.normal(size=(5, 4))
    cases = {
        "add": (lambda a, b: T.sum_(T.add(a, b) * Tensor(w)), [r.normal(size=(3, 4)), r.normal(size=(4,))]),
        "sub": (lambda a, b: T.sum_(T.sub(a, b) * Tensor(w)), [r.normal(size=(3, 1)), r.normal(size=(3, 4))]),
        "mul": (lambda a, b: T.sum_(T.mul(a, b) * Tensor(w)), [r.normal(size=(3, 4)), r.normal(size=(1, 4))]),
        "broadcast": (lambda a: T.sum_(T.broadcast_to(a, (3, 4)) * Tensor(w)), [r.normal(size=(1, 4))]),
        "exp": (lambda a: T.sum_(T.exp(a) * Tensor(w)), [r.normal(size=(3, 4))]),
        "log": (lambda a: T.sum_(T.log(a) * Tensor(w)), [pos]),
        "tanh": (lambda a: T.sum_(T.tanh(a) * Tensor(w)), [r.normal(size=(3, 4))]),
        "sigmoid": (lambda a: T.sum_(T.sigmoid(a) * Tensor(w)), [r.normal(size=(3, 4)) * 3]),
        "softplus": (lambda a: T.sum_(T.softplus(a) * Tensor(w)), [r.normal(size=(3, 4)) * 3]),
        "reciprocal": (lambda a: T.sum_(T.reciprocal(a) * Tensor(w)), [pos]),
        "matmul": (lambda a, b: T.sum_(T.matmul(a, b) * Tensor(w3)),
                   [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
        "matmul_vec": (lambda a, b: T.sum_(T.matmul(a, b) * Tensor(np.arange(3.0))),
                       [r.normal(size=(3, 4)), r.normal(size=(4,))]),
        "reshape": (lambda a: T.sum_(T.reshape(a, (4, 3)) * Tensor(w.reshape(4, 3))), [r.normal(size=(3, 4))]),
        "transpose": (lambda a: T.sum_(T.transpose(a) * Tensor(w.T)), [r.normal(size=(3, 4))]),
        "flip": (lambda a: T.sum_(T.flip(a, 1) * Tensor(w)), [r.normal(size=(3, 4))]),
        "concatenate": (lambda a, b: T.sum_(T.concatenate([a, b], axis=0) * Tensor(w5)),
                        [r.normal(size=(2, 4)), r.normal(size=(3, 4))]),
        "slice": (lambda a: T.sum_(a[1:, ::2] * Tensor(w[1:, ::2])), [r.normal(size=(3, 4))]),
        "sum": (lambda a: T.sum_(T.sum_(a, axis=0) * Tensor(v)), [r.normal(size=(3, 4))]),
        "mean": (lambda a: T.sum_(T.mean(a, axis=1, keepdims=True) * Tensor(w)), [r.normal(size=(3, 4))]),
        "layer_norm": (lambda a, g, b: T.sum_(T.layer_norm(a, g, b) * Tensor(w)),
                       [r.normal(size=(3, 4)), r.normal(size=(4,)), r.normal(size=(4,))]),
        "l2_normalize": (lambda a: T.sum_(T.l2_normalize(a, axis=-1) * Tensor(w)), [r.normal(size=(3, 4))]),
        "softmax": (lambda a: T.sum_(T.softmax(a, axis=-1) * Tensor(w)), [r.normal(size=(3, 4))]),
    }
    return cases


CASES = _cases()


def test_every_registered_op_has_a_gradient_case():
    covered = {name.split("_vec")[0] for name in CASES}
    assert set(T.op_set()) <= covered


def _check(builder, arrays, tol=1e-6):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [T.parameter(a) for a in arrays]
    grads = T.backward(builder(*leaves), leaves)

    def f():
        with T.no_grad():
            return float(builder(*[Tensor(a) for a in arrays]).data)

    for (idx, num), g in zip(central_difference(f, arrays, h=1e-5), grads):
        assert relative_error(num, g.reshape(-1)[idx]) < tol


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradient_matches_finite_differences(name):
    builder, arrays = CASES[name]
    _check(builder, arrays)


def test_composite_of_full_op_set_matches_finite_differences():
    r = np.random.default_rng(3)
    params = [r.normal(size=(4, 3)), r.normal(size=(3,)), r.uniform(0.5, 1.5, size=(3,)),
              r.normal(size=(3,)), r.normal(size=(2, 4))]

    def f(W, b, g, beta, x):
        h = T.matmul(x, W) + b
        h = T.layer_norm(T.tanh(h), g, beta)
        h = T.concatenate([T.sigmoid(h), T.softplus(T.flip(h, 1))], axis=1)
        h = T.reshape(T.transpose(h), (2, 6))[:, 1:5]
        s = T.softmax(h, axis=-1) + T.exp(h * 0.1) + T.log(g * g + 1.0)[:1]
        n = T.l2_normalize(h - T.broadcast_to(T.mean(h, axis=0, keepdims=True), (2, 4)), axis=-1)
        return T.sum_(s * n) + T.sum_(T.reciprocal(g)) - T.sum_(T.silu(b))

    _check(f, params)


def test_shared_subexpression_accumulates():
    x = leaf([1.5, -0.5])
    y = x * x
    (g,) = T.backward(T.sum_(y + y * x), [x])
    np.testing.assert_allclose(g, 2 * x.data + 3 * x.data ** 2)


def test_unused_leaf_gets_zero_gradient():
    x, unused = leaf([1.0]), leaf([2.0, 3.0])
    gx, gu = T.backward(T.sum_(x * 2.0), [x, unused])
    np.testing.assert_array_equal(gu, np.zeros(2))
    np.testing.assert_array_equal(gx, [2.0])


def test_second_backward_on_same_graph_raises():
    x = leaf([1.0])
    loss = T.sum_(x * x)
    T.backward(loss, [x])
    with pytest.raises(RuntimeError):
        T.backward(loss, [x])


def test_gradients_accumulate_across_passes():
    x = leaf([2.0])
    T.backward(T.sum_(x * x), [x])
    T.backward(T.sum_(x * x), [x])
    np.testing.assert_allclose(x.grad, [8.0])


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        T.backward(x * 2.0, [x])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


def test_debug_checks_raise_on_non_finite():
    with T.debug_checks(), np.errstate(invalid="ignore"):
        with pytest.raises(FloatingPointError):
            T.log(Tensor(np.array([-1.0])))
    with np.errstate(invalid="ignore"):
        assert np.isnan(T.log(Tensor(np.array([-1.0]))).data[0])


def test_float32_stays_float32():
    x = T.parameter(np.ones((2, 3), dtype=np.float32))
    y = T.sum_(T.tanh(x @ Tensor(np.ones((3, 2), dtype=np.float32))))
    assert y.dtype == np.float32
    (g,) = T.backward(y, [x])
    assert g.dtype == np.float32


def test_layer_norm_module_matches_op():
    ln = LayerNorm(4)
    x = Tensor(np.arange(8.0).reshape(2, 4))
    np.testing.assert_array_equal(ln(x).data, T.layer_norm(x, ln.gamma, ln.beta).data)


@settings(max_examples=40, deadline=None)
@given(
    shape=st.sampled_from([(2, 3), (1, 3), (2, 1), (3,), (1,), ()]),
    target=st.sampled_from([(2, 3), (4, 2, 3)]),
)
def test_unbroadcast_inverts_broadcasting(shape, target):
    try:
        np.broadcast_shapes(shape, target)
    except ValueError:
        return
    full = np.broadcast_shapes(shape, target)
    g = np.ones(full)
    red = T.unbroadcast(g, shape)
    assert red.shape == shape
    assert red.sum() == g.sum()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s > 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5,), elements=st.floats(-30, 30)))
def test_sigmoid_tanh_identity(x):
    np.testing.assert_allclose(T.sigmoid(Tensor(x)).data, 0.5 * (1 + np.tanh(x / 2)), atol=1e-12)


def test_returned_gradient_excludes_earlier_accumulation():
    x = leaf([2.0])
    T.backward(T.sum_(x * x), [x])
    (g,) = T.backward(T.sum_(x * 3.0), [x])
    np.testing.assert_allclose(g, [3.0])
    np.testing.assert_allclose(x.grad, [7.0])
