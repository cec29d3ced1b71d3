import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsteer import tensor as T
from avsteer.nn import Linear
from avsteer.ssm import (
    BidirectionalBlock,
    SelectiveBranch,
    SelectiveParams,
    SSMConfig,
    causal_depthwise_conv,
    generate_selective_params,
    init_dt_bias,
    selective_scan,
    zoh_discretize,
)
from avsteer.tensor import ShapeError, Tensor

from oracles import naive_scan


def _scan(x, delta, A, B, C):
    p = SelectiveParams(Tensor(delta), Tensor(B), Tensor(C))
    return selective_scan(Tensor(x), p, Tensor(A)).data


def random_instance(rng, L, D, N):
    x = rng.normal(size=(L, D))
    delta = rng.uniform(0.01, 1.0, size=(L, D))
    A = -rng.uniform(0.1, 3.0, size=(D, N))
    B = rng.normal(size=(L, N))
    C = rng.normal(size=(L, N))
    return x, delta, A, B, C


# ------------------------------------------------------------------------ ZOH


def test_zoh_scalar_values():
    a_bar, b_bar = zoh_discretize(np.array(0.1), np.array(-1.0), np.array(0.5))
    assert float(a_bar.data) == pytest.approx(0.904837, abs=1e-6)
    assert float(b_bar.data) == pytest.approx(0.047581, abs=1e-6)
    _, b1 = zoh_discretize(np.array(0.1), np.array(-1.0), np.array(1.0))
    assert float(b1.data) == pytest.approx(1 - math.exp(-0.1), abs=1e-12)
    assert float(b1.data) == pytest.approx(0.095163, abs=1e-6)


def test_zoh_small_step_limit():
    a_bar, b_bar = zoh_discretize(np.array(1e-8), np.array(-1.0), np.array(1.0))
    assert abs(float(a_bar.data) - 1.0) < 1e-7
    assert abs(float(b_bar.data)) < 1e-7


def test_zoh_matches_uncancelled_form():
    rng = np.random.default_rng(0)
    delta, A, B = rng.uniform(0.01, 2, 20), -rng.uniform(0.1, 5, 20), rng.normal(size=20)
    a_bar, b_bar = zoh_discretize(delta, A, B)
    dA = delta * A
    np.testing.assert_allclose(a_bar.data, np.exp(dA), rtol=1e-14)
    np.testing.assert_allclose(b_bar.data, (np.exp(dA) - 1) / dA * delta * B, rtol=1e-12)


def test_zoh_rejects_bad_domains():
    with pytest.raises(ValueError):
        zoh_discretize(np.array(0.0), np.array(-1.0), np.array(1.0))
    with pytest.raises(ValueError):
        zoh_discretize(np.array(0.1), np.array(0.5), np.array(1.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 10.0), st.floats(1e-3, 50.0))
def test_discrete_decay_is_stable(delta, a):
    a_bar, _ = zoh_discretize(np.array(delta), np.array(-a), np.array(1.0))
    assert 0.0 < float(a_bar.data) < 1.0


# ----------------------------------------------------------------------- scan


def test_scan_zero_input_gives_zero_output():
    rng = np.random.default_rng(1)
    _, delta, A, B, C = random_instance(rng, 5, 3, 2)
    np.testing.assert_array_equal(_scan(np.zeros((5, 3)), delta, A, B, C), np.zeros((5, 3)))


def test_scan_scalar_hand_recurrence():
    y = _scan(np.array([[1.0], [2.0]]), np.full((2, 1), 0.1), np.array([[-1.0]]), np.ones((2, 1)), np.ones((2, 1)))
    b = 1 - math.exp(-0.1)
    np.testing.assert_allclose(y[:, 0], [b, math.exp(-0.1) * b + 2 * b], atol=1e-12)
    np.testing.assert_allclose(y[:, 0], [0.095163, 0.276432], atol=1e-6)


def test_scan_matches_naive_loop_random_instance():
    rng = np.random.default_rng(2)
    inst = random_instance(rng, 6, 2, 3)
    assert np.max(np.abs(_scan(*inst) - naive_scan(*inst))) < 1e-12


def test_scan_batched_equals_per_sample():
    rng = np.random.default_rng(3)
    insts = [random_instance(rng, 4, 3, 2) for _ in range(2)]
    A = insts[0][2]
    x = np.stack([i[0] for i in insts])
    p = SelectiveParams(Tensor(np.stack([i[1] for i in insts])), Tensor(np.stack([i[3] for i in insts])),
                        Tensor(np.stack([i[4] for i in insts])))
    y = selective_scan(Tensor(x), p, Tensor(A)).data
    for b, (xi, di, _, Bi, Ci) in enumerate(insts):
        np.testing.assert_allclose(y[b], naive_scan(xi, di, A, Bi, Ci), atol=1e-12)


def test_scan_length_mismatch_raises():
    rng = np.random.default_rng(4)
    x, delta, A, B, C = random_instance(rng, 4, 2, 2)
    with pytest.raises(ShapeError):
        _scan(x, delta, A, B[:3], C)


def test_scan_is_causal():
    rng = np.random.default_rng(5)
    x, delta, A, B, C = random_instance(rng, 6, 2, 3)
    y = _scan(x, delta, A, B, C)
    x2 = x.copy()
    x2[4:] += 10.0
    np.testing.assert_array_equal(_scan(x2, delta, A, B, C)[:4], y[:4])


# ---------------------------------------------------------- parameter generator


def test_generate_params_zero_propagation():
    rng = np.random.default_rng(0)
    R, N, D = 2, 3, 4
    x_proj = Linear(D, R + 2 * N, rng, bias=False, zero=True)
    W_dt = Tensor(np.zeros((R, D)))
    b_dt = Tensor(np.zeros(D))
    for L in (1, 5):
        p = generate_selective_params(Tensor(np.zeros((L, D))), x_proj, lambda r: r @ W_dt + b_dt, R, N)
        np.testing.assert_allclose(p.delta.data, np.full((L, D), math.log(2.0)), atol=1e-15)
        assert p.B.shape == (L, N) and p.C.shape == (L, N)


def test_generate_params_match_hand_composition():
    rng = np.random.default_rng(1)
    L, D, R, N = 3, 4, 2, 3
    x = rng.normal(size=(L, D))
    Wx, Wdt, b = rng.normal(size=(D, R + 2 * N)), rng.normal(size=(R, D)), rng.normal(size=D)
    p = generate_selective_params(Tensor(x), lambda v: v @ Tensor(Wx), lambda r: r @ Tensor(Wdt) + Tensor(b), R, N)
    proj = x @ Wx
    pre = proj[:, :R] @ Wdt + b
    np.testing.assert_allclose(p.delta.data, np.log1p(np.exp(pre)), atol=1e-12)
    np.testing.assert_allclose(p.B.data, proj[:, R:R + N], atol=1e-12)
    np.testing.assert_allclose(p.C.data, proj[:, R + N:], atol=1e-12)
    assert np.all(p.delta.data > 0)


def test_generate_params_width_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        generate_selective_params(Tensor(np.ones((2, 4))), Linear(4, 5, rng, bias=False), lambda r: r, 2, 3)


def test_init_dt_bias_range():
    b = init_dt_bias(1000, np.random.default_rng(0), 1e-3, 0.1)
    dt = np.log1p(np.exp(b))
    assert dt.min() >= 1e-3 * (1 - 1e-9) and dt.max() <= 0.1 * (1 + 1e-9)


def test_causal_conv_matches_loop():
    rng = np.random.default_rng(2)
    L, D, K = 6, 3, 4
    x, w, b = rng.normal(size=(L, D)), rng.normal(size=(K, D)), rng.normal(size=D)
    y = causal_depthwise_conv(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.zeros((L, D))
    for t in range(L):
        for k in range(K):
            src = t - (K - 1) + k
            if src >= 0:
                ref[t] += w[k] * x[src]
    np.testing.assert_allclose(y, ref + b, atol=1e-12)


# -------------------------------------------------------------------- blocks


def _block(seed=0, d=8):
    cfg = SSMConfig(state_dim=4, inner_dim=2 * d, dt_rank=2)
    return BidirectionalBlock(d, cfg, np.random.default_rng(seed))


def test_backward_branch_is_flip_scan_flip():
    blk = _block()
    x = np.random.default_rng(1).normal(size=(2, 5, 16))
    out = blk.bwd(Tensor(x), reverse=True).data
    ref = blk.bwd(Tensor(x[:, ::-1].copy())).data[:, ::-1]
    np.testing.assert_array_equal(out, ref)


def test_zero_output_projection_gives_identity_block():
    blk = _block()
    blk.out_proj.weight.data[:] = 0.0
    x = np.random.default_rng(2).normal(size=(2, 5, 8))
    np.testing.assert_array_equal(blk(Tensor(x)).data, x)


def test_block_is_deterministic_and_shape_preserving():
    x = np.random.default_rng(3).normal(size=(2, 7, 8))
    a, b = _block(5)(Tensor(x)).data, _block(5)(Tensor(x)).data
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, b)


def test_branch_state_matrix_is_negative():
    br = SelectiveBranch(SSMConfig(4, 6, 2), np.random.default_rng(0))
    assert np.all(br.A.data < 0)
