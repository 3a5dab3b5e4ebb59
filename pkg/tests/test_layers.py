import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanet import layers as L
from tanet.errors import CacheError, ShapeError
from tanet.gradcheck import max_rel_error, numeric_grad
from tanet.tensor import matmul
from tanet.verify import LAYER_KINDS, layer_gradient_error


def rand_mha(rng, d=6, h=2):
    return L.MhaParams(*(rng.normal(0, d**-0.5, (h, d, d // h)) for _ in range(3)), rng.normal(0, d**-0.5, (d, d)))


# ------------------------------------------------------------------ linear


def test_linear_identity_and_zero_input():
    x = np.random.default_rng(0).normal(size=(3, 4))
    y, _ = L.linear_fwd(x, L.LinearParams(np.eye(4), np.zeros(4)))
    assert np.array_equal(y, x)
    b = np.array([1.0, -2.0])
    y, _ = L.linear_fwd(np.zeros((3, 4)), L.LinearParams(np.ones((4, 2)), b))
    assert np.array_equal(y, np.tile(b, (3, 1)))


def test_linear_matches_tensor_core_composition():
    rng = np.random.default_rng(1)
    x, W, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    y, _ = L.linear_fwd(x, L.LinearParams(W, b))
    assert np.abs(y - (matmul(x, W) + b)).max() <= 1e-12


def test_linear_bwd_trivial_cases():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4))
    p = L.LinearParams(rng.normal(size=(4, 2)), np.zeros(2))
    _, c = L.linear_fwd(x, p)
    dx, dW, db = L.linear_bwd(np.zeros((3, 2)), c, p)
    assert not dx.any() and not dW.any() and not db.any()
    p = L.LinearParams(np.eye(3), np.zeros(3))
    dy = rng.normal(size=(1, 3))
    _, c = L.linear_fwd(rng.normal(size=(1, 3)), p)
    assert np.array_equal(L.linear_bwd(dy, c, p)[0], dy)


def test_linear_bwd_finite_differences():
    rng = np.random.default_rng(3)
    x, p = rng.normal(size=(3, 4)), L.LinearParams(rng.normal(size=(4, 2)), rng.normal(size=2))
    r = rng.normal(size=(3, 2))

    def f():
        return float(np.sum(L.linear_fwd(x, p)[0] * r))

    dx, dW, db = L.linear_bwd(r, L.linear_fwd(x, p)[1], p)
    for a, t in ((dx, x), (dW, p.weight), (db, p.bias)):
        assert max_rel_error(a, numeric_grad(f, t)) <= 1e-6


def test_backward_rejects_foreign_cache():
    p = L.LinearParams(np.eye(2), np.zeros(2))
    _, c = L.relu_fwd(np.ones((2, 2)))
    with pytest.raises(CacheError):
        L.linear_bwd(np.ones((2, 2)), c, p)
    _, c = L.linear_fwd(np.ones((2, 2)), p)
    with pytest.raises(CacheError):
        L.linear_bwd(np.ones((3, 2)), c, p)


# --------------------------------------------------------------------- mha


def test_mha_single_step_reduces_to_value_path():
    rng = np.random.default_rng(4)
    p = rand_mha(rng)
    x = rng.normal(size=(1, 6))
    y, c = L.mha_fwd(x, p)
    assert np.allclose(c.saved["attn"], 1.0, atol=0)
    values = np.concatenate([x @ p.wv[i] for i in range(2)], axis=1)
    assert np.abs(y - values @ p.wo).max() <= 1e-12


def test_mha_rows_sum_to_one_and_nonnegative():
    rng = np.random.default_rng(5)
    for _ in range(10):
        _, c = L.mha_fwd(rng.normal(size=(7, 6)) * 4, rand_mha(rng))
        a = c.saved["attn"]
        assert (a >= 0).all()
        assert np.abs(a.sum(-1) - 1).max() <= 1e-12


@settings(max_examples=30)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_mha_permutation_equivariant(T, seed):
    rng = np.random.default_rng(seed)
    p, x = rand_mha(rng), rng.normal(size=(T, 6))
    perm = rng.permutation(T)
    y = L.mha_fwd(x, p)[0]
    yp = L.mha_fwd(x[perm], p)[0]
    assert np.abs(yp - y[perm]).max() <= 1e-12


def test_mha_gradient_equivariant():
    rng = np.random.default_rng(6)
    p, x, dy = rand_mha(rng), rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    perm = rng.permutation(5)
    dx = L.mha_bwd(dy, L.mha_fwd(x, p)[1], p)[0]
    dxp = L.mha_bwd(dy[perm], L.mha_fwd(x[perm], p)[1], p)[0]
    assert np.abs(dxp - dx[perm]).max() <= 1e-12


def test_mha_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(7)
    p, x = rand_mha(rng), rng.normal(size=(4, 6))
    dx, g = L.mha_bwd(np.zeros((4, 6)), L.mha_fwd(x, p)[1], p)
    assert not dx.any() and not any(a.any() for a in (g.wq, g.wk, g.wv, g.wo))


def test_mha_batched_matches_per_window():
    rng = np.random.default_rng(8)
    p, x, dy = rand_mha(rng), rng.normal(size=(3, 5, 6)), rng.normal(size=(3, 5, 6))
    y, c = L.mha_fwd(x, p)
    dx, g = L.mha_bwd(dy, c, p)
    acc = np.zeros_like(p.wq)
    for b in range(3):
        yb, cb = L.mha_fwd(x[b], p)
        assert np.abs(yb - y[b]).max() <= 1e-12
        dxb, gb = L.mha_bwd(dy[b], cb, p)
        assert np.abs(dxb - dx[b]).max() <= 1e-12
        acc += gb.wq
    assert np.abs(acc - g.wq).max() <= 1e-12


def test_mha_params_validate_heads():
    with pytest.raises(ShapeError):
        L.MhaParams(np.zeros((2, 5, 2)), np.zeros((2, 5, 2)), np.zeros((2, 5, 2)), np.zeros((4, 5)))


# --------------------------------------------------------------- layernorm


def unit_ln(d, eps=1e-5):
    return L.LayerNormParams(np.ones(d), np.zeros(d), eps)


def test_layernorm_constant_row_is_zero():
    y, _ = L.layernorm_fwd(np.full((2, 4), 3.0), unit_ln(4))
    assert not y.any()


def test_layernorm_hand_computed_row():
    # population variance of [1, 2, 3] is 2/3
    expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2 / 3 + 1e-5)
    y, _ = L.layernorm_fwd(np.array([[1.0, 2.0, 3.0]]), unit_ln(3))
    assert np.allclose(y[0], expected, atol=1e-12)
    assert np.allclose(y[0], [-1.22474, 0.0, 1.22474], atol=1e-5)


def test_layernorm_output_statistics():
    rng = np.random.default_rng(9)
    x = rng.normal(3.0, 5.0, size=(20, 16))
    y, _ = L.layernorm_fwd(x, unit_ln(16, eps=1e-12))
    assert np.abs(y.mean(axis=1)).max() <= 1e-12
    assert np.abs(y.var(axis=1) - 1).max() <= 1e-9


def test_layernorm_dbeta_is_column_sum():
    rng = np.random.default_rng(10)
    p = L.LayerNormParams(rng.normal(size=5), rng.normal(size=5))
    dy = rng.normal(size=(3, 5))
    dx, dg, db = L.layernorm_bwd(dy, L.layernorm_fwd(rng.normal(size=(3, 5)), p)[1], p)
    assert np.array_equal(db, dy.sum(axis=0))
    dx, dg, db = L.layernorm_bwd(np.zeros((3, 5)), L.layernorm_fwd(rng.normal(size=(3, 5)), p)[1], p)
    assert not dx.any() and not dg.any() and not db.any()


# -------------------------------------------------------------- relu, pool


def test_relu():
    neg = -np.abs(np.random.default_rng(11).normal(size=(3, 4))) - 0.1
    y, c = L.relu_fwd(neg)
    assert not y.any() and not L.relu_bwd(np.ones_like(neg), c).any()
    pos = -neg
    y, c = L.relu_fwd(pos)
    dy = np.random.default_rng(12).normal(size=pos.shape)
    assert np.array_equal(y, pos) and np.array_equal(L.relu_bwd(dy, c), dy)


def test_relu_mixed_against_scalar_loop():
    x = np.array([[-1.5, 0.0, 2.0], [3.0, -0.1, 1e-9]])
    dy = np.arange(6.0).reshape(2, 3) + 1
    y, c = L.relu_fwd(x)
    dx = L.relu_bwd(dy, c)
    for i in range(2):
        for j in range(3):
            assert y[i, j] == (x[i, j] if x[i, j] > 0 else 0.0)
            assert dx[i, j] == (dy[i, j] if x[i, j] > 0 else 0.0)  # subgradient 0 at 0


def test_pooling():
    row = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(L.global_avg_pool_fwd(row)[0], row[0])
    const = np.tile([4.0, 5.0], (6, 1))
    assert np.allclose(L.global_avg_pool_fwd(const)[0], [4.0, 5.0], atol=1e-15)
    _, c = L.global_avg_pool_fwd(np.ones((4, 2)))
    dx = L.global_avg_pool_bwd(np.array([2.0, -4.0]), c)
    assert np.array_equal(dx, np.tile([0.5, -1.0], (4, 1)))


# ----------------------------------------------------------------- softmax


def test_xent_uniform_logits():
    loss, _ = L.softmax_xent(np.zeros((3, 2)), [0, 1, 1])
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    assert loss == pytest.approx(0.693147, abs=1e-6)


def test_xent_confident_limit():
    loss, _ = L.softmax_xent(np.array([[800.0, 0.0], [0.0, 800.0]]), [0, 1])
    assert loss == 0.0


def test_xent_label_range():
    with pytest.raises(ValueError):
        L.softmax_xent(np.zeros((2, 2)), [0, 2])


def test_xent_gradient_finite_differences():
    rng = np.random.default_rng(13)
    logits, labels = rng.normal(size=(4, 2)), rng.integers(0, 2, 4)
    _, d = L.softmax_xent(logits, labels)
    n = numeric_grad(lambda: L.softmax_xent(logits, labels)[0], logits)
    assert np.abs(d - n).max() <= 1e-8


@given(st.floats(-50, 50), st.integers(0, 2**32 - 1))
def test_xent_shift_invariant(shift, seed):
    rng = np.random.default_rng(seed)
    logits, labels = rng.normal(size=(5, 2)), rng.integers(0, 2, 5)
    a = L.softmax_xent(logits, labels)[0]
    b = L.softmax_xent(logits + shift, labels)[0]
    assert abs(a - b) <= 1e-12 * max(1.0, abs(shift))


# ------------------------------------------------------ gradient suites


@pytest.mark.parametrize("kind", LAYER_KINDS)
@pytest.mark.parametrize("seed", range(20))
def test_layer_backward_matches_finite_differences(kind, seed):
    assert layer_gradient_error(kind, 100 + seed) <= 1e-4
