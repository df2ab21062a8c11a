"""Autodiff primitives against finite differences, sparse ops against dense
oracles, and Adam against its closed-form first step."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellgraph.numerics import (
    AdamState, CsrMatrix, Tape, adam_step, add, affine, concat_cols,
    cosine_rows, cross_entropy_logits, dropout, grad, log, matmul, mean_all,
    mean_rows, mul, param, power, relu, row_softmax, set_rows, sigmoid, spmm,
    spmm_raw, sub, sum_all, sum_rows, take_cols, take_rows, tanh, transpose,
)

from conftest import check_gradients


def _rand(rng, *shape):
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# gradient checks


def test_grad_add_sub_mul(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 3)
    check_gradients(lambda pt, tape: sum_all(mul(add(pt["a"], pt["b"]),
                                                 sub(pt["a"], pt["b"]))),
                    {"a": a, "b": b})


def test_grad_broadcast_bias(rng):
    check_gradients(lambda pt, tape: sum_all(add(pt["x"], pt["b"])),
                    {"x": _rand(rng, 5, 4), "b": _rand(rng, 1, 4)})


def test_grad_affine(rng):
    check_gradients(lambda pt, tape: sum_all(affine(pt["x"], -1.0, 1.0)),
                    {"x": _rand(rng, 3, 3)})


def test_grad_matmul_transpose(rng):
    check_gradients(
        lambda pt, tape: sum_all(matmul(transpose(pt["a"]), pt["b"])),
        {"a": _rand(rng, 4, 3), "b": _rand(rng, 4, 2)})


@pytest.mark.parametrize("fn", [sigmoid, tanh, lambda t: power(t, 3.0)])
def test_grad_elementwise(rng, fn):
    check_gradients(lambda pt, tape: sum_all(fn(pt["x"])),
                    {"x": _rand(rng, 4, 4)})


def test_grad_relu_away_from_kink(rng):
    x = _rand(rng, 5, 5)
    x[np.abs(x) < 0.05] = 0.1
    check_gradients(lambda pt, tape: sum_all(relu(pt["x"])), {"x": x})


def test_grad_log(rng):
    check_gradients(lambda pt, tape: sum_all(log(pt["x"])),
                    {"x": rng.uniform(0.5, 2.0, size=(4, 3))})


def test_grad_row_softmax(rng):
    check_gradients(
        lambda pt, tape: sum_all(mul(pt["w"], row_softmax(pt["x"]))),
        {"x": _rand(rng, 4, 5), "w": _rand(rng, 4, 5)})


def test_grad_concat_take_cols(rng):
    def build(pt, tape):
        cat = concat_cols([pt["a"], pt["b"]])
        return sum_all(mul(take_cols(cat, 1, 4), take_cols(cat, 2, 5)))
    check_gradients(build, {"a": _rand(rng, 3, 3), "b": _rand(rng, 3, 3)})


def test_grad_take_set_rows(rng):
    idx = np.array([0, 2, 2, 4])

    def build(pt, tape):
        gathered = take_rows(pt["x"], idx)
        replaced = set_rows(pt["x"], np.array([1, 3]), pt["rows"])
        return sum_all(add(sum_rows(gathered), sum_rows(replaced)))
    check_gradients(build, {"x": _rand(rng, 5, 3), "rows": _rand(rng, 2, 3)})


def test_grad_set_rows_broadcast_token(rng):
    def build(pt, tape):
        return sum_all(power(set_rows(pt["x"], np.array([0, 3]), pt["tok"]), 2.0))
    check_gradients(build, {"x": _rand(rng, 5, 3), "tok": _rand(rng, 1, 3)})


def test_grad_reductions(rng):
    for red in (sum_rows, mean_rows):
        check_gradients(lambda pt, tape, red=red: sum_all(power(red(pt["x"]), 2.0)),
                        {"x": _rand(rng, 4, 3)})
    check_gradients(lambda pt, tape: mean_all(power(pt["x"], 2.0)),
                    {"x": _rand(rng, 4, 3)})


def test_grad_cosine_rows(rng):
    check_gradients(
        lambda pt, tape: mean_all(power(affine(cosine_rows(pt["x"], pt["h"]), -1.0, 1.0), 2.0)),
        {"x": _rand(rng, 6, 4), "h": _rand(rng, 6, 4)})


def test_grad_cross_entropy(rng):
    labels = np.array([0, 2, 1, 2])
    check_gradients(lambda pt, tape: cross_entropy_logits(pt["z"], labels),
                    {"z": _rand(rng, 4, 3)})


def test_grad_dropout_fixed_mask(rng):
    # same rng seed on every evaluation => deterministic mask, valid FD check
    def build(pt, tape):
        r = np.random.default_rng(7)
        return sum_all(dropout(pt["x"], 0.4, r, train=True))
    check_gradients(build, {"x": _rand(rng, 6, 4)})


def test_grad_spmm(rng):
    s = CsrMatrix.from_coo(4, 5, [0, 0, 1, 3], [1, 4, 2, 0],
                           [1.5, -2.0, 0.5, 3.0], dtype=np.float64)
    check_gradients(lambda pt, tape: sum_all(power(spmm(s, pt["d"]), 2.0)),
                    {"d": _rand(rng, 5, 3)})


def test_grad_unreached_param_is_zero(rng):
    tape = Tape()
    a = param(np.ones((2, 2)), tape, name="a")
    b = param(np.ones((2, 2)), tape, name="b")
    loss = sum_all(a)
    g = grad(tape, loss, {"a": a, "b": b})
    assert np.array_equal(g["b"], np.zeros((2, 2)))
    assert np.array_equal(g["a"], np.ones((2, 2)))


def test_grad_rejects_nonscalar_and_nonfinite(rng):
    tape = Tape()
    x = param(np.ones((2, 2)), tape)
    with pytest.raises(ValueError):
        grad(tape, x, {"x": x})
    tape2 = Tape()
    y = param(np.array([[np.inf]]), tape2)
    with pytest.raises(FloatingPointError):
        grad(tape2, sum_all(y), {"y": y})


# ---------------------------------------------------------------------------
# forward-value invariants


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_row_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=5, size=(6, 7))
    s = row_softmax(param(x, Tape())).value
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_cosine_rows_bounded(seed):
    r = np.random.default_rng(seed)
    x, h = r.normal(size=(5, 4)), r.normal(size=(5, 4))
    c = cosine_rows(param(x, Tape()), param(h, Tape())).value
    assert np.all(np.abs(c) <= 1.0 + 1e-12)


def test_cosine_rows_zero_norm_convention():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    h = np.array([[1.0, 1.0], [1.0, 0.0]])
    c = cosine_rows(param(x, Tape()), param(h, Tape())).value
    assert c[0, 0] == 0.0 and abs(c[1, 0] - 1.0) < 1e-12


def test_dropout_eval_passthrough(rng):
    x = param(_rand(rng, 3, 3), Tape())
    assert np.array_equal(dropout(x, 0.5, rng, train=False).value, x.value)


def test_cross_entropy_uniform_logits():
    z = param(np.zeros((2, 4)), Tape())
    v = float(cross_entropy_logits(z, np.array([0, 3])).value)
    assert abs(v - np.log(4.0)) < 1e-12


# ---------------------------------------------------------------------------
# sparse


def test_csr_from_coo_sums_duplicates_and_drops_zeros():
    s = CsrMatrix.from_coo(2, 3, [0, 0, 1, 1], [1, 1, 2, 2], [2.0, 3.0, 1.0, -1.0])
    dense = s.to_dense()
    assert dense[0, 1] == 5.0
    assert s.nnz == 1                      # the (1, 2) entry cancelled away


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_spmm_matches_dense_oracle(seed):
    r = np.random.default_rng(seed)
    rows, cols = int(r.integers(1, 8)), int(r.integers(1, 8))
    nnz = int(r.integers(0, rows * cols + 1))
    s = CsrMatrix.from_coo(rows, cols, r.integers(0, rows, nnz),
                           r.integers(0, cols, nnz), r.normal(size=nnz),
                           dtype=np.float64)
    d = r.normal(size=(cols, 3))
    assert np.allclose(spmm_raw(s, d), s.to_dense() @ d, atol=1e-12)


def test_csr_add_and_transpose_oracle(rng):
    a = CsrMatrix.from_coo(3, 3, [0, 1, 2], [1, 2, 0], [1.0, 2.0, 3.0], dtype=np.float64)
    b = CsrMatrix.from_coo(3, 3, [0, 1], [1, 0], [-1.0, 5.0], dtype=np.float64)
    assert np.allclose(a.add(b).to_dense(), a.to_dense() + b.to_dense())
    assert np.allclose(a.transpose().to_dense(), a.to_dense().T)
    assert np.array_equal(CsrMatrix.identity(4).to_dense(), np.eye(4, dtype=np.float32))


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_closed_form(rng):
    x0 = _rand(rng, 3, 2)
    g = _rand(rng, 3, 2)
    state = AdamState(lr=0.01)
    p = {"x": param(x0.copy(), Tape())}
    adam_step(state, p, {"x": g})
    expected = x0 - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p["x"].value, expected, atol=1e-12)
    assert state.step == 1


def test_adam_minimizes_quadratic(rng):
    target = np.array([[1.0, -2.0, 0.5]])
    x = param(np.zeros((1, 3)), Tape())
    state = AdamState(lr=0.05)
    for _ in range(400):
        g = 2.0 * (x.value - target)
        adam_step(state, {"x": x}, {"x": g})
    assert np.abs(x.value - target).max() < 1e-3


def test_adam_rejects_shape_mismatch(rng):
    state = AdamState()
    p = {"x": param(np.zeros((2, 2)), Tape())}
    with pytest.raises(ValueError):
        adam_step(state, p, {"x": np.zeros((3, 2))})
