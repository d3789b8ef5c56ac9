from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cvqa import linalg as la
from cvqa.errors import DetachedNode, DimensionMismatch, NonFinite, ZeroVector

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _naive_matmul(a, b):
    return np.array([[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))]
                     for i in range(len(a))])


# -- construction -------------------------------------------------------------


def test_matrix_from_flat_data_and_immutability():
    m = la.matrix([1, 2, 3, 4, 5, 6], rows=2, cols=3)
    assert m.shape == (2, 3)
    assert m[1, 0] == 4.0
    with pytest.raises(ValueError):
        m[0, 0] = 9.0


def test_matrix_rejects_wrong_length_and_nonfinite():
    with pytest.raises(DimensionMismatch):
        la.matrix([1, 2, 3], rows=2, cols=2)
    with pytest.raises(NonFinite):
        la.matrix([[1.0, float("nan")]])
    with pytest.raises(NonFinite):
        la.vector([float("inf")])


def test_uniform_init_bounds():
    w = la.uniform_init(np.random.default_rng(0), (50, 40), fan_in=16)
    assert np.abs(w).max() <= 0.25
    assert w.min() < -0.2 and w.max() > 0.2


# -- matmul ---------------------------------------------------------------------


def test_matmul_identity():
    m = np.random.default_rng(1).normal(size=(3, 5))
    np.testing.assert_array_equal(la.matmul(la.identity(3), m), m)


def test_matmul_zero_annihilator():
    m = np.random.default_rng(2).normal(size=(3, 4))
    np.testing.assert_array_equal(la.matmul(la.zeros(2, 3), m), np.zeros((2, 4)))


def test_matmul_hand_example():
    out = la.matmul(la.matrix([[1, 2], [3, 4]]), la.matrix([[5], [6]]))
    np.testing.assert_array_equal(out, [[17.0], [39.0]])


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        la.matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_matmul_matches_naive_oracle(r, k, c, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(r, k)), rng.normal(size=(k, c))
    np.testing.assert_allclose(la.matmul(a, b), _naive_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    left = la.matmul(la.matmul(a, b), c)
    right = la.matmul(a, la.matmul(b, c))
    assert np.abs(left - right).max() <= 1e-9 * max(1.0, np.abs(left).max())


# -- softmax / sigmoid ----------------------------------------------------------


@pytest.mark.parametrize("c", [-7.5, 0.0, 3.0, 700.0])
def test_softmax_constant_input_is_uniform(c):
    np.testing.assert_allclose(la.softmax(np.full(3, c)), np.full(3, 1 / 3), atol=1e-15)


def test_softmax_closed_form():
    np.testing.assert_allclose(la.softmax(np.array([0.0, math.log(2)])), [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_matches_naive_oracle_length_seven():
    x = np.random.default_rng(3).normal(size=7)
    e = [math.exp(v) for v in x]
    np.testing.assert_allclose(la.softmax(x), [v / sum(e) for v in e], rtol=0, atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NonFinite):
        la.softmax(np.array([0.0, np.nan]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_simplex_and_shift_invariance(x, c):
    p = la.softmax(x)
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(la.softmax(x + c), p, rtol=0, atol=1e-12)


def test_log_softmax_consistent_with_softmax():
    x = np.random.default_rng(4).normal(size=(3, 6)) * 5
    np.testing.assert_allclose(np.exp(la.log_softmax(x, axis=-1)), la.softmax(x, axis=-1), atol=1e-14)


def test_sigmoid_examples():
    np.testing.assert_array_equal(la.sigmoid(np.zeros(2)), [0.5, 0.5])
    assert abs(la.sigmoid(np.array([20.0]))[0] - 1.0) <= 1e-8
    assert abs(la.sigmoid(np.array([-1.5]))[0] - 1 / (1 + math.exp(1.5))) <= 1e-15
    with pytest.raises(NonFinite):
        la.sigmoid(np.array([np.inf]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-30, 30)))
def test_sigmoid_open_unit_interval(x):
    s = la.sigmoid(x)
    assert ((s > 0) & (s < 1)).all()


# -- cosine similarity ----------------------------------------------------------


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert abs(float(la.cosine_sim(v, 3 * v)) - 1.0) <= 1e-15
    assert float(la.cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0]))) == 0.0
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=16), rng.normal(size=16)
    oracle = sum(x * y for x, y in zip(a, b)) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))
    assert abs(float(la.cosine_sim(a, b)) - oracle) <= 1e-12


def test_cosine_zero_vector_and_shape_errors():
    with pytest.raises(ZeroVector):
        la.cosine_sim(np.zeros(3), np.ones(3))
    with pytest.raises(ZeroVector):
        la.cosine_sim(np.ones(3), np.full(3, 1e-14))
    with pytest.raises(DimensionMismatch):
        la.cosine_sim(np.ones(3), np.ones(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_cosine_scale_invariant_and_bounded(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=6), rng.normal(size=6)
    s = float(la.cosine_sim(a, b))
    assert -1.0 <= s <= 1.0
    assert abs(float(la.cosine_sim(c * a, b)) - s) <= 1e-12


# -- tape ---------------------------------------------------------------------


def test_backward_quadratic():
    tape = la.Tape()
    x = tape.watch("x", np.array([1.0, 2.0]))
    grads = tape.backward(la.total(la.square(x)))
    np.testing.assert_array_equal(grads["x"], [2.0, 4.0])


def test_backward_constant_loss_gives_zero_gradients():
    tape = la.Tape()
    x = tape.watch("x", np.array([1.0, 2.0]))
    w = tape.watch("w", np.ones((2, 2)))
    loss = la.total(x * 0.0) + 3.0
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads["x"], [0.0, 0.0])
    np.testing.assert_array_equal(grads["w"], np.zeros((2, 2)))
    assert w.value.shape == (2, 2)


def test_unused_parameter_gets_exact_zero():
    tape = la.Tape()
    x = tape.watch("x", np.array([3.0]))
    tape.watch("unused", np.ones(4))
    grads = tape.backward(la.total(x * x))
    np.testing.assert_array_equal(grads["unused"], np.zeros(4))


def test_backward_rejects_detached_and_nonscalar():
    tape, other = la.Tape(), la.Tape()
    x = other.watch("x", np.ones(2))
    with pytest.raises(DetachedNode):
        tape.backward(la.total(x))
    with pytest.raises(DetachedNode):
        tape.backward(np.float64(1.0))
    y = tape.watch("y", np.ones(2))
    with pytest.raises(DimensionMismatch):
        tape.backward(y * 2.0)


def test_backward_accumulates_shared_subexpressions():
    tape = la.Tape()
    x = tape.watch("x", np.array([0.5, -1.0]))
    y = la.exp(x)
    loss = la.total(y * y) + la.total(y)
    grads = tape.backward(loss)
    v = np.array([0.5, -1.0])
    np.testing.assert_allclose(grads["x"], 2 * np.exp(2 * v) + np.exp(v), atol=1e-14)


def _composite(p):
    h = la.relu(la.matmul(p["a"], p["w"]) + p["b"])
    att = la.scaled_dot_attention(h, h, h)
    s = la.softmax(la.total(att, axis=1))
    return la.total(la.xlogx(s)) + la.total(la.log_softmax(att, axis=-1)[0]) + la.cosine_sim(att[0], att[1])


@pytest.mark.parametrize("seed", range(5))
def test_composite_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    params = {"a": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 4)), "b": rng.normal(size=4)}
    tape = la.Tape()
    grads = tape.backward(_composite(tape.watch_all(params)))
    numeric = la.central_differences(lambda p: np.array([float(_composite(p))]), params)
    for name in params:
        assert la.gradients_agree(grads[name], numeric[name][0]), name


def test_take_concat_stack_transpose_gradients():
    rng = np.random.default_rng(7)
    params = {"x": rng.normal(size=(3, 2)), "y": rng.normal(size=2)}

    def fn(p):
        rows = la.take(p["x"], [0, 2, 0])
        s = la.stack([p["y"], la.transpose(p["x"])[1, :2]])
        c = la.concat([la.reshape(rows, (6,)), la.total(s, axis=0)])
        return la.total(la.square(c)) + la.mean(la.sub(s, 1.0))

    tape = la.Tape()
    grads = tape.backward(fn(tape.watch_all(params)))
    numeric = la.central_differences(lambda p: np.array([float(fn(p))]), params)
    for name in params:
        assert la.gradients_agree(grads[name], numeric[name][0]), name


def test_plain_arrays_are_not_recorded():
    out = la.add(np.ones(2), np.ones(2))
    assert isinstance(out, np.ndarray) and not isinstance(out, la.Node)


def test_add_to_rows():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(la.add_to_rows(x, np.array([1.0, 0.0, -1.0])), [[1, 1, 1], [4, 4, 4]])
    with pytest.raises(DimensionMismatch):
        la.add_to_rows(x, np.ones(2))


def test_attention_matches_loop_oracle():
    rng = np.random.default_rng(8)
    q, k, v = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    expected = []
    for qi in q:
        logits = [sum(a * b for a, b in zip(qi, kj)) / 2.0 for kj in k]
        m = max(logits)
        e = [math.exp(x - m) for x in logits]
        w = [x / sum(e) for x in e]
        expected.append([sum(w[j] * v[j][c] for j in range(3)) for c in range(5)])
    np.testing.assert_allclose(la.scaled_dot_attention(q, k, v), expected, rtol=0, atol=1e-12)


def test_gradient_tolerance_rule():
    a = np.array([0.01, 1000.0])
    assert la.gradients_agree(a, a + np.array([9e-5, 0.9]))
    assert not la.gradients_agree(a, a + np.array([2e-4, 0.0]))
    assert not la.gradients_agree(a, a + np.array([0.0, 1.2]))
    max_abs, max_rel = la.gradient_deviation(np.zeros(2), np.zeros(2))
    assert max_abs == 0.0 and max_rel == 0.0
