"""Autodiff engine: primitive ops, their gradients, and numeric contracts."""

import numpy as np
import pytest

from gcldr.exceptions import ConfigError, DegenerateBatchError, LabelError, ShapeError
from gcldr.gradcheck import finite_diff_check
from gcldr.tensor import (
    Tensor,
    batchnorm,
    cross_entropy,
    dropout,
    stack_cols,
)


def param(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# -- forward arithmetic -------------------------------------------------------


def test_matmul_identity():
    m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = Tensor(np.eye(2)).matmul(m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_hand_arithmetic():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Tensor(np.array([[1.0], [1.0]]))
    np.testing.assert_array_equal(a.matmul(b).data, [[3.0], [7.0]])


def test_softmax_rows_sum_to_one_and_open_interval():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(scale=30.0, size=(8, 5)))
    p = x.softmax_rows().data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p > 0.0) and np.all(p < 1.0)


# -- gradients ----------------------------------------------------------------


def test_sum_gradient_is_ones():
    t = param(np.arange(6.0).reshape(2, 3))
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones((2, 3)))


def test_half_sum_of_squares_gradient_is_input():
    t = param(np.array([[1.0, -2.0], [0.5, 3.0]]))
    ((t * t).sum() * 0.5).backward()
    np.testing.assert_allclose(t.grad, t.data, atol=1e-12)


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a = param(rng.normal(size=(3, 4)))
    b = param(rng.normal(size=(4, 2)))
    err = finite_diff_check(lambda: a.matmul(b).sum(), [a, b])
    assert err <= 1e-6


@pytest.mark.parametrize("op", ["tanh", "relu", "swish", "sigmoid", "exp", "log"])
def test_unary_op_gradients(op):
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(4, 3))
    if op == "log":
        raw = np.abs(raw) + 0.5
    t = param(raw)
    err = finite_diff_check(lambda: getattr(t, op)().sum(), [t])
    assert err <= 1e-6


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    t = param(rng.normal(size=(5, 4)))
    err = finite_diff_check(lambda: (t.softmax_rows() * t.softmax_rows()).sum(), [t])
    assert err <= 1e-4


def test_composite_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(6, 5)))
    w1, b1 = param(rng.normal(size=(5, 7)) * 0.3), param(np.zeros(7))
    w2, b2 = param(rng.normal(size=(7, 3)) * 0.3), param(np.zeros(3))
    y = rng.integers(0, 3, size=6)

    def loss():
        h = (x.matmul(w1) + b1).tanh()
        return cross_entropy((h.matmul(w2) + b2).softmax_rows(), y)

    assert finite_diff_check(loss, [w1, b1, w2, b2]) <= 1e-4


def test_repeated_backward_on_rebuilt_graphs_is_stable():
    t = param(np.array([1.0, 2.0]))
    for _ in range(3):
        t.zero_grad()
        (t * t).sum().backward()
        np.testing.assert_allclose(t.grad, 2.0 * t.data, atol=1e-12)


def test_gather_rows_gradient_scatters():
    t = param(np.array([[0.1, 0.9], [0.8, 0.2]]))
    t.gather_rows(np.array([1, 0])).sum().backward()
    np.testing.assert_array_equal(t.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_stack_cols_gradient_routes_to_sources():
    a, b = param(np.array([1.0, 2.0])), param(np.array([3.0, 4.0]))
    (stack_cols([a, b]) * Tensor(np.array([[1.0, 10.0], [100.0, 1000.0]]))).sum().backward()
    np.testing.assert_array_equal(a.grad, [1.0, 100.0])
    np.testing.assert_array_equal(b.grad, [10.0, 1000.0])


# -- batchnorm ----------------------------------------------------------------


def _bn_state(h):
    return (
        param(np.ones(h)),
        param(np.zeros(h)),
        np.zeros(h),
        np.ones(h),
    )


def test_batchnorm_train_normalizes_columns():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(64, 4)))
    scale, shift, rm, rv = _bn_state(4)
    out = batchnorm(x, scale, shift, rm, rv, mode="train").data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)


def test_batchnorm_constant_column_maps_to_zero():
    x = Tensor(np.full((8, 2), 7.5))
    scale, shift, rm, rv = _bn_state(2)
    out = batchnorm(x, scale, shift, rm, rv, mode="train").data
    np.testing.assert_allclose(out, 0.0, atol=1e-9)


def test_batchnorm_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    x = param(rng.normal(size=(6, 3)))
    scale = param(rng.uniform(0.5, 1.5, size=3))
    shift = param(rng.normal(size=3))
    rm, rv = np.zeros(3), np.ones(3)

    weights = Tensor(rng.normal(size=(6, 3)))

    def loss():
        out = batchnorm(x, scale, shift, rm, rv, mode="train", update_stats=False)
        return (out.tanh() * weights).sum()

    assert finite_diff_check(loss, [x, scale, shift]) <= 1e-4


def test_batchnorm_rejects_single_row_train_batch():
    scale, shift, rm, rv = _bn_state(2)
    with pytest.raises(DegenerateBatchError):
        batchnorm(Tensor(np.ones((1, 2))), scale, shift, rm, rv, mode="train")


def test_batchnorm_infer_uses_running_buffers():
    scale, shift, _, _ = _bn_state(2)
    rm, rv = np.array([1.0, 2.0]), np.array([4.0, 9.0])
    x = Tensor(np.array([[3.0, 8.0]]))
    out = batchnorm(x, scale, shift, rm, rv, mode="infer").data
    np.testing.assert_allclose(out, [[2.0 / np.sqrt(4.00001), 6.0 / np.sqrt(9.00001)]], rtol=1e-6)


# -- dropout ------------------------------------------------------------------


def test_dropout_infer_is_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    out = dropout(x, 0.5, np.random.default_rng(0), mode="infer")
    np.testing.assert_array_equal(out.data, x.data)


def test_dropout_train_zeroes_and_rescales():
    x = Tensor(np.ones((200, 50)))
    out = dropout(x, 0.5, np.random.default_rng(1), mode="train").data
    assert set(np.unique(out)) == {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05


def test_dropout_rejects_bad_rate():
    with pytest.raises(ConfigError):
        dropout(Tensor(np.ones((2, 2))), 1.0, np.random.default_rng(0), mode="train")


# -- cross entropy ------------------------------------------------------------


def test_cross_entropy_uniform_prediction_is_log_of_class_count():
    probs = Tensor(np.full((5, 4), 0.25))
    labels = np.array([0, 1, 2, 3, 0])
    assert abs(float(cross_entropy(probs, labels).data) - np.log(4.0)) <= 1e-12


def test_cross_entropy_accepts_one_hot_labels():
    probs = Tensor(np.array([[0.7, 0.3], [0.2, 0.8]]))
    one_hot = np.array([[1.0, 0.0], [0.0, 1.0]])
    expected = -(np.log(0.7) + np.log(0.8)) / 2.0
    assert abs(float(cross_entropy(probs, one_hot).data) - expected) <= 1e-12


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(LabelError):
        cross_entropy(Tensor(np.full((2, 3), 1 / 3)), np.array([0, 3]))


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))).matmul(Tensor(np.ones((2, 3))))


# -- determinism --------------------------------------------------------------


def test_identical_seeds_give_bitwise_identical_dropout_and_grads():
    def run():
        rng = np.random.default_rng(42)
        t = param(np.linspace(-1, 1, 12).reshape(3, 4))
        out = dropout(t.swish(), 0.5, rng, mode="train")
        out.sum().backward()
        return out.data.copy(), t.grad.copy()

    (o1, g1), (o2, g2) = run(), run()
    assert np.array_equal(o1, o2) and np.array_equal(g1, g2)
