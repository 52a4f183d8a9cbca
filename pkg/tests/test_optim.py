"""First-order optimizers."""

import numpy as np
import pytest

from gcldr.exceptions import ConfigError
from gcldr.optim import Adam, Sgd, make_optimizer, zero_grads
from gcldr.tensor import Tensor


def quadratic_converges(opt, steps=500, tol=1e-3):
    theta = Tensor(np.array([5.0]), requires_grad=True)
    for _ in range(steps):
        zero_grads([theta])
        ((theta * theta) * 0.5).sum().backward()
        opt.step([theta])
    return abs(float(theta.data[0])) <= tol


def test_adam_converges_on_scalar_quadratic():
    assert quadratic_converges(Adam(lr=0.05))


def test_sgd_converges_on_scalar_quadratic():
    assert quadratic_converges(Sgd(lr=0.1))


def test_sgd_single_step_is_lr_times_grad():
    theta = Tensor(np.array([2.0]), requires_grad=True)
    zero_grads([theta])
    ((theta * theta) * 0.5).sum().backward()
    Sgd(lr=0.1).step([theta])
    np.testing.assert_allclose(theta.data, [2.0 - 0.1 * 2.0], atol=1e-15)


def test_adam_state_is_per_parameter():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam(lr=0.1)
    for _ in range(3):
        zero_grads([a, b])
        (((a * a) + (b * b * 100.0)).sum()).backward()
        opt.step([a, b])
    assert float(a.data[0]) != float(b.data[0])


def test_make_optimizer_dispatch_and_unknown_kind():
    assert isinstance(make_optimizer("adam", 1e-3), Adam)
    assert isinstance(make_optimizer("sgd", 1e-3), Sgd)
    with pytest.raises(ConfigError):
        make_optimizer("lbfgs", 1e-3)


def test_zero_grads_clears_accumulated_gradients():
    t = Tensor(np.ones(3), requires_grad=True)
    t.sum().backward()
    assert np.any(t.grad != 0)
    zero_grads([t])
    np.testing.assert_array_equal(t.grad, np.zeros(3))
