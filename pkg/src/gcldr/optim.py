"""First-order optimizers over lists of parameter tensors."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DivergenceError
from .tensor import Tensor


class Sgd:
    """Plain gradient descent: p <- p - lr * grad."""

    def __init__(self, lr: float = 1e-3):
        if lr <= 0:
            raise ConfigError("learning rate must be > 0")
        self.lr = lr
        self.step_count = 0

    def step(self, params: list[Tensor]):
        self.step_count += 1
        for p in params:
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise DivergenceError("NaN/Inf gradient in optimizer step")
            p.data -= self.lr * p.grad


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be > 0")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor]):
        self.step_count += 1
        t = self.step_count
        for p in params:
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise DivergenceError("NaN/Inf gradient in optimizer step")
            key = id(p)
            if key not in self._m:
                self._m[key] = np.zeros_like(p.data)
                self._v[key] = np.zeros_like(p.data)
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def zero_grads(params: list[Tensor]):
    for p in params:
        p.zero_grad()
