"""Dense float64 tensors with reverse-mode gradients.

Every operation records its inputs and a backward closure on the tensor it
produces; ``backward()`` on a scalar walks that implicit tape in reverse
topological order. Gradients inside one backward pass are accumulated into
fresh buffers, so two backward calls on different roots of a shared graph do
not contaminate each other. Parameters not reached by a pass keep whatever
``grad`` they had, which is why training code zeroes parameter grads first.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DegenerateBatchError, ShapeError

LOG_FLOOR = 1e-12
BN_EPS = 1e-5


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    @staticmethod
    def _result(data, prev, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in prev):
            out.requires_grad = True
            out._prev = tuple(prev)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out_data = self.data + other.data

        def backward(g, grads):
            grads[id(self)] += _unbroadcast(g, self.data.shape)
            grads[id(other)] += _unbroadcast(g, other.data.shape)

        return self._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g, grads):
            grads[id(self)] -= g

        return self._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out_data = self.data * other.data

        def backward(g, grads):
            grads[id(self)] += _unbroadcast(g * other.data, self.data.shape)
            grads[id(other)] += _unbroadcast(g * self.data, other.data.shape)

        return self._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out_data = self.data / other.data

        def backward(g, grads):
            grads[id(self)] += _unbroadcast(g / other.data, self.data.shape)
            grads[id(other)] += _unbroadcast(
                -g * self.data / (other.data * other.data), other.data.shape
            )

        return self._result(out_data, (self, other), backward)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("exponent must be a constant")
        out_data = self.data**exponent

        def backward(g, grads):
            grads[id(self)] += g * exponent * self.data ** (exponent - 1)

        return self._result(out_data, (self,), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError("matmul expects 2-D tensors")
        if self.data.shape[1] != other.data.shape[0]:
            raise ShapeError(
                f"matmul inner dims disagree: {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def backward(g, grads):
            grads[id(self)] += g @ other.data.T
            grads[id(other)] += self.data.T @ g

        return self._result(out_data, (self, other), backward)

    __matmul__ = matmul

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, grads):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            grads[id(self)] += np.broadcast_to(g, self.data.shape)

        return self._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g, grads):
            grads[id(self)] += g * out_data

        return self._result(out_data, (self,), backward)

    def log(self) -> "Tensor":
        """Natural log with the argument floored at LOG_FLOOR."""
        clamped = np.maximum(self.data, LOG_FLOOR)
        out_data = np.log(clamped)
        mask = (self.data > LOG_FLOOR).astype(np.float64)

        def backward(g, grads):
            grads[id(self)] += g * mask / clamped

        return self._result(out_data, (self,), backward)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def backward(g, grads):
            grads[id(self)] += g * (1.0 - out_data * out_data)

        return self._result(out_data, (self,), backward)

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)

        def backward(g, grads):
            grads[id(self)] += g * (self.data > 0.0)

        return self._result(out_data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g, grads):
            grads[id(self)] += g * out_data * (1.0 - out_data)

        return self._result(out_data, (self,), backward)

    def swish(self) -> "Tensor":
        sig = 1.0 / (1.0 + np.exp(-self.data))
        out_data = self.data * sig

        def backward(g, grads):
            grads[id(self)] += g * (sig + self.data * sig * (1.0 - sig))

        return self._result(out_data, (self,), backward)

    def softmax_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError("softmax_rows expects a 2-D (batch x logits) tensor")
        shifted = self.data - self.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=1, keepdims=True)

        def backward(g, grads):
            dot = (g * out_data).sum(axis=1, keepdims=True)
            grads[id(self)] += out_data * (g - dot)

        return self._result(out_data, (self,), backward)

    # -- structural ops -------------------------------------------------------

    def gather_rows(self, index: np.ndarray) -> "Tensor":
        """Pick entry `index[i]` from row i of a 2-D tensor → 1-D result."""
        if self.data.ndim != 2:
            raise ShapeError("gather_rows expects a 2-D tensor")
        index = np.asarray(index, dtype=np.intp)
        rows = np.arange(self.data.shape[0])
        out_data = self.data[rows, index]

        def backward(g, grads):
            buf = np.zeros_like(self.data)
            buf[rows, index] = g
            grads[id(self)] += buf

        return self._result(out_data, (self,), backward)

    # -- backward pass --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(n): np.zeros_like(n.data) for n in topo}
        grads[id(self)] = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(grads[id(node)], grads)
        for node in topo:
            if node.requires_grad and node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += grads[id(node)]

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def stack_cols(columns: list[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length as the columns of a 2-D tensor."""
    n = columns[0].data.shape[0]
    for c in columns:
        if c.data.ndim != 1 or c.data.shape[0] != n:
            raise ShapeError("stack_cols expects equally sized 1-D tensors")
    out_data = np.stack([c.data for c in columns], axis=1)

    def backward(g, grads):
        for j, c in enumerate(columns):
            grads[id(c)] += g[:, j]

    return Tensor._result(out_data, tuple(columns), backward)


def batchnorm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = 0.1,
    update_stats: bool = True,
) -> Tensor:
    """Batch normalization over the batch axis of a (b x h) tensor.

    Train mode normalizes by batch statistics (and optionally folds them into
    the running buffers in place); infer mode uses the running buffers.
    """
    if x.data.ndim != 2:
        raise ShapeError("batchnorm expects a 2-D tensor")
    if mode == "train":
        if x.data.shape[0] < 2:
            raise DegenerateBatchError("batchnorm needs batch size >= 2 in train mode")
        mean = x.mean(axis=0)
        centered = x - mean
        var = (centered * centered).mean(axis=0)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.data
            running_var *= 1.0 - momentum
            running_var += momentum * var.data
        inv_std = (var + BN_EPS) ** -0.5
        return centered * inv_std * scale + shift
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
        return (x - Tensor(running_mean)) * Tensor(inv_std) * scale + shift
    raise ConfigError(f"unknown batchnorm mode {mode!r}")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, mode: str) -> Tensor:
    """Inverted dropout: train mode zeroes units w.p. `rate` and rescales."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"unknown dropout mode {mode!r}")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    `labels` is either an integer index vector or a one-hot (b x c) array.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    labels = labels.astype(np.intp)
    c = probs.data.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        from .exceptions import LabelError

        raise LabelError(f"label outside [0, {c})")
    return -(probs.gather_rows(labels).log().mean())
