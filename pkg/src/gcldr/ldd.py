"""Latent-domain discovery: Bayes posteriors over domains, the discovery and
elimination losses, per-domain soft losses, and an independently coded
expected complete log-likelihood used as a cross-check.

The posterior of sample i for domain r combines the discriminator's
feature-based probability with the likelihood that local head r assigns to
the true class, normalized across domains. The discovery loss is the EM
M-step objective with the posteriors held fixed; the elimination loss
recomputes the posterior differentiably through the features and pushes it
toward uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegeneratePosteriorError, LabelError
from .model import Network
from .tensor import LOG_FLOOR, Tensor, stack_cols


@dataclass
class PosteriorMatrix:
    """Soft domain assignments; rows sum to 1. `space` is 'cd' or 'ci'."""

    rho: np.ndarray
    space: str = "cd"

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim != 2:
            raise ValueError("posterior matrix must be 2-D")
        self.rho = rho


def _check_labels(y: np.ndarray, c: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelError(f"label outside [0, {c})")
    return y


def local_likelihood(heads: list[Network], f: Tensor, y: np.ndarray) -> Tensor:
    """Column r holds the probability head r assigns to the true class."""
    y = _check_labels(y, heads[0].spec.layers[0].width)
    return stack_cols([h(f).gather_rows(y) for h in heads])


def posterior_tensor(heads: list[Network], disc: Network, f: Tensor, y: np.ndarray) -> Tensor:
    """Differentiable domain posterior, computed in log space.

    Row-wise max subtraction keeps the exponentials in range for extreme
    logits; the subtracted max is a constant, which leaves both the value and
    the gradient of the normalized result unchanged.
    """
    log_l = local_likelihood(heads, f, y).log()
    log_d = disc(f).log()
    s = log_l + log_d
    shifted = s - Tensor(s.data.max(axis=1, keepdims=True))
    e = shifted.exp()
    norm = e.sum(axis=1, keepdims=True)
    if np.any(norm.data <= 0.0):
        raise DegeneratePosteriorError("posterior row summed to zero")
    return e / norm


def compute_posteriors(
    heads: list[Network], disc: Network, f: Tensor, y: np.ndarray, space: str = "cd"
) -> PosteriorMatrix:
    """E-step posteriors, detached from the graph (constant weights)."""
    rho = posterior_tensor(heads, disc, Tensor(f.data), y)
    return PosteriorMatrix(rho.data.copy(), space=space)


def discovery_loss(
    heads: list[Network], disc: Network, f: Tensor, y: np.ndarray, rho: PosteriorMatrix
) -> Tensor:
    """Posterior-weighted recognition + discrimination cross-entropy.

    `rho` enters as a constant (E-step weight); gradients flow to the heads,
    the discriminator, and through `f`.
    """
    b = f.data.shape[0]
    log_l = local_likelihood(heads, f, y).log()
    log_d = disc(f).log()
    weights = Tensor(rho.rho)
    return -((weights * (log_l + log_d)).sum()) * (1.0 / b)


def q_function(
    rho: PosteriorMatrix, heads: list[Network], disc: Network, f: Tensor, y: np.ndarray
) -> float:
    """Expected complete negative log-likelihood, written out longhand.

    Deliberately independent of discovery_loss: plain Python loops over
    samples, domains, and classes with the class indicator explicit. Used
    only as a verification oracle.
    """
    probs = [h(Tensor(f.data)).data for h in heads]
    d_probs = disc(Tensor(f.data)).data
    y = _check_labels(y, probs[0].shape[1])
    b, k = rho.rho.shape
    c = probs[0].shape[1]
    total = 0.0
    for i in range(b):
        for r in range(k):
            for j in range(c):
                indicator = 1.0 if y[i] == j else 0.0
                if indicator == 0.0:
                    continue
                total -= rho.rho[i, r] * indicator * math.log(max(d_probs[i, r], LOG_FLOOR))
                total -= rho.rho[i, r] * indicator * math.log(max(probs[r][i, j], LOG_FLOOR))
    return total / b


def elimination_loss(heads: list[Network], disc: Network, f: Tensor, y: np.ndarray) -> Tensor:
    """Mean squared deviation of the (recomputed) posterior from uniform.

    The posterior here is a differentiable function of `f`; the heads and
    discriminator still receive gradients, but the optimization phase that
    minimizes this loss only steps the extractor group, which freezes them
    in effect.
    """
    k = len(heads)
    b = f.data.shape[0]
    rho = posterior_tensor(heads, disc, f, y)
    diff = rho - (1.0 / k)
    return (diff * diff).sum() * (1.0 / b)


def soft_domain_loss(
    heads: list[Network], f: Tensor, y: np.ndarray, rho: PosteriorMatrix, r: int
) -> Tensor:
    """Cross-entropy of local head r, soft-selected by column r of `rho`."""
    b = f.data.shape[0]
    y = _check_labels(y, heads[r].spec.layers[0].width)
    log_p = heads[r](f).gather_rows(y).log()
    return -((Tensor(rho.rho[:, r]) * log_p).sum()) * (1.0 / b)
