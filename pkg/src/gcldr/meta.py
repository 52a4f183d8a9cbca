"""Episodic replacement for the extractor phase: split the latent domains,
take virtual gradient steps on one side's soft losses, and penalize the
other side's loss at the stepped parameters (first-order scheme)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ldd
from .exceptions import ConfigError, DivergenceError
from .model import ModelBundle
from .optim import zero_grads
from .tensor import Tensor


@dataclass
class DomainSplit:
    s1: tuple[int, ...]
    s2: tuple[int, ...]

    def __post_init__(self):
        s1, s2 = set(self.s1), set(self.s2)
        if not s1 or not s2 or (s1 & s2):
            raise ConfigError("split sides must be disjoint and nonempty")
        self.s1 = tuple(sorted(s1))
        self.s2 = tuple(sorted(s2))


def split_domains(k: int, rng: np.random.Generator) -> DomainSplit:
    """Uniformly random bipartition of [k] into two nonempty sides."""
    if k < 2:
        raise ConfigError("need k >= 2 to split domains")
    while True:
        side = rng.integers(0, 2, size=k)
        if 0 < side.sum() < k:
            break
    return DomainSplit(
        tuple(np.flatnonzero(side == 0)), tuple(np.flatnonzero(side == 1))
    )


def merged_soft_loss(
    bundle: ModelBundle,
    f_cd: Tensor,
    f_ci: Tensor,
    y: np.ndarray,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix,
    r: int,
) -> Tensor:
    """Soft per-domain recognition loss summed over both feature spaces."""
    loss = ldd.soft_domain_loss(bundle.r_l_cd, f_cd, y, rho_cd, r)
    return loss + ldd.soft_domain_loss(bundle.r_l_ci, f_ci, y, rho_ci, r)


def _side_mean(bundle, f_cd, f_ci, y, rho_cd, rho_ci, side) -> Tensor:
    total = merged_soft_loss(bundle, f_cd, f_ci, y, rho_cd, rho_ci, side[0])
    for r in side[1:]:
        total = total + merged_soft_loss(bundle, f_cd, f_ci, y, rho_cd, rho_ci, r)
    return total * (1.0 / len(side))


def _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, side):
    """Mean gradient of per-domain soft losses over the extractor group.

    Returns (loss value, list of per-parameter gradient arrays).
    """
    params = bundle.extractor_params()
    loss = _side_mean(bundle, f_cd, f_ci, y, rho_cd, rho_ci, side)
    zero_grads(bundle.all_params())
    loss.backward()
    return float(loss.data), [p.grad.copy() for p in params]


def _flatten(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def meta_gradients(
    bundle: ModelBundle,
    X: np.ndarray,
    y: np.ndarray,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix,
    split: DomainSplit,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened meta-train gradients over the extractor group (dropout off)."""
    f_cd, f_ci = bundle.forward_features(Tensor(X), mode="train", dropout_off=True)
    _, g1 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s1)
    _, g2 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s2)
    return _flatten(g1), _flatten(g2)


def _with_perturbed(params, originals, direction, alpha):
    for p, orig, d in zip(params, originals, direction):
        p.data = orig - alpha * d


def _restore(params, originals):
    for p, orig in zip(params, originals):
        p.data = orig


def meta_loss_exact(
    bundle: ModelBundle,
    X: np.ndarray,
    y: np.ndarray,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix,
    split: DomainSplit,
    gamma: float,
    alpha: float,
) -> float:
    """Perturb-then-evaluate value of the meta objective (dropout off)."""
    params = bundle.extractor_params()
    Xt = Tensor(np.asarray(X, dtype=np.float64))
    f_cd, f_ci = bundle.forward_features(Xt, mode="train", dropout_off=True)
    _, g1 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s1)
    _, g2 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s2)
    originals = [p.data for p in params]

    def side_value(side, direction):
        _with_perturbed(params, originals, direction, alpha)
        f_cd_p, f_ci_p = bundle.forward_features(Xt, mode="train", dropout_off=True)
        value = float(_side_mean(bundle, f_cd_p, f_ci_p, y, rho_cd, rho_ci, side).data)
        _restore(params, originals)
        return value

    v1 = side_value(split.s1, g2)
    v2 = side_value(split.s2, g1)
    return (gamma / 2.0) * (v1 + v2)


def verify_taylor(
    bundle: ModelBundle,
    X: np.ndarray,
    y: np.ndarray,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix,
    split: DomainSplit,
    gamma: float,
    alpha_list: list[float],
) -> list[dict]:
    """Compare the exact meta loss against its first-order expansion.

    The expansion replaces the perturbed evaluations with the unperturbed
    side means minus gamma * alpha * (grad1 . grad2). Returns one row per
    alpha with the absolute error and the decay ratio against the previous
    alpha.
    """
    params = bundle.extractor_params()
    Xt = Tensor(np.asarray(X, dtype=np.float64))
    f_cd, f_ci = bundle.forward_features(Xt, mode="train", dropout_off=True)
    m1, g1 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s1)
    m2, g2 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s2)
    dot = float(_flatten(g1) @ _flatten(g2))
    base = (gamma / 2.0) * (m1 + m2)

    rows = []
    prev_err = None
    for alpha in alpha_list:
        exact = meta_loss_exact(bundle, X, y, rho_cd, rho_ci, split, gamma, alpha)
        approx = base - gamma * alpha * dot
        err = abs(exact - approx)
        ratio = (prev_err / err) if (prev_err is not None and err > 0) else float("nan")
        rows.append(
            {
                "alpha": alpha,
                "exact": exact,
                "approx": approx,
                "abs_error": err,
                "decay_ratio": ratio,
            }
        )
        prev_err = err
    return rows


def meta_phase(
    bundle: ModelBundle,
    Xt: Tensor,
    f_cd: Tensor,
    f_ci: Tensor,
    y: np.ndarray,
    cfg,
    opt_extractors,
    prior,
    rng: np.random.Generator,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix,
) -> dict:
    """Extractor update with the episodic term added (first-order).

    The inner step's Jacobian is ignored: the gradient of each side's loss is
    evaluated at the stepped parameters and applied at the current ones.
    """
    from .trainer import phase2_objective

    params = bundle.extractor_params()

    base, parts = phase2_objective(bundle, f_cd, f_ci, y, rho_cd, rho_ci, prior, cfg)
    if not np.isfinite(float(base.data)):
        raise DivergenceError("non-finite loss in meta extractor phase")
    zero_grads(bundle.all_params())
    base.backward()
    base_grads = [p.grad.copy() for p in params]

    split = split_domains(cfg.k, rng)
    _, g1 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s1)
    _, g2 = _side_grads(bundle, f_cd, f_ci, y, rho_cd, rho_ci, split.s2)

    originals = [p.data.copy() for p in params]

    def side_grad_at(side, direction):
        _with_perturbed(params, originals, direction, cfg.alpha)
        f_cd_p, f_ci_p = bundle.forward_features(
            Xt, mode="train", rng=rng, update_stats=False
        )
        loss = _side_mean(bundle, f_cd_p, f_ci_p, y, rho_cd, rho_ci, side)
        zero_grads(bundle.all_params())
        loss.backward()
        grads = [p.grad.copy() for p in params]
        _restore(params, originals)
        return float(loss.data), grads

    v1, ga = side_grad_at(split.s1, g2)
    v2, gb = side_grad_at(split.s2, g1)
    parts["l_meta"] = (cfg.gamma / 2.0) * (v1 + v2)
    if not np.isfinite(parts["l_meta"]):
        raise DivergenceError("non-finite meta loss")

    for p, bg, a, b_ in zip(params, base_grads, ga, gb):
        p.grad = bg + (cfg.gamma / 2.0) * (a + b_)
    opt_extractors.step(params)
    return parts
