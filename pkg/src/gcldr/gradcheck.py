"""Central finite-difference verification of backward gradients."""

from __future__ import annotations

import numpy as np

from .optim import zero_grads
from .tensor import Tensor


def finite_diff_check(loss_fn, params: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    `loss_fn` must rebuild the forward graph on every call and be
    deterministic (fixed RNG, no stochastic layers). The relative error for
    one entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    zero_grads(params)
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = float(loss_fn().data)
            flat[idx] = orig - eps
            lo = float(loss_fn().data)
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(a_flat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[idx] - numeric) / denom)
    return worst


def movable_params(net) -> list[Tensor]:
    """Parameters of `net` whose gradient a loss can actually move.

    A dense bias that feeds straight into a batchnorm layer adds a constant
    column shift that the normalization removes exactly, so its true gradient
    is identically zero; a finite-difference comparison on it would only
    measure floating-point rounding noise against the 1e-8 denominator floor.
    Such biases are excluded.
    """
    layers = net._layers
    out: list[Tensor] = []
    for i, (kind, payload) in enumerate(layers):
        if kind == "dense":
            w, b = payload
            out.append(w)
            next_kind = layers[i + 1][0] if i + 1 < len(layers) else None
            if next_kind != "batchnorm":
                out.append(b)
        elif kind == "batchnorm":
            out += [payload["scale"], payload["shift"]]
    return out


def check_loss_suite(
    seed: int = 0,
    d: int = 8,
    p_width: int = 16,
    g_width: int = 8,
    c: int = 3,
    k: int = 2,
    b: int = 4,
    eps: float = 1e-5,
) -> dict[str, float]:
    """Finite-difference check of every training loss on one tiny model.

    Dropout is disabled and the E-step posteriors are frozen up front, so
    each loss is a smooth deterministic function of the parameters.
    """
    from . import ldd
    from .model import build_bundle
    from .trainer import (
        TrainConfig,
        estimate_prior,
        loss_ac,
        loss_cd,
        loss_ci,
        loss_d,
        loss_u,
        phase1_objective,
        phase2_objective,
    )

    rng = np.random.default_rng(seed)
    bundle = build_bundle(
        d=d, c=c, k=k, p_width=p_width, g_width=g_width, p_dropout=0.0,
        seed=rng, variant="full",
    )
    X = rng.normal(size=(b, d))
    y = rng.integers(0, c, size=b)
    prior = estimate_prior(y, c)
    cfg = TrainConfig(k=k, batch_size=b, epochs=1, p_width=p_width, g_width=g_width,
                      p_dropout=0.0, seed=seed)

    def features():
        return bundle.forward_features(Tensor(X), mode="train", dropout_off=True)

    f_cd0, f_ci0 = features()
    rho_cd = ldd.compute_posteriors(bundle.r_l_cd, bundle.d_cd, f_cd0, y, space="cd")
    rho_ci = ldd.compute_posteriors(bundle.r_l_ci, bundle.d_ci, f_ci0, y, space="ci")

    # Each loss is checked against the parameters it is a function of.
    # Parameter groups a loss never touches (e.g. the domain-invariant branch
    # for the cd-space global loss) have identically zero gradients, so
    # including them would only compare rounding noise, not derivatives.
    extractor = movable_params(bundle.p) + movable_params(bundle.g_cd) + movable_params(bundle.g_ci)
    locals_cd = [p for net in bundle.r_l_cd for p in movable_params(net)]
    locals_ci = [p for net in bundle.r_l_ci for p in movable_params(net)]
    discs = movable_params(bundle.d_cd) + movable_params(bundle.d_ci)
    everything = (
        extractor + locals_cd + locals_ci + discs
        + movable_params(bundle.r_g_cd) + movable_params(bundle.r_g_ci)
    )

    checks = {
        "discovery": (
            lambda: loss_d(bundle, *features(), y, rho_cd, rho_ci),
            extractor + locals_cd + locals_ci + discs,
        ),
        "elimination": (
            lambda: loss_u(bundle, *features(), y),
            extractor + discs,
        ),
        "global_cd": (
            lambda: loss_cd(bundle, features()[0], y),
            movable_params(bundle.p) + movable_params(bundle.g_cd)
            + movable_params(bundle.r_g_cd),
        ),
        "global_ci": (
            lambda: loss_ci(bundle, features()[1], y),
            movable_params(bundle.p) + movable_params(bundle.g_ci)
            + movable_params(bundle.r_g_ci),
        ),
        "anti_class": (
            lambda: loss_ac(bundle, features()[1], prior),
            movable_params(bundle.p) + movable_params(bundle.g_ci)
            + movable_params(bundle.r_g_ci),
        ),
        "soft_domain": (
            lambda: ldd.soft_domain_loss(bundle.r_l_cd, features()[0], y, rho_cd, 0),
            movable_params(bundle.p) + movable_params(bundle.g_cd)
            + movable_params(bundle.r_l_cd[0]),
        ),
        "phase1": (
            lambda: phase1_objective(bundle, *features(), y, rho_cd, rho_ci, cfg)[0],
            everything,
        ),
        "phase2": (
            lambda: phase2_objective(bundle, *features(), y, rho_cd, rho_ci, prior, cfg)[0],
            everything,
        ),
    }
    return {
        name: finite_diff_check(fn, params, eps=eps)
        for name, (fn, params) in checks.items()
    }
