"""Ablation-variant construction and the mixture-of-heads inference used
when domains are discovered but never unified."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError
from .model import ModelBundle, build_bundle
from .tensor import Tensor


def make_variant(
    d: int,
    c: int,
    k: int,
    variant: str,
    p_width: int = 512,
    g_width: int = 128,
    p_dropout: float = 0.5,
    seed=0,
) -> ModelBundle:
    """Bundle with the components the named variant keeps.

    single_space drops the class-independent branch; feature_based drops both
    local-head families (the discriminators carry discovery alone);
    class_confuse drops all discovery heads; no_unification keeps only the
    local cd heads and their discriminator.
    """
    return build_bundle(
        d, c, k, p_width=p_width, g_width=g_width, p_dropout=p_dropout,
        seed=seed, variant=variant,
    )


def predict_no_unification(bundle: ModelBundle, X: np.ndarray) -> np.ndarray:
    """Mixture over local heads weighted by the discriminator's domain
    probabilities; rows sum to 1 as a convex combination of distributions."""
    if bundle.variant != "no_unification":
        raise ConfigError("mixture inference is only defined for no_unification")
    Xt = Tensor(np.asarray(X, dtype=np.float64))
    f_cd, _ = bundle.forward_features(Xt, mode="infer")
    weights = bundle.d_cd(f_cd).data
    out = np.zeros((X.shape[0], bundle.c))
    for r, head in enumerate(bundle.r_l_cd):
        out += weights[:, r : r + 1] * head(f_cd).data
    return out
