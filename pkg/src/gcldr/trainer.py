"""Alternating training loop: per batch, one optimizer step on the
recognition/discrimination heads, then one on the mapping/extractor group,
with EM posteriors recomputed each batch."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ldd
from .exceptions import ConfigError, DivergenceError
from .metrics import metrics
from .model import ModelBundle, Network, build_bundle, head_spec
from .optim import make_optimizer, zero_grads
from .tensor import Tensor, cross_entropy


@dataclass
class TrainConfig:
    k: int = 2
    batch_size: int = 128
    epochs: int = 65
    lr: float = 1e-3
    lr_heads: float | None = None
    optimizer: str = "adam"
    seed: int = 0
    variant: str = "full"
    gamma: float = 0.01
    alpha: float = 1.0
    p_width: int = 512
    g_width: int = 128
    p_dropout: float = 0.5
    w_cd: float = 1.0
    w_ci: float = 1.0
    w_ac: float = 1.0
    w_d: float = 1.0
    w_u: float = 2.0
    warmup_epochs: int = 30
    refine_epochs: int = 15
    discovery_restarts: int = 5
    early_stop: bool = False
    patience: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.gamma < 0 or self.alpha < 0:
            raise ConfigError("gamma and alpha must be >= 0")
        if self.warmup_epochs < 0 or self.refine_epochs < 0:
            raise ConfigError("schedule epoch counts must be >= 0")
        if self.discovery_restarts < 1:
            raise ConfigError("discovery_restarts must be >= 1")


@dataclass
class ClassPrior:
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)


def estimate_prior(labels: np.ndarray, c: int | None = None) -> ClassPrior:
    labels = np.asarray(labels, dtype=np.intp)
    if c is None:
        c = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=c).astype(np.float64)
    return ClassPrior(counts / counts.sum())


# -- composite losses ---------------------------------------------------------


def loss_cd(bundle: ModelBundle, f_cd: Tensor, y: np.ndarray) -> Tensor:
    return cross_entropy(bundle.r_g_cd(f_cd), y)


def loss_ci(bundle: ModelBundle, f_ci: Tensor, y: np.ndarray) -> Tensor:
    return cross_entropy(bundle.r_g_ci(f_ci), y)


def loss_ac(bundle: ModelBundle, f_ci: Tensor, prior: ClassPrior) -> Tensor:
    """Push class predictions on the class-independent features toward the
    training-class frequencies (squared deviation, averaged over batch and
    classes)."""
    probs = bundle.r_g_ci(f_ci)
    b, c = probs.data.shape
    diff = probs - Tensor(prior.p)
    return (diff * diff).sum() * (1.0 / (b * c))


def loss_d(
    bundle: ModelBundle,
    f_cd: Tensor,
    f_ci: Tensor | None,
    y: np.ndarray,
    rho_cd: ldd.PosteriorMatrix,
    rho_ci: ldd.PosteriorMatrix | None,
) -> Tensor:
    total = ldd.discovery_loss(bundle.r_l_cd, bundle.d_cd, f_cd, y, rho_cd)
    if f_ci is not None and bundle.r_l_ci:
        total = total + ldd.discovery_loss(bundle.r_l_ci, bundle.d_ci, f_ci, y, rho_ci)
    return total


def loss_u(bundle: ModelBundle, f_cd: Tensor, f_ci: Tensor | None, y: np.ndarray) -> Tensor:
    total = ldd.elimination_loss(bundle.r_l_cd, bundle.d_cd, f_cd, y)
    if f_ci is not None and bundle.r_l_ci:
        total = total + ldd.elimination_loss(bundle.r_l_ci, bundle.d_ci, f_ci, y)
    return total


# Feature-based ablation: no local heads, so the posterior degenerates to the
# discriminator's own output. Discovery trains the discriminator toward its
# detached posterior; elimination pushes its output toward uniform through
# the features.


def fb_discovery_loss(disc, f: Tensor) -> Tensor:
    b = f.data.shape[0]
    probs = disc(f)
    weights = Tensor(probs.data.copy())
    return -((weights * probs.log()).sum()) * (1.0 / b)


def fb_elimination_loss(disc, f: Tensor, k: int) -> Tensor:
    b = f.data.shape[0]
    diff = disc(f) - (1.0 / k)
    return (diff * diff).sum() * (1.0 / b)


# -- discovery restarts -------------------------------------------------------

# The discovery objective has poor local optima: a confidently wrong latent
# partition scores an almost-flat posterior against the true one. Standard EM
# practice applies: run several independently initialised discovery stacks
# side by side during the warmup, converge them, and keep the one with the
# lowest discovery loss.


def _make_discovery_candidates(bundle: ModelBundle, cfg: TrainConfig, rng) -> list[dict]:
    cands = [
        {
            "r_l_cd": bundle.r_l_cd,
            "d_cd": bundle.d_cd,
            "r_l_ci": bundle.r_l_ci,
            "d_ci": bundle.d_ci,
        }
    ]
    gw = bundle.g_cd.out_dim
    has_ci = bundle.g_ci is not None and bool(bundle.r_l_ci)
    for _ in range(cfg.discovery_restarts - 1):
        cands.append(
            {
                "r_l_cd": [Network(head_spec(gw, bundle.c), rng) for _ in range(cfg.k)],
                "d_cd": Network(head_spec(gw, cfg.k), rng),
                "r_l_ci": [Network(head_spec(gw, bundle.c), rng) for _ in range(cfg.k)]
                if has_ci
                else [],
                "d_ci": Network(head_spec(gw, cfg.k), rng) if has_ci else None,
            }
        )
    return cands


def _candidate_params(cand: dict) -> list[Tensor]:
    params: list[Tensor] = []
    for head in list(cand["r_l_cd"]) + list(cand["r_l_ci"]):
        params += head.params
    params += cand["d_cd"].params
    if cand["d_ci"] is not None:
        params += cand["d_ci"].params
    return params


def _candidate_discovery_loss(cand: dict, f_cd: Tensor, f_ci: Tensor | None, y) -> Tensor:
    rho_cd = ldd.compute_posteriors(cand["r_l_cd"], cand["d_cd"], f_cd, y, space="cd")
    total = ldd.discovery_loss(cand["r_l_cd"], cand["d_cd"], f_cd, y, rho_cd)
    if f_ci is not None and cand["r_l_ci"]:
        rho_ci = ldd.compute_posteriors(cand["r_l_ci"], cand["d_ci"], f_ci, y, space="ci")
        total = total + ldd.discovery_loss(cand["r_l_ci"], cand["d_ci"], f_ci, y, rho_ci)
    return total


def _refine_step(bundle, X, y, cands, opt_heads, extra_params, rng):
    """Discovery-only step: all candidate stacks fit the current features."""
    Xt = Tensor(X)
    f_cd, f_ci = bundle.forward_features(Xt, mode="train", rng=rng, update_stats=False)
    total = _candidate_discovery_loss(cands[0], f_cd, f_ci, y)
    for cand in cands[1:]:
        total = total + _candidate_discovery_loss(cand, f_cd, f_ci, y)
    _check_finite(float(total.data), "discovery refinement")
    zero_grads(bundle.all_params() + extra_params)
    total.backward()
    opt_heads.step(bundle.head_params() + extra_params)
    return {"l_d": float(total.data)}


def _select_candidate(bundle: ModelBundle, X: np.ndarray, y: np.ndarray, cands: list[dict]):
    """Swap the lowest-loss discovery stack into the bundle.

    Scoring uses the class-dependent space only; the class-independent
    features are being pushed toward class indifference, which makes their
    discovery loss an unstable ranking signal.
    """
    f_cd, _ = bundle.forward_features(Tensor(X), mode="infer")
    scores = []
    for cand in cands:
        rho = ldd.compute_posteriors(cand["r_l_cd"], cand["d_cd"], f_cd, y, space="cd")
        scores.append(float(ldd.discovery_loss(cand["r_l_cd"], cand["d_cd"], f_cd, y, rho).data))
    best = int(np.argmin(scores))
    bundle.r_l_cd = cands[best]["r_l_cd"]
    bundle.d_cd = cands[best]["d_cd"]
    if cands[best]["d_ci"] is not None:
        bundle.r_l_ci = cands[best]["r_l_ci"]
        bundle.d_ci = cands[best]["d_ci"]
    return best, scores


# -- phase objectives ---------------------------------------------------------


def _estep(bundle: ModelBundle, f_cd: Tensor, f_ci: Tensor | None, y: np.ndarray):
    rho_cd = rho_ci = None
    if bundle.r_l_cd and bundle.d_cd is not None:
        rho_cd = ldd.compute_posteriors(bundle.r_l_cd, bundle.d_cd, f_cd, y, space="cd")
        if f_ci is not None and bundle.r_l_ci:
            rho_ci = ldd.compute_posteriors(bundle.r_l_ci, bundle.d_ci, f_ci, y, space="ci")
    return rho_cd, rho_ci


def phase1_objective(bundle, f_cd, f_ci, y, rho_cd, rho_ci, cfg: TrainConfig):
    """Head-group objective; returns (loss tensor, named components)."""
    v = bundle.variant
    parts: dict[str, float] = {}
    terms = []

    def add(name, weight, tensor):
        parts[name] = float(tensor.data)
        terms.append(weight * tensor)

    if v != "no_unification":
        add("l_cd", cfg.w_cd, loss_cd(bundle, f_cd, y))
    if v in ("full", "meta", "feature_based", "class_confuse"):
        add("l_ci", cfg.w_ci, loss_ci(bundle, f_ci, y))
    if v in ("full", "meta", "single_space", "no_unification"):
        add("l_d", cfg.w_d, loss_d(bundle, f_cd, f_ci, y, rho_cd, rho_ci))
    elif v == "feature_based":
        fb = fb_discovery_loss(bundle.d_cd, f_cd) + fb_discovery_loss(bundle.d_ci, f_ci)
        add("l_d", cfg.w_d, fb)

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, parts


def phase2_objective(bundle, f_cd, f_ci, y, rho_cd, rho_ci, prior, cfg: TrainConfig):
    """Extractor-group objective (without the meta term)."""
    v = bundle.variant
    parts: dict[str, float] = {}
    terms = []

    def add(name, weight, tensor):
        parts[name] = float(tensor.data)
        terms.append(weight * tensor)

    if v == "no_unification":
        add("l_d2", cfg.w_d, loss_d(bundle, f_cd, f_ci, y, rho_cd, rho_ci))
    else:
        add("l_cd2", cfg.w_cd, loss_cd(bundle, f_cd, y))
        if v in ("full", "meta", "feature_based", "class_confuse"):
            add("l_ac", cfg.w_ac, loss_ac(bundle, f_ci, prior))
        if v in ("full", "meta", "single_space"):
            add("l_u", cfg.w_u, loss_u(bundle, f_cd, f_ci, y))
        elif v == "feature_based":
            fb = fb_elimination_loss(bundle.d_cd, f_cd, cfg.k) + fb_elimination_loss(
                bundle.d_ci, f_ci, cfg.k
            )
            add("l_u", cfg.w_u, fb)

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, parts


def _check_finite(value: float, context: str):
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss in {context}")


def train_step(
    bundle: ModelBundle,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    opt_heads,
    opt_extractors,
    prior: ClassPrior,
    rng: np.random.Generator,
    candidates: list[dict] | None = None,
) -> dict:
    """One alternating step: E-step posteriors, head phase, extractor phase.

    `candidates` carries extra discovery stacks trained alongside the heads
    during the warmup stage; only their own parameters receive gradients.
    """
    Xt = Tensor(X)
    report: dict[str, float] = {}
    extra_params = []
    if candidates is not None:
        extra_params = [p for cand in candidates[1:] for p in _candidate_params(cand)]

    f_cd, f_ci = bundle.forward_features(Xt, mode="train", rng=rng, update_stats=False)
    rho_cd, rho_ci = _estep(bundle, f_cd, f_ci, y)

    obj1, parts1 = phase1_objective(bundle, f_cd, f_ci, y, rho_cd, rho_ci, cfg)
    if candidates is not None:
        for cand in candidates[1:]:
            obj1 = obj1 + _candidate_discovery_loss(cand, f_cd, f_ci, y)
    _check_finite(float(obj1.data), "head phase")
    zero_grads(bundle.all_params() + extra_params)
    obj1.backward()
    opt_heads.step(bundle.head_params() + extra_params)
    report.update(parts1)

    f_cd, f_ci = bundle.forward_features(Xt, mode="train", rng=rng, update_stats=True)
    if bundle.variant == "meta" and cfg.gamma > 0:
        from .meta import meta_phase

        parts2 = meta_phase(
            bundle, Xt, f_cd, f_ci, y, cfg, opt_extractors, prior, rng, rho_cd, rho_ci
        )
    else:
        obj2, parts2 = phase2_objective(bundle, f_cd, f_ci, y, rho_cd, rho_ci, prior, cfg)
        _check_finite(float(obj2.data), "extractor phase")
        zero_grads(bundle.all_params())
        obj2.backward()
        opt_extractors.step(bundle.extractor_params())
    report.update(parts2)
    return report


def predict(bundle: ModelBundle, X: np.ndarray) -> np.ndarray:
    """Class probabilities from the deployed stack (infer mode)."""
    Xt = Tensor(np.asarray(X, dtype=np.float64))
    if bundle.variant == "no_unification":
        from .variants import predict_no_unification

        return predict_no_unification(bundle, X)
    f_cd, _ = bundle.forward_features(Xt, mode="infer")
    return bundle.r_g_cd(f_cd).data


def fit(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    tau: float | None = None,
) -> tuple[ModelBundle, list[dict]]:
    """Train a fresh bundle for `cfg.epochs` epochs of shuffled mini-batches.

    Returns the bundle and one history row per epoch (mean step losses plus
    validation aAUC / top-1 accuracy when `val` is given).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.shape[0] == 0:
        raise ConfigError("empty training set")
    c = int(y.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    bundle = build_bundle(
        d=X.shape[1],
        c=c,
        k=cfg.k,
        p_width=cfg.p_width,
        g_width=cfg.g_width,
        p_dropout=cfg.p_dropout,
        seed=rng,
        variant=cfg.variant,
    )
    prior = estimate_prior(y, c)
    opt_heads = make_optimizer(cfg.optimizer, cfg.lr_heads if cfg.lr_heads is not None else cfg.lr)
    opt_extractors = make_optimizer(cfg.optimizer, cfg.lr)
    if tau is None:
        tau = 1.0 / c

    # Variants with a discriminator run the staged schedule: warmup with the
    # elimination pressure off so discovery can establish, a discovery-only
    # refinement stretch, restart selection, then the adversarial stage.
    staged = bundle.d_cd is not None
    warm_end = cfg.warmup_epochs if staged else 0
    refine_end = warm_end + (cfg.refine_epochs if staged else 0)
    cands = None
    if staged and bundle.r_l_cd and cfg.discovery_restarts > 1 and refine_end > 0:
        cands = _make_discovery_candidates(bundle, cfg, rng)
    extra_params = (
        [p for cand in cands[1:] for p in _candidate_params(cand)] if cands else []
    )
    cfg_warm = replace(cfg, w_u=0.0, gamma=0.0)

    history: list[dict] = []
    best_val = -np.inf
    stale = 0
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        if epoch < warm_end:
            stage = "warmup"
        elif epoch < refine_end:
            stage = "refine"
        else:
            stage = "main"
        if epoch == refine_end and cands is not None:
            _select_candidate(bundle, X, y, cands)
            cands = None
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        n_steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            if stage == "refine" and bundle.r_l_cd:
                all_cands = cands if cands is not None else [
                    {
                        "r_l_cd": bundle.r_l_cd,
                        "d_cd": bundle.d_cd,
                        "r_l_ci": bundle.r_l_ci,
                        "d_ci": bundle.d_ci,
                    }
                ]
                report = _refine_step(
                    bundle, X[idx], y[idx], all_cands, opt_heads, extra_params, rng
                )
            else:
                report = train_step(
                    bundle,
                    X[idx],
                    y[idx],
                    cfg_warm if stage != "main" else cfg,
                    opt_heads,
                    opt_extractors,
                    prior,
                    rng,
                    candidates=cands if stage != "main" else None,
                )
            for k_, v_ in report.items():
                sums[k_] = sums.get(k_, 0.0) + v_
            n_steps += 1
        row = {"epoch": epoch, "stage": stage}
        row.update({k_: v_ / n_steps for k_, v_ in sums.items()})
        if val is not None:
            rep = metrics(predict(bundle, val[0]), val[1], tau)
            row["val_aauc"] = rep.aauc
            row["val_acc1"] = rep.acc1
        history.append(row)
        if cfg.early_stop and val is not None and stage == "main":
            if row["val_aauc"] > best_val + 1e-12:
                best_val = row["val_aauc"]
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    return bundle, history
