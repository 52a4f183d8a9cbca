"""Latent-domain discovery: posteriors, discovery/elimination losses."""

from types import SimpleNamespace

import numpy as np
import pytest

from gcldr import ldd
from gcldr.exceptions import LabelError
from gcldr.ldd import (
    PosteriorMatrix,
    compute_posteriors,
    discovery_loss,
    elimination_loss,
    local_likelihood,
    posterior_tensor,
    q_function,
    soft_domain_loss,
)
from gcldr.model import Network, build_bundle, head_spec
from gcldr.tensor import Tensor


def tiny_setup(seed=0, b=6, g=5, c=3, k=2):
    rng = np.random.default_rng(seed)
    heads = [Network(head_spec(g, c), rng) for _ in range(k)]
    disc = Network(head_spec(g, k), rng)
    f = Tensor(rng.normal(size=(b, g)))
    y = rng.integers(0, c, size=b)
    return heads, disc, f, y


class StubHead:
    """Callable head returning a fixed probability matrix."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        layer = SimpleNamespace(width=self.probs.shape[1])
        self.spec = SimpleNamespace(layers=[layer])

    def __call__(self, f):
        return Tensor(self.probs[: f.data.shape[0]])


def test_posterior_hand_arithmetic():
    # One sample, two latent domains: domain weights (0.6, 0.4) and true-class
    # likelihoods (0.9, 0.3) give responsibilities (9/11, 2/11) after Bayes
    # normalization.
    heads = [StubHead([[0.9, 0.1]]), StubHead([[0.3, 0.7]])]
    disc = StubHead([[0.6, 0.4]])
    f = Tensor(np.zeros((1, 4)))
    rho = compute_posteriors(heads, disc, f, np.array([0]))
    np.testing.assert_allclose(rho.rho, [[9.0 / 11.0, 2.0 / 11.0]], atol=1e-12)


def test_posterior_rows_sum_to_one_for_extreme_logits():
    # Likelihood ratios of e^{+/-100} across domains stress the normalizer.
    logits = np.array([[50.0, -50.0], [-50.0, 50.0], [50.0, 50.0]])
    heads = [
        StubHead(np.exp(logits[:, r : r + 1]) * np.array([[1.0, 1.0]]) / 2.0)
        for r in range(2)
    ]
    disc = StubHead(np.full((3, 2), 0.5))
    rho = compute_posteriors(heads, disc, Tensor(np.zeros((3, 4))), np.zeros(3, dtype=int))
    np.testing.assert_allclose(rho.rho.sum(axis=1), 1.0, atol=1e-9)


def test_log_space_posterior_matches_naive_arithmetic():
    heads, disc, f, y = tiny_setup(seed=1)
    rho = compute_posteriors(heads, disc, f, y).rho
    like = local_likelihood(heads, f, y).data
    d = disc(f).data
    joint = like * d
    naive = joint / joint.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(rho, naive, atol=1e-9)


def test_posterior_invariant_to_likelihood_row_scaling():
    heads = [StubHead([[0.9, 0.1]]), StubHead([[0.3, 0.7]])]
    scaled = [StubHead([[0.45, 0.05]]), StubHead([[0.15, 0.35]])]
    disc = StubHead([[0.6, 0.4]])
    f, y = Tensor(np.zeros((1, 4))), np.array([0])
    a = compute_posteriors(heads, disc, f, y).rho
    b = compute_posteriors(scaled, disc, f, y).rho
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_posterior_tensor_is_differentiable_through_features():
    heads, disc, f, y = tiny_setup(seed=2)
    f = Tensor(f.data, requires_grad=True)
    posterior_tensor(heads, disc, f, y).sum().backward()
    assert f.grad is not None and np.any(f.grad != 0.0)


def test_discovery_loss_matches_longhand_expectation():
    for seed in range(5):
        heads, disc, f, y = tiny_setup(seed=seed)
        rho = compute_posteriors(heads, disc, f, y)
        assert abs(float(discovery_loss(heads, disc, f, y, rho).data)
                   - q_function(rho, heads, disc, f, y)) <= 1e-9


def test_elimination_hand_arithmetic():
    # k=2, one sample, responsibilities (9/11, 2/11):
    # sum of squared deviations from uniform is 2*(9/11 - 1/2)^2.
    heads = [StubHead([[0.9, 0.1]]), StubHead([[0.3, 0.7]])]
    disc = StubHead([[0.6, 0.4]])
    out = float(elimination_loss(heads, disc, Tensor(np.zeros((1, 4))), np.array([0])).data)
    assert abs(out - 2.0 * (9.0 / 11.0 - 0.5) ** 2) <= 1e-12
    assert abs(out - 0.2025) <= 5e-4


def test_elimination_zero_iff_uniform_and_nonnegative():
    uniform = [StubHead(np.full((4, 3), 1 / 3)), StubHead(np.full((4, 3), 1 / 3))]
    disc = StubHead(np.full((4, 2), 0.5))
    f, y = Tensor(np.zeros((4, 5))), np.zeros(4, dtype=int)
    assert float(elimination_loss(uniform, disc, f, y).data) <= 1e-24
    for seed in range(5):
        heads, disc, f, y = tiny_setup(seed=seed)
        assert float(elimination_loss(heads, disc, f, y).data) > 0.0


def test_soft_domain_losses_sum_to_recognition_part_of_discovery():
    heads, disc, f, y = tiny_setup(seed=3)
    rho = compute_posteriors(heads, disc, f, y)
    b = f.data.shape[0]
    recognition = -float(
        (Tensor(rho.rho) * local_likelihood(heads, f, y).log()).sum().data
    ) / b
    total = sum(
        float(soft_domain_loss(heads, f, y, rho, r).data) for r in range(len(heads))
    )
    assert abs(total - recognition) <= 1e-12


def test_posterior_matrix_requires_two_dims():
    with pytest.raises(ValueError):
        PosteriorMatrix(np.ones(3))


def test_labels_outside_class_range_raise():
    heads, disc, f, y = tiny_setup()
    with pytest.raises(LabelError):
        compute_posteriors(heads, disc, f, np.array([0, 1, 2, 3, 0, 0]))


def test_bundle_posteriors_row_normalized_on_real_features():
    rng = np.random.default_rng(9)
    bundle = build_bundle(d=6, c=3, k=2, p_width=8, g_width=4, p_dropout=0.0,
                          seed=rng, variant="full")
    X = rng.normal(size=(10, 6))
    y = rng.integers(0, 3, size=10)
    f_cd, f_ci = bundle.forward_features(Tensor(X), mode="train", dropout_off=True)
    for heads, disc, f, space in (
        (bundle.r_l_cd, bundle.d_cd, f_cd, "cd"),
        (bundle.r_l_ci, bundle.d_ci, f_ci, "ci"),
    ):
        rho = ldd.compute_posteriors(heads, disc, f, y, space=space)
        assert rho.space == space
        np.testing.assert_allclose(rho.rho.sum(axis=1), 1.0, atol=1e-9)
