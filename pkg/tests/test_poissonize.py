import math

import numpy as np
import pytest
from scipy.linalg import expm

from poissongen.errors import ParameterOutOfRange, UnsupportedKernel
from poissongen.markov import (
    DiscreteDistribution,
    FiniteKernel,
    GaussianDistribution,
    SampledKernel,
    flip_kernel,
    invariant_measure,
    ou_prior,
    random_kernel,
)
from poissongen.poissonize import (
    boltzmann_residual,
    poisson_weights,
    poissonize,
    poissonized_vector,
    sample_poissonized,
    sample_poissonized_finite,
)


def test_weights_examples():
    w0 = poisson_weights(0.0)
    np.testing.assert_array_equal(w0.weights, [1.0])
    assert w0.tail_mass == 0.0
    assert poisson_weights(1.0).weights[0] == pytest.approx(math.exp(-1), abs=1e-16)
    w5 = poisson_weights(5.0, 1e-12)
    assert w5.weights.sum() >= 1 - 1e-12
    assert abs(w5.weights.sum() + w5.tail_mass - 1) <= 1e-14
    assert w5.tail_mass <= 1e-12
    with pytest.raises(ParameterOutOfRange):
        poisson_weights(-1.0)


def test_weights_large_t_log_space():
    w = poisson_weights(1e4)
    assert np.all(np.isfinite(w.log_weights))
    # the bulk of the weights is positive in double precision; the far tails
    # underflow in linear scale but stay finite in log space
    assert np.all(w.weights[int(1e4) - 300:int(1e4) + 300] > 0)
    assert abs(w.weights.sum() - 1) < 1e-10


def test_weight_derivative_matches_finite_difference():
    t, h = 2.5, 1e-6
    w = poisson_weights(t)
    up, dn = poisson_weights(t + h), poisson_weights(t - h)
    k = min(up.k_max, dn.k_max, w.k_max) + 1
    fd = (up.weights[:k] - dn.weights[:k]) / (2 * h)
    np.testing.assert_allclose(w.derivative()[:k], fd, atol=1e-8)


def test_poissonize_trivial_cases():
    p0 = DiscreteDistribution([0.3, 0.7])
    m = poissonize(flip_kernel(0.4), p0, 0.0)
    assert len(m.components) == 1
    np.testing.assert_array_equal(m.flatten(), p0.probs)
    ident = poissonize(FiniteKernel.identity(2), p0, 3.0)
    np.testing.assert_allclose(ident.flatten() / ident.flatten().sum(), p0.probs, atol=1e-15)
    with pytest.raises(UnsupportedKernel):
        poissonize(SampledKernel(lambda x, r: x), p0, 1.0)


def test_flip_chain_against_eigendecomposition():
    # P - I = [[-1, 1], [1, -1]] has eigenvalues 0 and -2
    m = poissonize(flip_kernel(1.0), DiscreteDistribution([1.0, 0.0]), 1.0)
    e = math.exp(-2.0)
    np.testing.assert_allclose(m.flatten(), [(1 + e) / 2, (1 - e) / 2], atol=1e-12)


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
def test_semigroup_equivalence(rng, t):
    for _ in range(10):
        n = int(rng.integers(2, 8))
        P = random_kernel(n, rng)
        p0 = rng.dirichlet(np.ones(n))
        m = poissonize(P, DiscreteDistribution(p0), t)
        exact = p0 @ expm(t * (P.matrix - np.eye(n)))
        assert np.abs(m.flatten() - exact).sum() <= m.weights.tail_mass + 1e-10


def test_chapman_kolmogorov(rng):
    P = random_kernel(5, rng)
    p0 = rng.dirichlet(np.ones(5))
    mid, _ = poissonized_vector(P, p0, 0.7)
    two, _ = poissonized_vector(P, mid, 1.3)
    one, _ = poissonized_vector(P, p0, 2.0)
    np.testing.assert_allclose(two, one, atol=1e-11)


def test_gaussian_mixture_moments():
    K, pi = ou_prior(0.5, 1.0)
    m = poissonize(K, GaussianDistribution([2.0], [[1.0]]), 1.5)
    # E[X_N] = 2 E[(1/2)^N] = 2 e^{-t/2}
    assert m.mean()[0] == pytest.approx(2 * math.exp(-0.75), abs=1e-10)
    # second moment of X_k: var_k + mean_k^2, var_k = 4/3 + (1 - 4/3) (1/4)^k, mean_k = 2 (1/2)^k
    ks = np.arange(m.weights.k_max + 1)
    second = (4 / 3 - (1 / 3) * 0.25**ks + 4 * 0.25**ks) @ m.weights.weights
    assert m.second_moment()[0, 0] == pytest.approx(second / m.weights.weights.sum(), abs=1e-10)


def test_sample_poissonized_trivial(rng):
    draw = sample_poissonized(flip_kernel(1.0), lambda r: 1, 0.0, rng)
    assert draw == 1
    states = sample_poissonized_finite(FiniteKernel.identity(3), [0.2, 0.3, 0.5], 4.0, 200_000, rng)
    freq = np.bincount(states, minlength=3) / states.size
    np.testing.assert_allclose(freq, [0.2, 0.3, 0.5], atol=5e-3)


def test_sample_matches_mixture_flip():
    rng = np.random.default_rng(7)
    N = 1_000_000
    states = sample_poissonized_finite(flip_kernel(0.3), [1.0, 0.0], 1.0, N, rng)
    exact = poissonize(flip_kernel(0.3), DiscreteDistribution([1.0, 0.0]), 1.0).flatten()
    p_hat = np.mean(states == 1)
    se = math.sqrt(exact[1] * (1 - exact[1]) / N)
    assert abs(p_hat - exact[1]) <= 3 * se


def test_boltzmann_residual_cases(rng):
    p0 = np.array([0.1, 0.2, 0.7])
    # identity kernel: the truncated series leaves w_{k_max} * max(p0)
    w = poisson_weights(2.0)
    assert boltzmann_residual(FiniteKernel.identity(3), p0, 2.0) == pytest.approx(
        w.weights[-1] * 0.7, rel=1e-12)
    P = random_kernel(4, rng)
    pi = invariant_measure(P).probs
    assert boltzmann_residual(P, pi, 3.0) <= 1e-12
    assert boltzmann_residual(P, rng.dirichlet(np.ones(4)), 2.0) <= 10 * 1e-12
