"""Poissonized laws rho_t = Law(X_{N_t}) for a unit-rate Poisson clock N_t.

The law at time t is the Poisson-weighted mixture
``rho_t = sum_k e^{-t} t^k / k! * mu_k`` of the discrete-time marginals,
truncated once the remaining Poisson tail is below ``tail_tol``.

The clock intensity is fixed at 1. A rate-r clock is the same process
run at time r t; pass ``rate`` to `poisson_weights` to get that rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import DimensionMismatch, NumericFailure, ParameterOutOfRange, UnsupportedKernel
from .markov import (
    DiscreteDistribution,
    FiniteKernel,
    Kernel,
    SampledKernel,
    adjoint_density,
    iterate_marginals,
    kernel_step,
)

DEFAULT_TAIL_TOL = 1e-12
K_MAX_CAP = 1_000_000


@dataclass(frozen=True)
class PoissonWeights:
    t: float
    k_max: int
    weights: np.ndarray
    tail_mass: float
    log_weights: np.ndarray

    def derivative(self) -> np.ndarray:
        """d/dt of each weight: w_{k-1} - w_k (with w_{-1} = 0)."""
        w = self.weights
        return np.concatenate([[0.0], w[:-1]]) - w


def poisson_k_max(t: float, tail_tol: float) -> int:
    """Smallest k with P(N_t > k) <= tail_tol."""
    if t == 0:
        return 0
    k = int(stats.poisson.isf(tail_tol, t))
    while stats.poisson.sf(k, t) > tail_tol:
        k += 1
    while k > 0 and stats.poisson.sf(k - 1, t) <= tail_tol:
        k -= 1
    return k


def poisson_weights(t: float, tail_tol: float = DEFAULT_TAIL_TOL, rate: float = 1.0) -> PoissonWeights:
    """P(N_t = k) for k = 0..k_max, computed in log space."""
    if t < 0:
        raise ParameterOutOfRange(f"t must be nonnegative, got {t}")
    if not 0.0 < tail_tol < 1.0:
        raise ParameterOutOfRange(f"tail_tol must lie in (0, 1), got {tail_tol}")
    t = float(t) * rate
    if t == 0.0:
        return PoissonWeights(0.0, 0, np.ones(1), 0.0, np.zeros(1))
    k_max = poisson_k_max(t, tail_tol)
    if k_max > K_MAX_CAP:
        raise NumericFailure(f"Poisson truncation needs k_max={k_max} > {K_MAX_CAP} terms at t={t}")
    # Shape relative to the mode from sums of log(t / j), which are small near
    # the mode and so avoid the cancellation in k log t - t - log k!; the
    # level is then fixed by sum(weights) = 1 - tail.
    mode = min(int(t), k_max)
    steps = math.log(t) - np.log(np.arange(1, k_max + 1))
    rel = np.empty(k_max + 1)
    rel[mode] = 0.0
    rel[mode + 1:] = np.cumsum(steps[mode:])
    rel[:mode] = -np.cumsum(steps[:mode][::-1])[::-1]
    tail = float(stats.poisson.sf(k_max, t))
    logw = rel + (math.log1p(-tail) - logsumexp(rel))
    w = np.exp(logw)
    return PoissonWeights(t, k_max, w, tail, logw)


@dataclass(frozen=True)
class PoissonMixture:
    """Truncated Poisson mixture of the marginals mu_0..mu_{k_max}."""

    weights: PoissonWeights
    components: tuple

    def __post_init__(self):
        if len(self.components) != self.weights.k_max + 1:
            raise DimensionMismatch("need exactly k_max + 1 components")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.components[0], DiscreteDistribution)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def flatten(self) -> np.ndarray:
        """Mixture probability vector (mass 1 - tail_mass) on a finite space."""
        if not self.is_discrete:
            raise UnsupportedKernel("flatten() is only defined for finite state spaces")
        probs = np.stack([c.probs for c in self.components])
        return self.weights.weights @ probs

    # -- Gaussian-mixture views ------------------------------------------

    def _gauss_arrays(self):
        means = np.stack([c.mean for c in self.components])
        covs = np.stack([c.cov for c in self.components])
        return means, covs

    def normalized_log_weights(self) -> np.ndarray:
        lw = self.weights.log_weights
        return lw - logsumexp(lw)

    def logpdf(self, x) -> np.ndarray:
        """Log-density of the renormalized Gaussian mixture at points x (..., d)."""
        lw = self.normalized_log_weights()
        comps = np.stack([c.logpdf(x) for c in self.components], axis=-1)
        return logsumexp(comps + lw, axis=-1)

    def mean(self) -> np.ndarray:
        w = np.exp(self.normalized_log_weights())
        means, _ = self._gauss_arrays()
        return w @ means

    def second_moment(self) -> np.ndarray:
        """E[x x^T] under the renormalized mixture."""
        w = np.exp(self.normalized_log_weights())
        means, covs = self._gauss_arrays()
        return np.einsum("k,kij->ij", w, covs + means[:, :, None] * means[:, None, :])

    def cov(self) -> np.ndarray:
        m = self.mean()
        return self.second_moment() - np.outer(m, m)

    def score_and_hessian(self, x):
        """Gradient and Hessian of log density at points x of shape (N, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lw = self.normalized_log_weights()
        means, covs = self._gauss_arrays()
        precs = np.linalg.inv(covs)
        logc = np.stack([c.logpdf(x) for c in self.components], axis=-1) + lw  # (N, K)
        r = np.exp(logc - logsumexp(logc, axis=-1, keepdims=True))  # responsibilities
        g_k = -np.einsum("kij,nkj->nki", precs, x[:, None, :] - means[None])  # (N, K, d)
        grad = np.einsum("nk,nki->ni", r, g_k)
        outer = np.einsum("nki,nkj->nkij", g_k, g_k)
        second = np.einsum("nk,nkij->nij", r, outer - precs[None])
        hess = second - np.einsum("ni,nj->nij", grad, grad)
        return grad, hess

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w = np.exp(self.normalized_log_weights())
        idx = rng.choice(len(self.components), size=size, p=w / w.sum())
        means, covs = self._gauss_arrays()
        chols = np.linalg.cholesky(covs + 1e-300 * np.eye(self.dim))
        z = rng.standard_normal((size, self.dim))
        return means[idx] + np.einsum("nij,nj->ni", chols[idx], z)

    def to_dict(self) -> dict:
        out = {
            "t": self.weights.t,
            "k_max": self.weights.k_max,
            "tail_mass": self.weights.tail_mass,
            "weights": self.weights.weights.tolist(),
        }
        if self.is_discrete:
            out["components"] = [c.probs.tolist() for c in self.components]
        else:
            out["components"] = [{"mean": c.mean.tolist(), "cov": c.cov.tolist()} for c in self.components]
        return out


def poissonize(kernel: Kernel, p0, t: float, tail_tol: float = DEFAULT_TAIL_TOL) -> PoissonMixture:
    """Law of Y_t = X_{N_t} as an explicit Poisson mixture."""
    if isinstance(kernel, SampledKernel):
        raise UnsupportedKernel("poissonize needs exact marginals; sample with sample_poissonized instead")
    w = poisson_weights(t, tail_tol)
    comps = iterate_marginals(kernel, p0, w.k_max)
    return PoissonMixture(w, comps)


def poissonized_vector(kernel: FiniteKernel, p0, t: float, tail_tol: float = DEFAULT_TAIL_TOL):
    """Flattened law and its time derivative on a finite space.

    Accepts an unnormalized nonnegative start vector, which lets callers
    chain Poissonizations without renormalizing.
    """
    p0 = np.asarray(p0.probs if isinstance(p0, DiscreteDistribution) else p0, dtype=float)
    w = poisson_weights(t, tail_tol)
    P = kernel.matrix
    comps = np.empty((w.k_max + 1, p0.size))
    comps[0] = p0
    for k in range(w.k_max):
        comps[k + 1] = comps[k] @ P
    return w.weights @ comps, w.derivative() @ comps


def sample_poissonized(kernel: Kernel, p0_sampler: Callable, t: float, rng: np.random.Generator):
    """One draw of Y_t: K ~ Poisson(t), then K kernel steps from p0."""
    if t < 0:
        raise ParameterOutOfRange("t must be nonnegative")
    k = rng.poisson(t)
    x = p0_sampler(rng)
    for _ in range(k):
        x = kernel_step(kernel, x, rng)
    return x


def sample_poissonized_finite(kernel: FiniteKernel, p0, t: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws of Y_t on a finite chain (state indices)."""
    p0 = np.asarray(p0.probs if isinstance(p0, DiscreteDistribution) else p0, dtype=float)
    states = rng.choice(p0.size, size=size, p=p0)
    steps = rng.poisson(t, size=size)
    cum = np.cumsum(kernel.matrix, axis=1)
    cum[:, -1] = 1.0
    for k in range(int(steps.max(initial=0))):
        active = steps > k
        u = rng.random(active.sum())
        rows = cum[states[active]]
        states[active] = (rows < u[:, None]).sum(axis=1)
    return states


def boltzmann_residual(kernel: FiniteKernel, p0, t: float, tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """sup-norm of d/dt u_t - (P* - I) u_t for the truncated series.

    The time derivative differentiates each Poisson weight exactly, so the
    residual isolates the truncation error.
    """
    u, du = poissonized_vector(kernel, p0, t, tail_tol)
    return float(np.max(np.abs(du - (adjoint_density(kernel, u) - u))))
