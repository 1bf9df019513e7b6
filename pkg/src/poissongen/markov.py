"""Markov kernels and their marginal laws.

Three kernel representations are supported:

* `FiniteKernel`: a row-stochastic matrix on n states, with a coordinate
  embedding used wherever a metric is needed (Wasserstein, Lipschitz).
* `AffineGaussianKernel`: x -> Normal(A x + b, Sigma). Gaussian laws stay
  Gaussian under it, so marginals are exact.
* `SampledKernel`: an opaque deterministic sampler (state, rng) -> state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DimensionMismatch,
    NoConvergence,
    ParameterOutOfRange,
    PeriodicChain,
    ReducibleChain,
    UnsupportedKernel,
)

ROW_SUM_TOL = 1e-12
PSD_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1:
            raise DimensionMismatch("probs must be a 1-d vector")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > ROW_SUM_TOL * max(1, p.size):
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.size

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, i: int) -> "DiscreteDistribution":
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)


@dataclass(frozen=True)
class GaussianDistribution:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = _frozen(np.atleast_1d(self.mean))
        c = _frozen(np.atleast_2d(self.cov))
        if m.ndim != 1 or c.shape != (m.size, m.size):
            raise DimensionMismatch(f"mean shape {m.shape} incompatible with cov shape {c.shape}")
        _check_psd(c, "cov")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        """Log-density at points `x` of shape (..., d) (or (...,) when d == 1)."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        diff = x - self.mean
        chol = np.linalg.cholesky(self.cov)
        z = np.linalg.solve(chol, diff.reshape(-1, self.dim).T).T.reshape(diff.shape)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (np.sum(z * z, axis=-1) + logdet + self.dim * math.log(2 * math.pi))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=size, method="cholesky")


Distribution = Union[DiscreteDistribution, GaussianDistribution]


def _check_psd(mat: np.ndarray, name: str):
    if not np.allclose(mat, mat.T, atol=PSD_TOL, rtol=0):
        raise ValueError(f"{name} is not symmetric")
    if mat.size and np.linalg.eigvalsh((mat + mat.T) / 2).min() < -PSD_TOL:
        raise ValueError(f"{name} is not positive semi-definite")


@dataclass(frozen=True)
class FiniteKernel:
    """Row-stochastic transition matrix on n states.

    ``coords`` embeds the states in R^m; when omitted the states sit at the
    1-d index positions 0, 1, ..., n-1.
    """

    matrix: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"transition matrix must be square, got {m.shape}")
        if np.any(m < 0):
            raise ValueError("transition matrix has negative entries")
        rows = m.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            raise ValueError(f"rows do not sum to 1 (max deviation {np.abs(rows - 1).max():.3g})")
        coords = self.coords
        if coords is None:
            coords = np.arange(m.shape[0], dtype=float)[:, None]
        coords = np.array(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[0] != m.shape[0]:
            raise DimensionMismatch("coords length must equal the number of states")
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "coords", _frozen(coords))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def compose(self, other: "FiniteKernel") -> "FiniteKernel":
        """Kernel of one step of `self` followed by one step of `other`."""
        if other.n != self.n:
            raise DimensionMismatch("kernels act on different state spaces")
        prod = self.matrix @ other.matrix
        prod /= prod.sum(axis=1, keepdims=True)
        return FiniteKernel(prod, self.coords)

    @classmethod
    def identity(cls, n: int, coords=None) -> "FiniteKernel":
        return cls(np.eye(n), coords)


@dataclass(frozen=True)
class AffineGaussianKernel:
    """x -> Normal(A x + b, Sigma)."""

    A: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        A = _frozen(np.atleast_2d(self.A))
        b = _frozen(np.atleast_1d(self.b))
        S = _frozen(np.atleast_2d(self.Sigma))
        d = A.shape[0]
        if A.shape != (d, d) or b.shape != (d,) or S.shape != (d, d):
            raise DimensionMismatch(f"inconsistent shapes A{A.shape} b{b.shape} Sigma{S.shape}")
        _check_psd(S, "Sigma")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Sigma", S)

    @property
    def dim(self) -> int:
        return self.b.size

    def at(self, x) -> GaussianDistribution:
        """The law delta_x P."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return GaussianDistribution(self.A @ x + self.b, self.Sigma)


@dataclass(frozen=True)
class SampledKernel:
    """Kernel known only through a deterministic sampler.

    ``sampler(state, rng)`` must return the same next state for the same
    state and the same generator state.
    """

    sampler: Callable[[Any, np.random.Generator], Any]
    descriptor: str = ""
    extra: dict = field(default_factory=dict, compare=False)


Kernel = Union[FiniteKernel, AffineGaussianKernel, SampledKernel]


def _vec(x, n: int, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise DimensionMismatch(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def apply_distribution(kernel: Kernel, dist: Distribution) -> Distribution:
    """Push a law forward by one step of `kernel`."""
    if isinstance(kernel, FiniteKernel):
        if not isinstance(dist, DiscreteDistribution):
            raise UnsupportedKernel("finite kernels act on DiscreteDistribution")
        p = _vec(dist.probs, kernel.n, "distribution") @ kernel.matrix
        return DiscreteDistribution(p / p.sum())
    if isinstance(kernel, AffineGaussianKernel):
        if not isinstance(dist, GaussianDistribution):
            raise UnsupportedKernel("affine-Gaussian kernels act on GaussianDistribution")
        if dist.dim != kernel.dim:
            raise DimensionMismatch(f"distribution dim {dist.dim} != kernel dim {kernel.dim}")
        A = kernel.A
        cov = A @ dist.cov @ A.T + kernel.Sigma
        return GaussianDistribution(A @ dist.mean + kernel.b, (cov + cov.T) / 2)
    raise UnsupportedKernel(f"{type(kernel).__name__} has no exact action on distributions")


def apply_function(kernel: FiniteKernel, f) -> np.ndarray:
    """(P f)(x) = E_{y ~ P(x, .)} f(y)."""
    return kernel.matrix @ _vec(f, kernel.n, "f")


def adjoint_density(kernel: FiniteKernel, u) -> np.ndarray:
    """Action on densities with respect to counting measure: P* u = P^T u."""
    return kernel.matrix.T @ _vec(u, kernel.n, "u")


def check_ergodic(kernel: FiniteKernel) -> None:
    """Raise unless the support graph is strongly connected and aperiodic."""
    adj = kernel.matrix > 0
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    if ncomp > 1:
        raise ReducibleChain(f"support graph has {ncomp} strongly connected components")
    if chain_period(kernel) != 1:
        raise PeriodicChain(f"chain has period {chain_period(kernel)}")


def chain_period(kernel: FiniteKernel) -> int:
    """gcd of cycle lengths, from BFS levels on an irreducible support graph."""
    adj = kernel.matrix > 0
    n = kernel.n
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    us, vs = np.nonzero(adj)
    diffs = level[us] + 1 - level[vs]
    return int(reduce(math.gcd, np.abs(diffs).tolist(), 0)) or 1


def invariant_measure(kernel: FiniteKernel, tol: float = 1e-12, max_iter: int = 20000) -> DiscreteDistribution:
    """Unique invariant law of an ergodic finite chain.

    Power iteration first; if it stalls, a dense left-eigenvector solve
    (n <= 200). The result satisfies ||pi P - pi||_inf <= tol.
    """
    check_ergodic(kernel)
    P = kernel.matrix
    n = kernel.n
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ P
        if np.max(np.abs(nxt - pi)) <= tol / 4:
            pi = nxt
            break
        pi = nxt
    else:
        if n > 200:
            raise NoConvergence(tol, max_iter)
        vals, vecs = np.linalg.eig(P.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
        pi = v / v.sum()
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    res = np.max(np.abs(pi @ P - pi))
    if res > tol:
        raise NoConvergence(tol, max_iter, f"invariant residual {res:.3g} exceeds tol={tol:g}")
    return DiscreteDistribution(pi)


def ou_prior(gamma: float, sigma: float, d: int = 1):
    """Gaussian AR(1) prior X' = (1 - gamma) X + sigma N(0, I_d) and its invariant law.

    The stationary variance solves s^2 = (1 - gamma)^2 s^2 + sigma^2.
    """
    if not 0.0 < gamma < 1.0:
        raise ParameterOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    if not sigma > 0.0:
        raise ParameterOutOfRange(f"sigma must be positive, got {sigma}")
    eye = np.eye(d)
    kernel = AffineGaussianKernel((1.0 - gamma) * eye, np.zeros(d), sigma**2 * eye)
    var = sigma**2 / (1.0 - (1.0 - gamma) ** 2)
    return kernel, GaussianDistribution(np.zeros(d), var * eye)


def iterate_marginals(kernel: Kernel, p0: Distribution, k_max: int) -> list:
    """[mu_0, ..., mu_{k_max}] with mu_{k+1} = mu_k P."""
    if isinstance(kernel, SampledKernel):
        raise UnsupportedKernel(
            "sampled kernels have no exact marginals; use poissongen.learn.run_ensemble for Monte Carlo"
        )
    if isinstance(kernel, FiniteKernel):
        if not isinstance(p0, DiscreteDistribution):
            raise UnsupportedKernel("finite kernels need a DiscreteDistribution start")
        _vec(p0.probs, kernel.n, "p0")
        # batch the matrix products; re-wrapping each row keeps the invariants checked
        out = [p0]
        p = p0.probs
        for _ in range(k_max):
            p = p @ kernel.matrix
            p = p / p.sum()
            out.append(DiscreteDistribution(p))
        return out
    out = [p0]
    for _ in range(k_max):
        out.append(apply_distribution(kernel, out[-1]))
    return out


def kernel_step(kernel: Kernel, state, rng: np.random.Generator):
    """Draw one transition from `state`."""
    if isinstance(kernel, FiniteKernel):
        return int(rng.choice(kernel.n, p=kernel.matrix[state]))
    if isinstance(kernel, AffineGaussianKernel):
        x = np.atleast_1d(np.asarray(state, dtype=float))
        noise = rng.multivariate_normal(np.zeros(kernel.dim), kernel.Sigma, method="cholesky")
        return kernel.A @ x + kernel.b + noise
    return kernel.sampler(state, rng)


# --- constructors for small test chains -------------------------------------


def flip_kernel(p: float = 1.0) -> FiniteKernel:
    """Two states; switch with probability p."""
    return FiniteKernel([[1 - p, p], [p, 1 - p]])


def jump_kernel(pi, theta: float = 1.0, coords=None) -> FiniteKernel:
    """Stay put with probability 1 - theta, otherwise resample from pi."""
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    return FiniteKernel((1 - theta) * np.eye(n) + theta * np.tile(pi, (n, 1)), coords)


def random_kernel(n: int, rng: np.random.Generator, concentration: float = 1.0, coords=None) -> FiniteKernel:
    """Rows drawn from a symmetric Dirichlet; strictly positive almost surely."""
    m = rng.dirichlet(np.full(n, concentration), size=n)
    m = np.maximum(m, 1e-300)
    return FiniteKernel(m / m.sum(axis=1, keepdims=True), coords)


def random_reversible_kernel(n: int, rng: np.random.Generator, coords=None):
    """Metropolis-type reversible kernel built from symmetric conductances.

    Returns (kernel, pi) with pi the reversing measure.
    """
    w = rng.random((n, n)) + 0.05
    w = (w + w.T) / 2
    pi = w.sum(axis=1) / w.sum()
    P = w / w.sum(axis=1, keepdims=True)
    return FiniteKernel(P, coords), DiscreteDistribution(pi)


def random_positive_distribution(n: int, rng: np.random.Generator, floor: float = 1e-3) -> DiscreteDistribution:
    p = rng.dirichlet(np.ones(n)) + floor
    return DiscreteDistribution(p / p.sum())
