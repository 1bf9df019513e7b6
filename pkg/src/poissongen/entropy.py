"""Entropy functionals, Bregman divergences, Dirichlet forms and the entropy flow.

Conventions: 0 log 0 = 0, Phi(x) = x log x. A KL divergence against a law
that misses part of the posterior's support is +inf; it is returned as such,
never clamped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .errors import (
    DimensionMismatch,
    NonInvariantPrior,
    NumericFailure,
    SupportViolation,
    UnsupportedDimension,
    UnsupportedKernel,
)
from .markov import (
    AffineGaussianKernel,
    DiscreteDistribution,
    FiniteKernel,
    GaussianDistribution,
    apply_distribution,
    apply_function,
)
from .poissonize import DEFAULT_TAIL_TOL, PoissonMixture, poissonized_vector
from .quadrature import adaptive_simpson, gauss_legendre_2d

V_FLOOR = 1e-300
QUAD_TOL = 1e-9
INVARIANCE_TOL = 1e-10


def phi(x):
    return xlogy(x, x)


def phi_bregman(a, b):
    """D_Phi(a, b) = a log(a / b) - (a - b) for Phi(x) = x log x."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("second argument of the Bregman divergence must be positive")
    if np.any(a < 0):
        raise ValueError("first argument of the Bregman divergence must be nonnegative")
    out = xlogy(a, a) - xlogy(a, b) - (a - b)
    return out if out.ndim else float(out)


# --- density ratio -----------------------------------------------------------


class DensityRatioField:
    """v = d rho / d pi, evaluable pointwise.

    Finite mode wraps a vector. Gaussian-analytic mode holds a numerator
    and a denominator law (Gaussian or Gaussian Poisson mixture) and
    evaluates log v = log p - log q.
    """

    def __init__(self, values=None, numerator=None, denominator=None, floor: float = V_FLOOR):
        self.floor = floor
        if values is not None:
            v = np.asarray(values, dtype=float)
            if np.any(~np.isfinite(v)):
                raise SupportViolation("density ratio is not finite (zero prior mass under positive posterior)")
            if np.any(v < floor):
                raise SupportViolation(f"density ratio falls below the positivity floor {floor:g}")
            self.mode = "finite"
            self.values = v
        else:
            if numerator is None or denominator is None:
                raise ValueError("give either values or numerator and denominator")
            self.mode = "gaussian"
            self.numerator = numerator
            self.denominator = denominator

    @classmethod
    def from_vectors(cls, rho, pi, floor: float = V_FLOOR) -> "DensityRatioField":
        rho = np.asarray(rho, dtype=float)
        pi = np.asarray(pi, dtype=float)
        if rho.shape != pi.shape:
            raise DimensionMismatch("posterior and prior vectors differ in length")
        if np.any((pi <= 0) & (rho > 0)):
            raise SupportViolation("zero prior mass where the posterior is positive")
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(pi > 0, rho / np.where(pi > 0, pi, 1.0), 1.0)
        return cls(values=v, floor=floor)

    def log(self, x=None):
        if self.mode == "finite":
            return np.log(self.values)
        lv = _logpdf(self.numerator, x) - _logpdf(self.denominator, x)
        if np.any(lv < math.log(self.floor)):
            raise SupportViolation("density ratio falls below the positivity floor")
        return lv

    def __call__(self, x=None):
        if self.mode == "finite":
            return self.values
        return np.exp(self.log(x))


# --- KL divergences ----------------------------------------------------------


def _logpdf(dist, x):
    return dist.logpdf(x)


def _as_vector(d):
    if isinstance(d, DiscreteDistribution):
        return d.probs
    if isinstance(d, PoissonMixture) and d.is_discrete:
        v = d.flatten()
        return v / v.sum()
    return np.asarray(d, dtype=float)


def kl_vectors(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch("distributions live on different spaces")
    if np.any((q <= 0) & (p > 0)):
        return math.inf
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def kl_gaussian(p: GaussianDistribution, q: GaussianDistribution) -> float:
    d = p.dim
    if q.dim != d:
        raise DimensionMismatch("Gaussians of different dimension")
    q_inv = np.linalg.inv(q.cov)
    dm = q.mean - p.mean
    _, logdet_p = np.linalg.slogdet(p.cov)
    _, logdet_q = np.linalg.slogdet(q.cov)
    return float(0.5 * (np.trace(q_inv @ p.cov) + dm @ q_inv @ dm - d + logdet_q - logdet_p))


def _components(dist):
    """(weights, means, stds) of a Gaussian or Gaussian mixture, per axis."""
    if isinstance(dist, GaussianDistribution):
        return np.ones(1), dist.mean[None], np.sqrt(np.diag(dist.cov))[None]
    w = np.exp(dist.normalized_log_weights())
    means = np.stack([c.mean for c in dist.components])
    stds = np.stack([np.sqrt(np.diag(c.cov)) for c in dist.components])
    return w, means, stds


def quadrature_window(dist, width: float = 10.0, min_weight: float = 1e-16):
    """Breakpoints (1-d) or box (2-d) covering each relevant component to +-width std."""
    w, means, stds = _components(dist)
    keep = w >= min_weight * w.max()
    means, stds = means[keep], stds[keep]
    offsets = np.array([-1.0, -0.5, -0.2, -0.1, 0.0, 0.1, 0.2, 0.5, 1.0]) * width
    if means.shape[1] == 1:
        pts = (means[:, 0, None] + stds[:, 0, None] * offsets[None]).ravel()
        lo, hi = pts.min(), pts.max()
        return np.unique(np.concatenate([pts, np.linspace(lo, hi, 65)]))
    lo = (means - width * stds).min(axis=0)
    hi = (means + width * stds).max(axis=0)
    return tuple(zip(lo, hi))


def integrate_against(dist, fn, tol: float = QUAD_TOL, window=None):
    """(integral of dist_density * fn, abs error) for a 1-d or 2-d Gaussian (mixture)."""
    dim = dist.dim
    if dim == 1:
        bp = quadrature_window(dist) if window is None else window

        def integrand(x):
            pts = x[:, None]
            lp = _logpdf(dist, pts)
            return np.exp(lp) * fn(pts)

        return adaptive_simpson(integrand, bp, tol=tol)
    if dim == 2:
        box = quadrature_window(dist) if window is None else window

        def integrand(pts):
            return np.exp(_logpdf(dist, pts)) * fn(pts)

        return gauss_legendre_2d(integrand, box)
    raise UnsupportedDimension(f"quadrature is limited to dimensions 1 and 2, got {dim}")


def kl_with_error(posterior, prior, tol: float = QUAD_TOL):
    """KL(posterior || prior) with an absolute error estimate (0 when exact)."""
    discrete = (DiscreteDistribution, np.ndarray, list, tuple)
    if isinstance(posterior, discrete) or (isinstance(posterior, PoissonMixture) and posterior.is_discrete):
        return kl_vectors(_as_vector(posterior), _as_vector(prior)), 0.0
    if isinstance(posterior, GaussianDistribution) and isinstance(prior, GaussianDistribution):
        return kl_gaussian(posterior, prior), 0.0
    if posterior.dim > 2:
        raise UnsupportedDimension(f"quadrature KL is limited to dimensions 1 and 2, got {posterior.dim}")

    def log_ratio(x):
        return _logpdf(posterior, x) - _logpdf(prior, x)

    val, err = integrate_against(posterior, log_ratio, tol=tol)
    if posterior.dim == 2 and err > 1e3 * tol:
        raise NumericFailure(f"2-d KL quadrature error {err:.3g} too large")
    return val, err


def kl(posterior, prior, tol: float = QUAD_TOL) -> float:
    """KL divergence; finite sums, Gaussian closed form, or quadrature for mixtures."""
    return kl_with_error(posterior, prior, tol)[0]


def kl_strict(posterior, prior, tol: float = QUAD_TOL) -> float:
    val = kl(posterior, prior, tol)
    if math.isinf(val):
        raise SupportViolation("posterior is not absolutely continuous with respect to prior")
    return val


# --- functionals on finite spaces ------------------------------------------


def entropy_functional(nu, f) -> float:
    """Ent_nu[f] = E_nu[f log f] - E_nu[f] log E_nu[f]."""
    nu = _as_vector(nu)
    f = np.asarray(f, dtype=float)
    if f.shape != nu.shape:
        raise DimensionMismatch("f and nu differ in length")
    if np.any(f <= 0):
        raise ValueError("entropy functional needs a positive f")
    mean = float(nu @ f)
    return float(nu @ phi(f) - phi(mean))


def dirichlet_form(P: FiniteKernel, pi, f, g) -> float:
    """E_pi(f, g) = E_pi[g (I - P) f]."""
    pi = _as_vector(pi)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (pi.size == P.n == f.size == g.size):
        raise DimensionMismatch("dimension mismatch in Dirichlet form")
    return float(pi @ (g * (f - apply_function(P, f))))


def _ratio_values(v) -> np.ndarray:
    if isinstance(v, DensityRatioField):
        return v.values
    v = np.asarray(v, dtype=float)
    if np.any(v < V_FLOOR):
        raise SupportViolation("density ratio must be positive")
    return v


def expansion_term(P, P_S, rho, v, tol: float = QUAD_TOL, rng=None, n_mc: int = 100_000):
    """Delta_{P,P_S}(v) = E_rho[(P_S - P) log v].

    Finite kernels: exact sum. Affine-Gaussian kernels in 1-d/2-d: rho P_S and
    rho P are Gaussian mixtures, so Delta is a difference of two quadratures.
    Returns (value, abs_error).
    """
    if isinstance(P, FiniteKernel):
        rho = _as_vector(rho) if not isinstance(rho, PoissonMixture) else rho.flatten()
        logv = np.log(_ratio_values(v))
        diff = P_S.matrix - P.matrix
        return float(rho @ (diff @ logv)), 0.0
    if isinstance(P, AffineGaussianKernel) and isinstance(P_S, AffineGaussianKernel):
        if not isinstance(v, DensityRatioField):
            raise UnsupportedKernel("continuous expansion term needs a Gaussian-analytic DensityRatioField")
        pushed_S = push_mixture(P_S, rho)
        pushed = push_mixture(P, rho)
        if rho.dim <= 2:
            a, ea = integrate_against(pushed_S, v.log, tol=tol)
            b, eb = integrate_against(pushed, v.log, tol=tol)
            return a - b, ea + eb
        rng = np.random.default_rng(0) if rng is None else rng
        xs = pushed_S.sample(rng, n_mc)
        ys = pushed.sample(rng, n_mc)
        la, lb = v.log(xs), v.log(ys)
        return float(la.mean() - lb.mean()), float(3 * np.sqrt(la.var() / n_mc + lb.var() / n_mc))
    raise UnsupportedKernel("expansion term needs two finite or two affine-Gaussian kernels")


def push_mixture(kernel: AffineGaussianKernel, rho):
    """rho P for a Gaussian or Gaussian Poisson mixture rho."""
    if isinstance(rho, GaussianDistribution):
        return apply_distribution(kernel, rho)
    comps = [apply_distribution(kernel, c) for c in rho.components]
    return PoissonMixture(rho.weights, comps)


def bregman_term(P: FiniteKernel, pi_t, v) -> float:
    """E_{x ~ pi_t, y ~ P(x, .)} D_Phi(v(x), v(y))."""
    pi_t = pi_t.flatten() if isinstance(pi_t, PoissonMixture) else _as_vector(pi_t)
    vv = _ratio_values(v)
    D = phi_bregman(vv[:, None], vv[None, :])
    return float(pi_t @ np.sum(P.matrix * D, axis=1))


@dataclass
class FlowReport:
    t: float
    kl: float
    expansion: float
    bregman: float
    rhs: float
    lhs: float
    lhs_fd: float
    residual: float
    residual_fd: float

    def as_row(self) -> dict:
        return asdict(self)


def _flow_state(P, P_S, p0, prior0, t, tail_tol):
    uS, _ = poissonized_vector(P_S, p0, t, tail_tol)
    u, _ = poissonized_vector(P, prior0, t, tail_tol)
    return uS, u


def _kl_unnormalized(uS, u) -> float:
    if np.any((u <= 0) & (uS > 0)):
        raise SupportViolation("zero prior mass under positive posterior mass")
    return float(np.sum(xlogy(uS, uS) - xlogy(uS, u)))


def entropy_flow_check(P: FiniteKernel, P_S: FiniteKernel, p0, t_grid: Sequence[float],
                       tail_tol: float = DEFAULT_TAIL_TOL, prior0=None, h: Optional[float] = None):
    """Compare d/dt KL(rho_t^S || pi_t) against expansion - Bregman at each t.

    The left side is computed two ways: analytically from the Boltzmann
    equation, and by a Richardson-extrapolated central difference of the KL.
    """
    p0 = _as_vector(p0)
    prior0 = p0 if prior0 is None else _as_vector(prior0)
    if np.any(prior0 <= 0):
        raise SupportViolation("prior start must be strictly positive")
    reports = []
    for t in t_grid:
        t = float(t)
        uS, u = _flow_state(P, P_S, p0, prior0, t, tail_tol)
        if np.any(u <= 0):
            raise SupportViolation(f"prior has zero mass at t={t}")
        v = DensityRatioField.from_vectors(uS, u)
        logv = np.log(v.values)
        dS = P_S.matrix.T @ uS - uS
        d = P.matrix.T @ u - u
        lhs = float(np.sum(dS * (1.0 + logv) - v.values * d))
        expansion, _ = expansion_term(P, P_S, uS, v)
        bregman = bregman_term(P, u, v)
        rhs = expansion - bregman
        lhs_fd = _fd_derivative(lambda s: _kl_unnormalized(*_flow_state(P, P_S, p0, prior0, s, tail_tol)), t, h)
        reports.append(FlowReport(
            t=t, kl=_kl_unnormalized(uS, u), expansion=expansion, bregman=bregman, rhs=rhs,
            lhs=lhs, lhs_fd=lhs_fd, residual=abs(lhs - rhs), residual_fd=abs(lhs_fd - rhs),
        ))
    return reports


def _fd_derivative(fn, t: float, h: Optional[float] = None) -> float:
    h = max(1e-4, 1e-6 * t) if h is None else h
    if t - 2 * h < 0:
        # one-sided second-order stencil near t = 0
        return (-3 * fn(t) + 4 * fn(t + h) - fn(t + 2 * h)) / (2 * h)
    d1 = (fn(t + h) - fn(t - h)) / (2 * h)
    d2 = (fn(t + 2 * h) - fn(t - 2 * h)) / (4 * h)
    return (4 * d1 - d2) / 3


def check_invariant(P: FiniteKernel, pi, tol: float = INVARIANCE_TOL) -> np.ndarray:
    pi = _as_vector(pi)
    res = np.max(np.abs(pi @ P.matrix - pi))
    if res > tol:
        raise NonInvariantPrior(f"prior is not invariant for P (residual {res:.3g})")
    return pi


def dirichlet_bregman_identity(P: FiniteKernel, pi, v):
    """(Bregman term, E_pi(log v, v), |difference|) for an invariant pi."""
    pi = check_invariant(P, pi)
    vv = _ratio_values(v)
    lhs = bregman_term(P, pi, vv)
    rhs = dirichlet_form(P, pi, np.log(vv), vv)
    return lhs, rhs, abs(lhs - rhs)


def adjoint_kernel(P: FiniteKernel, pi) -> FiniteKernel:
    """Time reversal P^dag(y, x) = pi(x) P(x, y) / pi(y)."""
    pi = _as_vector(pi)
    if np.any(pi <= 0):
        raise SupportViolation("adjoint needs a strictly positive invariant law")
    M = (pi[:, None] * P.matrix).T / pi[:, None]
    return FiniteKernel(M / M.sum(axis=1, keepdims=True), P.coords)


def adjoint_bregman_term(P: FiniteKernel, pi, v, tol: float = 1e-10) -> float:
    """E_pi[D_Phi(v, P v)], cross-checked against KL(rho || rho P^dag) with rho = v pi."""
    pi = check_invariant(P, pi)
    vv = _ratio_values(v)
    Pv = apply_function(P, vv)
    direct = float(pi @ phi_bregman(vv, Pv))
    rho = vv * pi
    rho_adj = rho @ adjoint_kernel(P, pi).matrix
    via_adjoint = float(np.sum(xlogy(rho, rho) - xlogy(rho, rho_adj)) - rho.sum() + rho_adj.sum())
    if abs(direct - via_adjoint) > tol * max(1.0, abs(direct)):
        raise NumericFailure(f"adjoint Bregman routes disagree: {direct!r} vs {via_adjoint!r}")
    return direct
