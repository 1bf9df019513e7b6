"""Modified log-Sobolev constants.

Closed forms for priors that are time-t0 transition kernels of a Langevin
diffusion, the Gaussian AR(1) special case, the constants of the SGLD decay
estimate, and a numeric estimator for finite chains.

Only closed-form certificates may feed a generalization bound. A numeric
estimate is an infimum found by search, so it can only overshoot the
true constant; it is useful for exploration, not for soundness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .entropy import check_invariant, dirichlet_form, entropy_functional, kl_with_error
from .errors import ConstantFunction, ParameterOutOfRange
from .markov import FiniteKernel, GaussianDistribution
from .poissonize import DEFAULT_TAIL_TOL, poissonize, poissonized_vector

CLOSED_FORM = ("closed-form-general", "closed-form-strongly-convex", "closed-form-jump")


@dataclass(frozen=True)
class DiffusivePriorSpec:
    K: float
    t0: float
    strongly_convex: bool = False

    def __post_init__(self):
        if not (self.K > 0 and self.t0 > 0):
            raise ParameterOutOfRange("K and t0 must be positive")


@dataclass(frozen=True)
class LsiCertificate:
    gamma: float
    provenance: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in CLOSED_FORM + ("numeric-estimate",):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance in CLOSED_FORM and not 0 < self.gamma <= 1:
            raise ValueError("closed-form constants lie in (0, 1]")

    @property
    def is_closed_form(self) -> bool:
        return self.provenance in CLOSED_FORM

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "provenance": self.provenance, "details": self.details}


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ParameterOutOfRange(f"{k} must be positive, got {v}")


def clsi_general(K: float, t0: float) -> float:
    _positive(K=K, t0=t0)
    return K * t0 / (1 + K * t0)


def clsi_strongly_convex(K: float, t0: float) -> float:
    _positive(K=K, t0=t0)
    return -math.expm1(-K * t0)


def certificate_for(spec: DiffusivePriorSpec) -> LsiCertificate:
    if spec.strongly_convex:
        return LsiCertificate(clsi_strongly_convex(spec.K, spec.t0), "closed-form-strongly-convex",
                              {"K": spec.K, "t0": spec.t0})
    return LsiCertificate(clsi_general(spec.K, spec.t0), "closed-form-general", {"K": spec.K, "t0": spec.t0})


def ou_representation(gamma: float, sigma: float):
    """(c, t0) such that the AR(1) kernel equals the time-t0 Ornstein-Uhlenbeck
    transition dZ = -c Z dt + sqrt(2) dB.

    c is the stationary precision (1 - (1 - gamma)^2) / sigma^2, and
    c t0 = -log(1 - gamma).
    """
    if not 0 < gamma < 1:
        raise ParameterOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    _positive(sigma=sigma)
    c = (1 - (1 - gamma) ** 2) / sigma**2
    return c, -math.log1p(-gamma) / c


def ou_certificate(gamma: float, sigma: float) -> LsiCertificate:
    c, t0 = ou_representation(gamma, sigma)
    return LsiCertificate(clsi_strongly_convex(c, t0), "closed-form-strongly-convex",
                          {"gamma": gamma, "sigma": sigma, "K": c, "t0": t0})


def jump_certificate(theta: float) -> LsiCertificate:
    """Lazy jump-to-pi kernel (1 - theta) I + theta 1 pi^T.

    Its Dirichlet form is theta (E[f log f] - E f E log f), which dominates
    theta Ent[f] by Jensen (log E f >= E log f).
    """
    if not 0 < theta <= 1:
        raise ParameterOutOfRange("theta must lie in (0, 1]")
    return LsiCertificate(theta, "closed-form-jump", {"theta": theta})


def sgld_decay_constants(K: float, t0: float):
    """(q, tau0) with q = (1 - e^{-K t0}) / (1 - e^{-2 K t0}) and 1 / tau0 = 1 - e^{-K t0}."""
    _positive(K=K, t0=t0)
    e = math.exp(-K * t0)
    q = -math.expm1(-K * t0) / -math.expm1(-2 * K * t0)
    return q, 1.0 / (1.0 - e)


def mlsi_ratio(P: FiniteKernel, pi, f) -> float:
    """E_pi(log f, f) / Ent_pi[f]."""
    pi = check_invariant(P, pi)
    f = np.asarray(f, dtype=float)
    ent = entropy_functional(pi, f)
    if ent <= 1e-15 * max(1.0, float(pi @ f)):
        raise ConstantFunction("Ent_pi[f] vanishes; the ratio is undefined for constant f")
    return dirichlet_form(P, pi, np.log(f), f) / ent


def _ratio_of_log(P, pi, g):
    f = np.exp(g - g.max())
    ent = float(pi @ (f * np.log(f)) - (pi @ f) * math.log(pi @ f))
    if ent <= 1e-13 * (pi @ f):
        return math.inf
    num = float(pi @ (f * (np.log(f) - P.matrix @ np.log(f))))
    return num / ent


def _grid_oracle(P: FiniteKernel, pi, lo=-6.0, hi=6.0, step=0.01) -> float:
    """Exhaustive search over f = exp(g), g_0 = 0 (the ratio is scale-free)."""
    pi = np.asarray(pi)
    axis = np.round(np.arange(lo, hi + step / 2, step), 12)
    n = P.n
    if n == 1:
        return math.inf
    grids = np.meshgrid(*([axis] * (n - 1)), indexing="ij")
    G = np.stack([np.zeros(grids[0].size)] + [g.ravel() for g in grids], axis=1)
    best = math.inf
    logP = P.matrix
    for chunk in np.array_split(G, max(1, G.shape[0] // 200_000)):
        f = np.exp(chunk - chunk.max(axis=1, keepdims=True))
        g = np.log(f)
        mean = f @ pi
        ent = (f * g) @ pi - mean * np.log(mean)
        num = (f * (g - g @ logP.T)) @ pi
        ok = ent > 1e-13 * mean
        if ok.any():
            best = min(best, float(np.min(num[ok] / ent[ok])))
    return best


def mlsi_estimate(P: FiniteKernel, pi, restarts: int = 32, seed: int = 0, grid: bool = True) -> LsiCertificate:
    """Search for the optimal modified-LSI constant of a finite chain.

    Multi-start quasi-Newton descent over f = exp(g) with E_pi[g] = 0; for
    n <= 3 an exhaustive log-grid oracle is also run. The smaller value is
    returned. Any value found this way is an UPPER bound on the infimum.
    """
    pi = check_invariant(P, pi)
    if np.allclose(P.matrix, np.eye(P.n)):
        return LsiCertificate(0.0, "numeric-estimate", {"reason": "identity kernel", "upper_bound": True})
    rng = np.random.default_rng(seed)
    n = P.n

    def objective(h):
        g = np.concatenate([[0.0], h])
        g = g - pi @ g
        return _ratio_of_log(P, pi, g)

    descent = math.inf
    with np.errstate(invalid="ignore", over="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for scale in np.geomspace(0.05, 4.0, restarts):
            h0 = rng.normal(scale=scale, size=n - 1)
            res = minimize(objective, h0, method="L-BFGS-B", options={"maxiter": 500})
            if np.isfinite(res.fun):
                descent = min(descent, float(res.fun))
    details = {"descent": descent, "restarts": restarts, "upper_bound": True}
    gamma = descent
    if grid and n <= 3:
        oracle = _grid_oracle(P, pi)
        details["grid"] = oracle
        gamma = min(gamma, oracle)
    details["spectral_gap"] = spectral_gap(P, pi)
    return LsiCertificate(gamma, "numeric-estimate", details)


def spectral_gap(P: FiniteKernel, pi) -> float:
    """Gap of the additive reversibilization (P + P^dag) / 2 in L^2(pi)."""
    pi = np.asarray(pi, dtype=float)
    s = np.sqrt(pi)
    M = P.matrix
    Pdag = (pi[:, None] * M).T / pi[:, None]
    R = (M + Pdag) / 2
    S = s[:, None] * R / s[None, :]
    vals = np.sort(np.linalg.eigvalsh((S + S.T) / 2))
    return float(1.0 - vals[-2]) if vals.size > 1 else 1.0


def lsi_decay_check(P, pi, p0, gamma, t_grid, tail_tol: float = DEFAULT_TAIL_TOL, quad_tol: float = 1e-9):
    """Margins e^{-gamma t} KL(p0 || pi) - KL(rho_t || pi) for the prior chain started at p0.

    Returns (margins, tolerance). Margins are meaningful down to -tolerance.
    """
    if isinstance(P, FiniteKernel):
        pi_v = check_invariant(P, pi)
        p0_v = p0.probs if hasattr(p0, "probs") else np.asarray(p0, dtype=float)
        k0, _ = kl_with_error(p0_v, pi_v)
        margins = []
        for t in t_grid:
            rho, _ = poissonized_vector(P, p0_v, t, tail_tol)
            kt, _ = kl_with_error(rho / rho.sum(), pi_v)
            margins.append(math.exp(-gamma * t) * k0 - kt)
        return np.array(margins), 1e-10
    if not isinstance(pi, GaussianDistribution):
        raise TypeError("continuous decay check needs a Gaussian invariant law")
    k0, e0 = kl_with_error(p0, pi)
    margins, errs = [], [e0]
    for t in t_grid:
        kt, et = kl_with_error(poissonize(P, p0, t, tail_tol), pi, tol=quad_tol)
        errs.append(et)
        margins.append(math.exp(-gamma * t) * k0 - kt)
    return np.array(margins), 10 * max(quad_tol, max(errs))
