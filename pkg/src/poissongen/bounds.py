"""Generalization and KL bounds, with the exact quantities they can be checked against.

Every evaluator that integrates a time trace uses the trapezoid rule on the
caller's grid and estimates the quadrature error by halving the grid.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from .entropy import (
    QUAD_TOL,
    _as_vector,
    integrate_against,
    kl_gaussian,
    kl_vectors,
    kl_with_error,
    phi_bregman,
)
from .errors import (
    GridTooCoarse,
    InconsistentMoments,
    MissingCertificate,
    ParameterOutOfRange,
    SupportViolation,
    UnsoundCertificate,
    UnsupportedKernel,
)
from .lsi import LsiCertificate, ou_representation, sgld_decay_constants
from .markov import (
    AffineGaussianKernel,
    FiniteKernel,
    GaussianDistribution,
    apply_distribution,
    check_ergodic,
)
from .poissonize import DEFAULT_TAIL_TOL, poissonize, poissonized_vector
from .transport import w1_1d, w2_gaussian, wp_lp

HYPOTHESIS_TOL = 1e-8
TV_FLOOR = 1e-12


def config_hash(params: dict) -> str:
    """Short stable digest of a parameter set (canonical JSON, sha256)."""
    blob = json.dumps(params, sort_keys=True, default=_jsonable, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


@dataclass
class BoundReport:
    """A bound value with the pieces it is assembled from.

    form "pac-bayes": value = 2 s sqrt((inner + confidence) / n) where inner
    is the sum of the non-confidence components.
    form "kl": value = sum of components (signed).
    """

    bound_value: float
    components: dict
    parameters: dict
    form: str = "pac-bayes"
    flags: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def recombine(self) -> float:
        if self.form == "kl":
            return float(sum(self.components.values()))
        p = self.parameters
        inner = sum(v for k, v in self.components.items() if k != "confidence")
        return 2 * p["s"] * math.sqrt(max(inner + self.components["confidence"], 0.0) / p["n"])

    @property
    def inner(self) -> float:
        return float(sum(v for k, v in self.components.items() if k != "confidence"))

    @property
    def hash(self) -> str:
        return config_hash(self.parameters)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["config_hash"] = self.hash
        return json.loads(json.dumps(out, default=_jsonable))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_row(self) -> dict:
        row = {"bound_value": self.bound_value, "form": self.form, "config_hash": self.hash}
        row.update({f"component_{k}": v for k, v in self.components.items()})
        row.update({f"param_{k}": v for k, v in self.parameters.items() if np.isscalar(v)})
        row.update({f"error_{k}": v for k, v in self.errors.items()})
        row.update({f"flag_{k}": v for k, v in self.flags.items()})
        return row


# --- integration helpers ----------------------------------------------------


def default_grid(T: float, intervals: int = 64) -> np.ndarray:
    return np.linspace(0.0, float(T), intervals + 1)


def _check_grid(t_grid, T) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 3 or np.any(np.diff(t) <= 0):
        raise ParameterOutOfRange("time grid must be increasing with at least 3 points")
    if abs(t[0]) > 1e-15 or abs(t[-1] - T) > 1e-12 * max(1.0, T):
        raise ParameterOutOfRange("time grid must span [0, T]")
    return t


def trapezoid_with_error(values, t_grid):
    """(integral, error estimate) with the error from halving the grid."""
    values = np.asarray(values, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    fine = float(trapezoid(values, t))
    idx = np.arange(0, t.size, 2)
    if idx[-1] != t.size - 1:
        idx = np.append(idx, t.size - 1)
    coarse = float(trapezoid(values[idx], t[idx]))
    return fine, abs(fine - coarse) / 3


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ParameterOutOfRange(f"{k} must be positive, got {v}")


def _pac_params(n, s, zeta):
    if n < 1:
        raise ParameterOutOfRange("n must be at least 1")
    _positive(s=s)
    if not 0 < zeta < 1:
        raise ParameterOutOfRange("zeta must lie in (0, 1)")


# --- PAC-Bayes ----------------------------------------------------------------


def pac_bayes_bound(kl: float, n: int, s: float, zeta: float) -> float:
    """2 s sqrt((KL + log(3 / zeta)) / n)."""
    _pac_params(n, s, zeta)
    if not kl >= 0:
        raise ParameterOutOfRange(f"KL must be nonnegative, got {kl}")
    return 2 * s * math.sqrt((kl + math.log(3 / zeta)) / n)


def pac_bayes_report(kl: float, n: int, s: float, zeta: float, **extra) -> BoundReport:
    value = pac_bayes_bound(kl, n, s, zeta)
    params = {"n": n, "s": s, "zeta": zeta, **extra}
    return BoundReport(value, {"kl_term": kl, "confidence": math.log(3 / zeta)}, params)


def binomial_slack(zeta: float, M: int) -> float:
    return zeta + 3 * math.sqrt(zeta * (1 - zeta) / M)


def pac_bayes_coverage(problem, spec, t: float, M_datasets: int, zetas, seed: int = 0, tol: float = QUAD_TOL,
                       threads: int = 1):
    """Fraction of dataset draws whose Poissonized gap exceeds the PAC-Bayes bound.

    Exact pipeline: full-batch quadratic (or zero) loss with Gaussian noise,
    OU prior started at its invariant law, quadrature KL in 1-d / 2-d.
    Returns {zeta: (fraction, allowed)} and the per-draw table.
    """
    from .learn import build_posterior_kernel, build_prior_kernel, gen_gap, path_rng, sample_dataset

    if problem.loss not in ("quadratic", "zero"):
        raise UnsupportedKernel("coverage needs an exact KL pipeline (quadratic or zero loss)")
    zetas = [float(z) for z in np.atleast_1d(zetas)]
    for z in zetas:
        _pac_params(problem.n, problem.subgaussian, z)
    _, pi = build_prior_kernel(spec, problem.d, require_invariant=True)

    def draw(m):
        data = sample_dataset(problem, path_rng(seed, m))
        P_S = build_posterior_kernel(problem, data, spec)
        if not isinstance(P_S, AffineGaussianKernel):
            raise UnsupportedKernel("coverage needs an exact affine-Gaussian posterior kernel")
        rho = poissonize(P_S, pi, t)
        kl_val, kl_err = kl_with_error(rho, pi, tol=tol)
        kl_val = max(kl_val, 0.0)
        gap, _ = gen_gap(problem, data, rho)
        return {"draw": m, "kl": kl_val, "kl_error": kl_err, "gap": gap,
                **{f"bound_{z:g}": pac_bayes_bound(kl_val, problem.n, problem.subgaussian, z) for z in zetas}}

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(draw, range(M_datasets)))
    else:
        rows = [draw(m) for m in range(M_datasets)]
    summary = {}
    for z in zetas:
        viol = sum(r["gap"] > r[f"bound_{z:g}"] for r in rows)
        summary[z] = (viol / M_datasets, min(1.0, binomial_slack(z, M_datasets)))
    return summary, rows


# --- local KL helpers -----------------------------------------------------------


def local_kl_finite(P: FiniteKernel, P_S: FiniteKernel) -> np.ndarray:
    """x -> KL(delta_x P_S || delta_x P); raises if absolute continuity fails."""
    out = np.array([kl_vectors(P_S.matrix[i], P.matrix[i]) for i in range(P.n)])
    if np.any(~np.isfinite(out)):
        raise SupportViolation("delta_x P_S is not absolutely continuous with respect to delta_x P")
    return out


def _local_kl_gaussian_moments(P: AffineGaussianKernel, P_S: AffineGaussianKernel, mean, second):
    """E_x KL(N(A_S x + b_S, S) || N(A x + b, S)) for x with the given first two moments."""
    if not np.allclose(P.Sigma, P_S.Sigma, rtol=1e-12, atol=1e-15):
        raise UnsupportedKernel("closed-form local KL needs equal noise covariances")
    try:
        prec = np.linalg.inv(P.Sigma)
    except np.linalg.LinAlgError as exc:
        raise SupportViolation("degenerate noise: local KL is infinite") from exc
    if not np.all(np.isfinite(prec)) or np.linalg.matrix_rank(P.Sigma) < P.dim:
        raise SupportViolation("degenerate noise: local KL is infinite")
    D = P_S.A - P.A
    e = P_S.b - P.b
    quad = np.trace(D.T @ prec @ D @ second) + 2 * e @ prec @ D @ mean + e @ prec @ e
    return 0.5 * float(quad)


def _moments(dist):
    if isinstance(dist, GaussianDistribution):
        return dist.mean, dist.cov + np.outer(dist.mean, dist.mean)
    return dist.mean(), dist.second_moment()


def gaussian_local_kl(P: AffineGaussianKernel, P_S: AffineGaussianKernel, x) -> float:
    """KL(delta_x P_S || delta_x P) = |mean gap|^2 / (2 sigma^2) for isotropic equal noise."""
    return kl_gaussian(P_S.at(x), P.at(x))


def laplace_shift_kl(delta: float, b: float) -> float:
    """KL(Laplace(m + delta, b) || Laplace(m, b)) = |delta| / b + exp(-|delta| / b) - 1."""
    _positive(b=b)
    r = abs(delta) / b
    return r + math.expm1(-r)


# --- chain-rule and noisy-algorithm bounds --------------------------------------


def naive_chain_rule_bound(P, P_S, p0, N: int, mu0=None) -> float:
    """KL(p0 || mu0) + sum_{k < N} E_{mu_k^S} KL(delta_x P_S || delta_x P)."""
    if N < 0:
        raise ParameterOutOfRange("N must be nonnegative")
    mu0 = p0 if mu0 is None else mu0
    if isinstance(P, FiniteKernel):
        loc = local_kl_finite(P, P_S)
        mu = _as_vector(p0).copy()
        total = kl_vectors(mu, _as_vector(mu0))
        if math.isinf(total):
            raise SupportViolation("p0 is not absolutely continuous with respect to mu0")
        for _ in range(N):
            total += float(mu @ loc)
            mu = mu @ P_S.matrix
        return total
    if isinstance(P, AffineGaussianKernel):
        total = kl_gaussian(p0, mu0)
        mu = p0
        for _ in range(N):
            total += _local_kl_gaussian_moments(P, P_S, *_moments(mu))
            mu = apply_distribution(P_S, mu)
        return total
    raise UnsupportedKernel("naive bound needs finite or affine-Gaussian kernels")


def exact_discrete_kl(P, P_S, p0, N: int, mu0=None) -> float:
    """KL(mu_N^S || mu_N) on a finite space."""
    mu0 = p0 if mu0 is None else mu0
    a = _as_vector(p0) @ np.linalg.matrix_power(P_S.matrix, N)
    b = _as_vector(mu0) @ np.linalg.matrix_power(P.matrix, N)
    return kl_vectors(a, b)


def exact_poissonized_kl(P: FiniteKernel, P_S: FiniteKernel, p0, T: float, prior0=None,
                         tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """KL(rho_T^S || pi_T) on a finite space (both Poissonized from their starts)."""
    p0 = _as_vector(p0)
    prior0 = p0 if prior0 is None else _as_vector(prior0)
    uS, _ = poissonized_vector(P_S, p0, T, tail_tol)
    u, _ = poissonized_vector(P, prior0, T, tail_tol)
    return kl_vectors(uS / uS.sum(), u / u.sum())


def noisy_kl_bound(P, P_S, p0, T: float, t_grid=None, prior0=None, tail_tol: float = DEFAULT_TAIL_TOL) -> BoundReport:
    """KL(p0 || pi_0) + int E_{rho_t^S} kl_loc dt - int E_{pi_t} D_Phi(v_t, P v_t) dt.

    Finite kernels get both integrals; affine-Gaussian kernels with equal
    noise get the local-KL integral in closed form and omit the (nonpositive
    contribution of the) Jensen term, which is then reported as 0.
    bound_value includes the Jensen term; components carry both pieces.
    """
    _positive(T=T)
    t = _check_grid(default_grid(T) if t_grid is None else t_grid, T)
    params = {"T": float(T), "grid_points": int(t.size)}
    if isinstance(P, FiniteKernel):
        loc = local_kl_finite(P, P_S)
        p0v = _as_vector(p0)
        prior0v = p0v if prior0 is None else _as_vector(prior0)
        if np.any(prior0v <= 0):
            raise SupportViolation("prior start must be strictly positive")
        k0 = kl_vectors(p0v, prior0v)
        local, jensen = [], []
        for s in t:
            uS, _ = poissonized_vector(P_S, p0v, float(s), tail_tol)
            u, _ = poissonized_vector(P, prior0v, float(s), tail_tol)
            v = uS / u
            local.append(float(uS @ loc))
            jensen.append(float(u @ phi_bregman(v, P.matrix @ v)))
    elif isinstance(P, AffineGaussianKernel):
        prior0 = p0 if prior0 is None else prior0
        k0 = kl_gaussian(p0, prior0)
        local, jensen = [], []
        for s in t:
            rho = poissonize(P_S, p0, float(s), tail_tol)
            local.append(_local_kl_gaussian_moments(P, P_S, rho.mean(), rho.second_moment()))
            jensen.append(0.0)
        params["jensen_term"] = "omitted"
    else:
        raise UnsupportedKernel("noisy bound needs finite or affine-Gaussian kernels")
    int_loc, err_loc = trapezoid_with_error(local, t)
    int_jen, err_jen = trapezoid_with_error(jensen, t)
    comps = {"initial_kl": k0, "local_kl_integral": int_loc, "jensen_term": -int_jen}
    value = k0 + int_loc - int_jen
    report = BoundReport(value, comps, params, form="kl",
                         errors={"trapezoid": err_loc + err_jen, "tail": tail_tol * (1 + T)})
    report.flags["without_jensen"] = k0 + int_loc
    return report


# --- modified-LSI and SGLD bounds -----------------------------------------------


def mlsi_gen_bound(expansion_trace, t_grid, certificate: LsiCertificate, K0: float, T: float,
                   n: int, s: float, zeta: float) -> BoundReport:
    """2 s / sqrt(n) * sqrt(int e^{-gamma (T - t)} Delta(t) dt + e^{-gamma T} K0 + log(3 / zeta))."""
    if not isinstance(certificate, LsiCertificate):
        raise MissingCertificate("a modified-LSI certificate is required")
    if not certificate.is_closed_form:
        raise UnsoundCertificate(
            "numeric modified-LSI estimates only bound the optimal constant from above, "
            "so they cannot certify a decay rate; supply a closed-form certificate")
    _pac_params(n, s, zeta)
    if K0 < 0:
        raise ParameterOutOfRange("K0 must be nonnegative")
    t = _check_grid(t_grid, T)
    gamma = certificate.gamma
    delta = np.asarray(expansion_trace, dtype=float)
    integral, err = trapezoid_with_error(np.exp(-gamma * (T - t)) * delta, t)
    comps = {"expansion_integral": integral, "initial_kl": math.exp(-gamma * T) * K0,
             "confidence": math.log(3 / zeta)}
    inner = integral + comps["initial_kl"]
    value = 2 * s * math.sqrt(max(inner + comps["confidence"], 0.0) / n)
    params = {"n": n, "s": s, "zeta": zeta, "gamma": gamma, "T": float(T), "K0": K0,
              "certificate": certificate.provenance}
    return BoundReport(value, comps, params, errors={"trapezoid": err})


def sgld_coefficient(eta: float, lam: float, sigma: float) -> float:
    return eta**2 * (2 - lam * eta) / (2 * sigma**2)


def sgld_coefficient_check(eta: float, lam: float, sigma: float, tol: float = 1e-12):
    """Compose the coefficient from the decay constants (q, tau0) of the OU prior.

    With e^{-K t0} = 1 - lam eta: 1 / q = 2 - lam eta, 1 / tau0 = lam eta, and
    sup_x kl_loc / |g|^2 = eta^2 / (2 sigma^2). Returns (composed, direct, decay).
    """
    gamma = lam * eta
    c, t0 = ou_representation(gamma, sigma)
    q, tau0 = sgld_decay_constants(c, t0)
    composed = (1 / q) * eta**2 / (2 * sigma**2)
    direct = sgld_coefficient(eta, lam, sigma)
    if abs(composed - direct) > tol * max(1.0, abs(direct)) or abs(1 / tau0 - gamma) > tol:
        raise ArithmeticError(f"SGLD coefficient composition mismatch: {composed!r} vs {direct!r}")
    return composed, direct, 1 / tau0


def sgld_bound(grad_stats, eta: float, lam: float, sigma: float, T: float, t_grid) -> BoundReport:
    """eta^2 (2 - lam eta) / (2 sigma^2) * int e^{-lam eta (T - t)} E|g|^2 dt (prior started at pi)."""
    _positive(eta=eta, sigma=sigma, T=T)
    if not 0 < lam * eta < 1:
        raise ParameterOutOfRange(
            f"SGLD bound needs 0 < lambda*eta < 1 (invariant prior and decay), got lambda*eta = {lam * eta:g}")
    t = _check_grid(t_grid, T)
    g2 = np.asarray(grad_stats(t) if callable(grad_stats) else grad_stats, dtype=float)
    if np.any(g2 < 0):
        raise ParameterOutOfRange("squared gradient norms must be nonnegative")
    composed, coeff, decay = sgld_coefficient_check(eta, lam, sigma)
    integral, err = trapezoid_with_error(np.exp(-decay * (T - t)) * g2, t)
    params = {"eta": eta, "lambda": lam, "sigma": sigma, "T": float(T), "coefficient": coeff}
    return BoundReport(coeff * integral, {"gradient_integral": coeff * integral}, params, form="kl",
                       errors={"trapezoid": coeff * err})


# --- first- and second-order bounds -------------------------------------------


@dataclass(frozen=True)
class FirstOrderInputs:
    c1: float
    c2: float
    w2_sq_mean: float
    norm_P: float
    norm_PS: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ParameterOutOfRange(f"{k} must be finite and nonnegative, got {v}")


def first_order_bound(inputs: FirstOrderInputs) -> float:
    """sqrt(E W2^2) * (c1/2 |P|_t + c1/2 |P_S|_t + c2)."""
    i = inputs
    return math.sqrt(i.w2_sq_mean) * (0.5 * i.c1 * i.norm_P + 0.5 * i.c1 * i.norm_PS + i.c2)


def first_order_inputs_gaussian(P: AffineGaussianKernel, P_S: AffineGaussianKernel, rho, c1: float, c2: float):
    """FirstOrderInputs for affine-Gaussian kernels under a Gaussian (mixture) law rho."""
    mean, second = _moments(rho)
    D = P_S.A - P.A
    e = P_S.b - P.b
    mean_gap_sq = float(np.trace(D.T @ D @ second) + 2 * e @ D @ mean + e @ e)
    bures = w2_gaussian(GaussianDistribution(np.zeros(P.dim), P.Sigma),
                        GaussianDistribution(np.zeros(P.dim), P_S.Sigma)) ** 2

    def norm(K):
        return math.sqrt(float(np.trace(K.A.T @ K.A @ second) + 2 * K.b @ K.A @ mean + K.b @ K.b
                               + np.trace(K.Sigma)))

    return FirstOrderInputs(c1, c2, mean_gap_sq + bures, norm(P), norm(P_S))


@dataclass(frozen=True)
class SecondOrderInputs:
    """Time series on a shared grid: score0(t) and the moments g1, g2, x1, x2, gx."""

    beta: float
    score0: np.ndarray
    moments: dict
    K0: float
    min_eig: float = 0.0

    def check(self, rel: float = 1e-9):
        if self.beta < 0:
            raise ParameterOutOfRange("beta must be nonnegative")
        m = {k: np.asarray(self.moments[k], dtype=float) for k in ("g1", "g2", "x1", "x2", "gx")}
        for k, v in m.items():
            if np.any(v < 0):
                raise InconsistentMoments(f"moment {k} is negative")
        slack = 1 + rel
        if np.any(m["gx"] ** 2 > m["g2"] * m["x2"] * slack + 1e-300):
            raise InconsistentMoments("E[|g||x|]^2 exceeds E|g|^2 E|x|^2 (Cauchy-Schwarz)")
        if np.any(m["g1"] ** 2 > m["g2"] * slack + 1e-300) or np.any(m["x1"] ** 2 > m["x2"] * slack + 1e-300):
            raise InconsistentMoments("first moments exceed the square root of second moments")
        return m


def second_order_sgd_bound(inputs: SecondOrderInputs, eta: float, lam: float, T: float, n: int, s: float,
                           zeta: float, t_grid) -> BoundReport:
    """2s/sqrt(n) sqrt(int e^{-lam eta (T - t)} eta E[Q] dt + e^{-lam eta T} K0 + log(3/zeta)),
    Q(X, Y) = X (beta Y + score0) + eta beta (X^2 + lam^2 Y^2), X = |g|, Y = |x|."""
    _positive(eta=eta, T=T)
    if not 0 < lam * eta < 1:
        raise ParameterOutOfRange(f"second-order bound needs 0 < lambda*eta < 1, got {lam * eta:g}")
    _pac_params(n, s, zeta)
    t = _check_grid(t_grid, T)
    m = inputs.check()
    b = inputs.beta
    score0 = np.asarray(inputs.score0, dtype=float)
    EQ = b * m["gx"] + score0 * m["g1"] + eta * b * (m["g2"] + lam**2 * m["x2"])
    gamma = lam * eta
    integral, err = trapezoid_with_error(np.exp(-gamma * (T - t)) * eta * EQ, t)
    comps = {"polynomial_integral": integral, "initial_kl": math.exp(-gamma * T) * inputs.K0,
             "confidence": math.log(3 / zeta)}
    value = 2 * s * math.sqrt(max(integral + comps["initial_kl"] + comps["confidence"], 0.0) / n)
    params = {"eta": eta, "lambda": lam, "T": float(T), "n": n, "s": s, "zeta": zeta, "beta": b, "K0": inputs.K0}
    flags = {}
    if inputs.min_eig < -HYPOTHESIS_TOL:
        flags["status"] = "hypothesis-violated-on-grid"
    return BoundReport(value, comps, params, flags=flags, errors={"trapezoid": err})


def score_hessian_estimate(mixture, prior: GaussianDistribution, grid_spec: Optional[dict] = None):
    """(beta, |grad log u(0)|, min_eig) for v = mixture / prior on a grid.

    The grid covers the mixture mean +- half_width standard deviations
    (default 8) with spacing `step`; the default step is a twentieth of the
    narrowest component standard deviation. Steps coarser than a tenth of
    that width are refused.
    """
    grid_spec = dict(grid_spec or {})
    if isinstance(mixture, GaussianDistribution):
        comps = [mixture]
        score_hess = _gaussian_score_hessian(mixture)
        mean, cov = mixture.mean, mixture.cov
    else:
        comps = mixture.components
        score_hess = mixture.score_and_hessian
        mean, cov = mixture.mean(), mixture.cov()
    d = mean.size
    if d > 2:
        raise ParameterOutOfRange("grid estimates are limited to dimensions 1 and 2")
    sigma_min = min(float(np.sqrt(np.min(np.linalg.eigvalsh(c.cov)))) for c in comps)
    step = float(grid_spec.get("step", sigma_min / 20))
    if step > sigma_min / 10:
        raise GridTooCoarse(f"grid step {step:g} exceeds a tenth of the narrowest scale {sigma_min:g}")
    half = float(grid_spec.get("half_width", 8.0)) * np.sqrt(np.diag(cov))
    axes = [np.arange(mean[j] - half[j], mean[j] + half[j] + step / 2, step) for j in range(d)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    prior_prec = np.linalg.inv(prior.cov)
    lo, hi = math.inf, -math.inf
    for chunk in np.array_split(pts, max(1, pts.shape[0] // 20000)):
        _, H = score_hess(chunk)
        eig = np.linalg.eigvalsh(H + prior_prec[None])
        lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
    g0, _ = score_hess(np.zeros((1, d)))
    return max(hi, 0.0), float(np.linalg.norm(g0[0])), lo


def _gaussian_score_hessian(dist: GaussianDistribution):
    prec = np.linalg.inv(dist.cov)

    def fn(x):
        x = np.atleast_2d(x)
        grad = -(x - dist.mean) @ prec.T
        return grad, np.broadcast_to(-prec, (x.shape[0],) + prec.shape)

    return fn


def gradient_moments(dist, H, c, tol: float = QUAD_TOL) -> dict:
    """Moments of |g(x)| and |x| for the full-batch quadratic gradient g(x) = H x - c.

    Second moments are closed form; first and cross moments use quadrature.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    mean, second = _moments(dist)
    g2 = float(np.trace(H.T @ H @ second) - 2 * c @ H @ mean + c @ c)
    x2 = float(np.trace(second))

    def gnorm(x):
        return np.linalg.norm(x @ H.T - c, axis=-1)

    def xnorm(x):
        return np.linalg.norm(x, axis=-1)

    g1, e1 = integrate_against(dist, gnorm, tol=tol)
    x1, e2 = integrate_against(dist, xnorm, tol=tol)
    gx, e3 = integrate_against(dist, lambda x: gnorm(x) * xnorm(x), tol=tol)
    return {"g1": g1, "g2": g2, "x1": x1, "x2": x2, "gx": gx, "error": e1 + e2 + e3}


# --- depoissonization ------------------------------------------------------------


def depoisson_gap_bound(mode: str, scale: float, C: float, a: float, k) -> float:
    """4 B C e^{-(1-a) k} (|G_S| <= B) or 2 L C e^{-(1-a) k} (G_S L-Lipschitz, W1 certificate)."""
    if not 0 <= a < 1:
        raise ParameterOutOfRange(f"a must lie in [0, 1), got {a}")
    _positive(C=C, scale=scale)
    factor = {"bounded": 4.0, "lipschitz": 2.0}.get(mode)
    if factor is None:
        raise ParameterOutOfRange(f"unknown mode {mode!r}")
    return factor * scale * C * np.exp(-(1 - a) * np.asarray(k, dtype=float)) if np.ndim(k) else \
        factor * scale * C * math.exp(-(1 - a) * k)


def slem(kernel: FiniteKernel) -> float:
    """Second-largest eigenvalue modulus."""
    vals = np.sort(np.abs(np.linalg.eigvals(kernel.matrix)))[::-1]
    return float(vals[1]) if vals.size > 1 else 0.0


def stationary_direct(kernel: FiniteKernel) -> np.ndarray:
    """Invariant law from the linear system pi (P - I) = 0, sum(pi) = 1 (least squares)."""
    n = kernel.n
    A = np.vstack([kernel.matrix.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _w1(p, q, coords):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1 or coords.shape[1] == 1:
        return w1_1d(p, q, coords.ravel())
    return wp_lp(p, q, coords, coords, order=1)


def ergodicity_certificate(kernel: FiniteKernel, metric: str = "tv", k_cert: int = 100, pi=None):
    """(C, a) with dist(delta_x P^k, pi) <= C a^k for every x and every k <= k_cert.

    a is the second-largest eigenvalue modulus; C is the exact supremum of
    the ratio over the certified range (steps at round-off level skipped).
    With a = 0 (one-step mixing) C is the k = 0 distance.
    """
    check_ergodic(kernel)
    pi = stationary_direct(kernel) if pi is None else _as_vector(pi)
    a = slem(kernel)
    if a < 1e-12:
        a = 0.0
    if metric == "tv":
        dist = lambda mu: 0.5 * float(np.abs(mu - pi).sum())  # noqa: E731
    elif metric == "w1":
        dist = lambda mu: _w1(mu, pi, kernel.coords)  # noqa: E731
    else:
        raise ParameterOutOfRange(f"unknown metric {metric!r}")
    C = 0.0
    Pk = np.eye(kernel.n)
    for k in range(k_cert + 1):
        for x in range(kernel.n):
            dx = dist(Pk[x])
            if k == 0:
                C = max(C, dx)
            elif a > 0 and dx > TV_FLOOR:
                C = max(C, dx / a**k)
        Pk = Pk @ kernel.matrix
        if a == 0 and k >= 1:
            break
    return max(C, 1e-300), a
