"""Toy learning problems, algorithm kernels and Monte-Carlo trajectory ensembles.

Algorithms follow the noisy (stochastic) gradient recursion

    X_{k+1} = (1 - lam * eta) X_k - eta * g_S(X_k, U_k) + noise_k

where g_S is the minibatch gradient of the empirical loss and U_k the
batch indices. Full-batch quadratic problems with Gaussian (or no) noise
give an affine-Gaussian kernel, so their marginals are exact.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MissingCertificate, NoInvariantMeasure, ParameterOutOfRange, UnsupportedKernel
from .markov import AffineGaussianKernel, FiniteKernel, GaussianDistribution, SampledKernel, ou_prior
from .poissonize import PoissonMixture, poisson_k_max, poisson_weights, poissonized_vector

LOSSES = ("quadratic", "logistic", "bounded", "zero")
DIVERGENCE_THRESHOLD = 1e12
ENSEMBLE_TAIL = 1e-9
HOLDOUT_SIZE = 100_000


@dataclass(frozen=True)
class LearningProblem:
    """Synthetic problem with Gaussian features x ~ N(0, I_d).

    quadratic: y = <w*, x> + eps, loss (<w, x> - y)^2 / 2.
    bounded:   same data, loss min((<w, x> - y)^2 / 2, B).
    logistic:  y in {-1, 1} with P(y = 1 | x) = sigmoid(<w*, x>).
    zero:      loss identically 0.
    """

    loss: str = "quadratic"
    d: int = 1
    n: int = 50
    w_star: tuple = (1.0,)
    noise_std: float = 0.5
    B: float = 1.0
    s: Optional[float] = None
    holdout_seed: int = 12345

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ParameterOutOfRange(f"unknown loss {self.loss!r}")
        if self.n < 1:
            raise ParameterOutOfRange("n must be at least 1")
        if len(self.w_star) != self.d:
            raise ParameterOutOfRange("w_star must have length d")
        if self.loss == "bounded":
            # Hoeffding: a loss with range [0, B] is (B/2)^2-subgaussian
            object.__setattr__(self, "s", self.B / 2)

    @property
    def subgaussian(self) -> float:
        if self.s is None:
            raise ParameterOutOfRange(f"{self.loss} loss needs a declared subgaussian parameter s")
        return self.s


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size


def sample_dataset(problem: LearningProblem, rng: np.random.Generator, n: Optional[int] = None) -> Dataset:
    n = problem.n if n is None else n
    X = rng.standard_normal((n, problem.d))
    lin = X @ np.asarray(problem.w_star, dtype=float)
    if problem.loss == "logistic":
        y = np.where(rng.random(n) < 1 / (1 + np.exp(-lin)), 1.0, -1.0)
    else:
        y = lin + problem.noise_std * rng.standard_normal(n)
    return Dataset(X, y)


def quadratic_coefficients(dataset: Dataset):
    """(H_S, c_S, mean y^2) with empirical risk w'H w / 2 - c'w + mean(y^2) / 2."""
    n = dataset.n
    return dataset.X.T @ dataset.X / n, dataset.X.T @ dataset.y / n, float(dataset.y @ dataset.y / n)


def pointwise_loss(problem: LearningProblem, W, X, y) -> np.ndarray:
    """Loss of each parameter row of W (m, d) on each sample: shape (m, n)."""
    W = np.atleast_2d(W)
    lin = W @ X.T
    if problem.loss == "zero":
        return np.zeros_like(lin)
    if problem.loss == "logistic":
        return np.logaddexp(0.0, -y[None] * lin)
    sq = 0.5 * (lin - y[None]) ** 2
    return np.minimum(sq, problem.B) if problem.loss == "bounded" else sq


def empirical_risk(problem: LearningProblem, dataset: Dataset, W) -> np.ndarray:
    return pointwise_loss(problem, W, dataset.X, dataset.y).mean(axis=1)


_HOLDOUT_CACHE: dict = {}


def _holdout(problem: LearningProblem) -> Dataset:
    key = (problem.loss, problem.d, problem.w_star, problem.noise_std, problem.holdout_seed)
    if key not in _HOLDOUT_CACHE:
        _HOLDOUT_CACHE[key] = sample_dataset(problem, np.random.default_rng(problem.holdout_seed), HOLDOUT_SIZE)
    return _HOLDOUT_CACHE[key]


def population_risk(problem: LearningProblem, W):
    """(risk, standard error) per row of W. Closed form for quadratic data."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if problem.loss == "zero":
        return np.zeros(W.shape[0]), np.zeros(W.shape[0])
    if problem.loss == "quadratic":
        diff = W - np.asarray(problem.w_star)
        return 0.5 * np.sum(diff * diff, axis=1) + 0.5 * problem.noise_std**2, np.zeros(W.shape[0])
    ho = _holdout(problem)
    out_m, out_s = [], []
    for chunk in np.array_split(W, max(1, W.shape[0] // 64)):
        L = pointwise_loss(problem, chunk, ho.X, ho.y)
        out_m.append(L.mean(axis=1))
        out_s.append(L.std(axis=1) / math.sqrt(ho.n))
    return np.concatenate(out_m), np.concatenate(out_s)


def generalization_gap(problem: LearningProblem, dataset: Dataset, W) -> np.ndarray:
    """G_S(w) = R(w) - R_S(w) per row of W (population part may be a Monte-Carlo estimate)."""
    return population_risk(problem, W)[0] - empirical_risk(problem, dataset, W)


def stochastic_gradient(problem: LearningProblem, W, Xb, yb) -> np.ndarray:
    """Minibatch gradient per path: W (m, d), Xb (m, b, d), yb (m, b)."""
    lin = np.einsum("mbd,md->mb", Xb, W)
    if problem.loss == "zero":
        return np.zeros_like(W)
    if problem.loss == "logistic":
        coef = -yb / (1 + np.exp(yb * lin))
    else:
        r = lin - yb
        coef = r if problem.loss == "quadratic" else np.where(0.5 * r * r < problem.B, r, 0.0)
    return np.einsum("mb,mbd->md", coef, Xb) / Xb.shape[1]


@dataclass(frozen=True)
class AlgorithmSpec:
    eta: float
    lam: float = 0.0
    noise: str = "gaussian"
    noise_scale: float = 0.1
    batch_size: Optional[int] = None
    T: float = 1.0
    prior_sigma: Optional[float] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterOutOfRange("eta must be positive")
        if self.lam < 0:
            raise ParameterOutOfRange("lambda must be nonnegative")
        if self.noise not in ("none", "gaussian", "laplace"):
            raise ParameterOutOfRange(f"unknown noise {self.noise!r}")
        if self.noise != "none" and not self.noise_scale > 0:
            raise ParameterOutOfRange("noise scale must be positive")

    @property
    def gamma(self) -> float:
        return self.lam * self.eta

    @property
    def prior_scale(self) -> float:
        return self.prior_sigma if self.prior_sigma is not None else self.noise_scale

    def require_sgld_preconditions(self):
        if not 0 < self.gamma < 1:
            raise ParameterOutOfRange(f"SGLD bounds need 0 < lambda*eta < 1, got lambda*eta = {self.gamma:g}")


def _batch_size(problem: LearningProblem, dataset: Dataset, spec: AlgorithmSpec) -> int:
    b = dataset.n if spec.batch_size is None else min(spec.batch_size, dataset.n)
    if b < 1:
        raise ParameterOutOfRange("batch size must be at least 1")
    return b


def build_posterior_kernel(problem: LearningProblem, dataset: Dataset, spec: AlgorithmSpec):
    """Algorithm kernel P_S; exact affine-Gaussian when the recursion is affine."""
    d = problem.d
    full = _batch_size(problem, dataset, spec) == dataset.n
    if problem.loss in ("quadratic", "zero") and full and spec.noise in ("gaussian", "none"):
        if problem.loss == "zero":
            H, c = np.zeros((d, d)), np.zeros(d)
        else:
            H, c, _ = quadratic_coefficients(dataset)
        A = np.eye(d) - spec.eta * (spec.lam * np.eye(d) + H)
        var = spec.noise_scale**2 if spec.noise == "gaussian" else 0.0
        return AffineGaussianKernel(A, spec.eta * c, var * np.eye(d))
    b = _batch_size(problem, dataset, spec)

    def sampler(state, rng):
        x = np.atleast_1d(np.asarray(state, dtype=float))
        idx = rng.choice(dataset.n, size=b, replace=False) if b < dataset.n else np.arange(dataset.n)
        g = stochastic_gradient(problem, x[None], dataset.X[idx][None], dataset.y[idx][None])[0]
        return (1 - spec.gamma) * x - spec.eta * g + _noise(spec, rng, (d,))

    return SampledKernel(sampler, f"{problem.loss} loss, batch {b}, {spec.noise} noise")


def _noise(spec: AlgorithmSpec, rng, shape):
    if spec.noise == "gaussian":
        return spec.noise_scale * rng.standard_normal(shape)
    if spec.noise == "laplace":
        return rng.laplace(scale=spec.noise_scale, size=shape)
    return np.zeros(shape)


def build_prior_kernel(spec: AlgorithmSpec, d: int = 1, require_invariant: bool = False):
    """Data-independent prior X' = (1 - lam eta) X + sigma N(0, I) and its invariant law (or None)."""
    sigma = spec.prior_scale
    if not sigma > 0:
        raise ParameterOutOfRange("prior noise scale must be positive")
    if 0 < spec.gamma < 1:
        return ou_prior(spec.gamma, sigma, d)
    if require_invariant:
        raise NoInvariantMeasure(f"lambda*eta = {spec.gamma:g} gives no invariant Gaussian prior")
    eye = np.eye(d)
    return AffineGaussianKernel((1 - spec.gamma) * eye, np.zeros(d), sigma**2 * eye), None


@dataclass
class TrajectoryEnsemble:
    iterates: np.ndarray  # (M, K + 1, d)
    grad_norm_sq: np.ndarray  # (M, K + 1)
    iterate_norm_sq: np.ndarray  # (M, K + 1)
    grad_norm: np.ndarray  # (M, K + 1)
    diverged: np.ndarray  # (M,)
    seed: int
    T: float
    extra: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.iterates.shape[0]

    @property
    def k_max(self) -> int:
        return self.iterates.shape[1] - 1

    def per_step(self, values: np.ndarray):
        """Mean and standard error at each discrete step, over non-diverged paths."""
        ok = ~self.diverged
        v = values[ok]
        return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(max(1, v.shape[0]))

    def at_time(self, values: np.ndarray, t: float):
        """Poissonized statistic at time t: Poisson-weight each path, then average."""
        w = poisson_weights(t, ENSEMBLE_TAIL)
        k = min(w.k_max, self.k_max)
        per_path = values[~self.diverged, : k + 1] @ w.weights[: k + 1]
        se = per_path.std(ddof=1) / math.sqrt(per_path.size) if per_path.size > 1 else 0.0
        return float(per_path.mean()), float(se)

    def moment_series(self, t_grid):
        """E||g||, E||g||^2, E||x||, E||x||^2, E||g|| ||x|| along t_grid."""
        xn = np.sqrt(self.iterate_norm_sq)
        cols = {
            "g1": self.grad_norm,
            "g2": self.grad_norm_sq,
            "x1": xn,
            "x2": self.iterate_norm_sq,
            "gx": self.grad_norm * xn,
        }
        return {name: np.array([self.at_time(v, t)[0] for t in t_grid]) for name, v in cols.items()}

    def to_csv(self, path):
        d = self.iterates.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "step"] + [f"iterate_{j}" for j in range(d)] + ["grad_norm_sq", "iterate_norm_sq"])
            for i in range(self.M):
                for k in range(self.k_max + 1):
                    row = [i, k] + [f"{x:.17g}" for x in self.iterates[i, k]]
                    row += [f"{self.grad_norm_sq[i, k]:.17g}", f"{self.iterate_norm_sq[i, k]:.17g}"]
                    w.writerow(row)


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream for one path; independent of how paths are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path_id,))))


def _draw_init(p0, rng, d):
    if isinstance(p0, GaussianDistribution):
        vals, vecs = np.linalg.eigh(p0.cov)
        return p0.mean + vecs @ (np.sqrt(np.clip(vals, 0, None)) * rng.standard_normal(d))
    if callable(p0):
        return np.atleast_1d(np.asarray(p0(rng), dtype=float))
    return np.atleast_1d(np.asarray(p0, dtype=float)).copy()


def _run_chunk(problem, dataset, spec, p0, seed, ids, k_max):
    d, n = problem.d, dataset.n
    b = _batch_size(problem, dataset, spec)
    m = len(ids)
    X0 = np.empty((m, d))
    idx = np.empty((m, k_max + 1, b), dtype=np.int64)
    noise = np.empty((m, k_max, d))
    for j, i in enumerate(ids):
        rng = path_rng(seed, i)
        X0[j] = _draw_init(p0, rng, d)
        if b < n:
            idx[j] = np.argsort(rng.random((k_max + 1, n)), axis=1)[:, :b]
        else:
            idx[j] = np.arange(n)
        noise[j] = _noise(spec, rng, (k_max, d))
    iters = np.full((m, k_max + 1, d), np.nan)
    gsq = np.full((m, k_max + 1), np.nan)
    gn = np.full((m, k_max + 1), np.nan)
    diverged = np.zeros(m, dtype=bool)
    x = X0
    for k in range(k_max + 1):
        iters[:, k] = x
        g = stochastic_gradient(problem, x, dataset.X[idx[:, k]], dataset.y[idx[:, k]])
        gsq[:, k] = np.sum(g * g, axis=1)
        gn[:, k] = np.sqrt(gsq[:, k])
        if k == k_max:
            break
        x = (1 - spec.gamma) * x - spec.eta * g + noise[:, k]
        bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x, axis=1) > DIVERGENCE_THRESHOLD)
        diverged |= bad
        x = np.where(diverged[:, None], np.nan, x)
    return iters, gsq, gn, diverged


def run_ensemble(problem: LearningProblem, dataset: Dataset, spec: AlgorithmSpec, M: int, seed: int = 0,
                 p0=None, threads: int = 1, chunk: int = 512) -> TrajectoryEnsemble:
    """M independent discrete trajectories up to k_max with P(N_T > k_max) <= 1e-9."""
    if M < 1:
        raise ParameterOutOfRange("M must be at least 1")
    p0 = np.zeros(problem.d) if p0 is None else p0
    k_max = poisson_k_max(spec.T, ENSEMBLE_TAIL)
    chunks = [list(range(i, min(M, i + chunk))) for i in range(0, M, chunk)]
    work = lambda ids: _run_chunk(problem, dataset, spec, p0, seed, ids, k_max)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    iters, gsq, gn, div = (np.concatenate([p[i] for p in parts]) for i in range(4))
    xsq = np.sum(iters * iters, axis=2)
    return TrajectoryEnsemble(iters, gsq, xsq, gn, div, seed, spec.T)


def gen_gap(problem: LearningProblem, dataset: Dataset, source, t: Optional[float] = None):
    """E_{w ~ rho_t^S} G_S(w) as (estimate, standard error).

    `source` is a Gaussian (mixture) law, giving a closed form for quadratic
    problems, or a TrajectoryEnsemble, giving a Poisson-weighted Monte-Carlo
    estimate at time t.
    """
    if isinstance(source, TrajectoryEnsemble):
        if t is None:
            raise ValueError("ensemble estimates need a time t")
        M, K1, d = source.iterates.shape
        flat = np.nan_to_num(source.iterates.reshape(-1, d))
        pop, pop_se = population_risk(problem, flat)
        gaps = (pop - empirical_risk(problem, dataset, flat)).reshape(M, K1)
        est, se = source.at_time(gaps, t)
        return est, float(math.hypot(se, pop_se.mean() if pop_se.size else 0.0))
    if problem.loss not in ("quadratic", "zero"):
        raise UnsupportedKernel("closed-form gaps exist only for quadratic problems; pass an ensemble")
    if problem.loss == "zero":
        return 0.0, 0.0
    if isinstance(source, PoissonMixture):
        mean, second = source.mean(), source.second_moment()
    else:
        mean, second = source.mean, source.cov + np.outer(source.mean, source.mean)
    H, c, y2 = quadratic_coefficients(dataset)
    ws = np.asarray(problem.w_star, dtype=float)
    pop = 0.5 * (np.trace(second) - 2 * ws @ mean + ws @ ws) + 0.5 * problem.noise_std**2
    emp = 0.5 * np.trace(H @ second) - c @ mean + 0.5 * y2
    return float(pop - emp), 0.0


@dataclass(frozen=True)
class FiniteSurrogate:
    """A finite chain standing in for a learning algorithm.

    ``gap`` holds G_S at each state; mode 'bounded' means |G_S| <= B
    (a loss with values in [0, B]), mode 'lipschitz' means G_S is
    L-Lipschitz in the state coordinates.
    """

    kernel: FiniteKernel
    gap: np.ndarray
    p0: np.ndarray
    mode: str = "bounded"
    B: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        gap = np.asarray(self.gap, dtype=float)
        if self.mode == "bounded" and np.max(np.abs(gap)) > self.B + 1e-12:
            raise ParameterOutOfRange("gap values exceed the declared bound B")
        if self.mode == "lipschitz":
            x = self.kernel.coords
            dg = np.abs(gap[:, None] - gap[None, :])
            dx = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
            off = dx > 0
            if np.any(dg[off] > self.L * dx[off] + 1e-12):
                raise ParameterOutOfRange("gap is not L-Lipschitz on the state coordinates")
        object.__setattr__(self, "gap", gap)
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))


def depoisson_gap_compare(surrogate, k_grid, certificate=None, problem=None, dataset=None, spec=None,
                          M: int = 2000, seed: int = 0, p0=None):
    """|E G_S(X_k) - E G_S(Y_k)| along k_grid together with the ergodicity bound curve.

    With a FiniteSurrogate everything is exact. Otherwise pass
    (problem, dataset, spec) and an explicit certificate (C, a); the
    gaps are then Monte-Carlo estimates.
    Returns dict with keys k, gap, bound (and se for Monte Carlo).
    """
    from .bounds import depoisson_gap_bound, ergodicity_certificate

    k_grid = np.asarray(k_grid, dtype=int)
    if isinstance(surrogate, FiniteSurrogate):
        metric = "tv" if surrogate.mode == "bounded" else "w1"
        C, a = certificate if certificate is not None else ergodicity_certificate(
            surrogate.kernel, metric=metric, k_cert=max(100, int(k_grid.max(initial=0)) * 3))
        P = surrogate.kernel.matrix
        gaps = []
        for k in k_grid:
            mu_k = surrogate.p0 @ np.linalg.matrix_power(P, int(k))
            rho_k, _ = poissonized_vector(surrogate.kernel, surrogate.p0, float(k), 1e-16)
            gaps.append(abs(float(surrogate.gap @ (mu_k - rho_k))))
        scale = surrogate.B if surrogate.mode == "bounded" else surrogate.L
        bound = [depoisson_gap_bound(surrogate.mode, scale, C, a, int(k)) for k in k_grid]
        return {"k": k_grid, "gap": np.array(gaps), "bound": np.array(bound), "C": C, "a": a}
    if certificate is None:
        raise MissingCertificate("Monte-Carlo depoissonization needs an explicit (C, a) certificate")
    if problem is None or dataset is None or spec is None:
        raise ValueError("Monte-Carlo mode needs problem, dataset and spec")
    C, a, mode, scale = certificate
    run_spec = AlgorithmSpec(**{**spec.__dict__, "T": float(k_grid.max(initial=0)) or 1.0})
    ens = run_ensemble(problem, dataset, run_spec, M, seed, p0=p0)
    M_, K1, d = ens.iterates.shape
    flat = np.nan_to_num(ens.iterates.reshape(-1, d))
    G = generalization_gap(problem, dataset, flat).reshape(M_, K1)
    gaps, ses = [], []
    for k in k_grid:
        k = int(k)
        w = poisson_weights(float(k), ENSEMBLE_TAIL)
        kk = min(w.k_max, ens.k_max)
        diff = G[~ens.diverged, min(k, ens.k_max)] - G[~ens.diverged, : kk + 1] @ w.weights[: kk + 1]
        gaps.append(abs(diff.mean()))
        ses.append(diff.std(ddof=1) / math.sqrt(diff.size))
    bound = [depoisson_gap_bound(mode, scale, C, a, int(k)) for k in k_grid]
    return {"k": k_grid, "gap": np.array(gaps), "se": np.array(ses), "bound": np.array(bound), "C": C, "a": a}
