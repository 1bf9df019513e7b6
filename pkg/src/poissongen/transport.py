"""Wasserstein distances for the small cases used here.

1-d discrete laws use the quantile (monotone) coupling; Gaussians use the
Bures formula; small finite supports solve the transport LP exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import linprog

from .errors import DimensionMismatch, NumericFailure, UnsupportedKernel
from .markov import GaussianDistribution


def w1_1d(p, q, coords) -> float:
    """W_1 between two laws on the same 1-d support: integral of |F_p - F_q|."""
    x = np.asarray(coords, dtype=float).ravel()
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if not (x.size == p.size == q.size):
        raise DimensionMismatch("coords and laws differ in length")
    order = np.argsort(x, kind="stable")
    x, p, q = x[order], p[order], q[order]
    cdf_gap = np.cumsum(p - q)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(x)))


def wp_1d(p, q, coords, order: int = 2) -> float:
    """W_p on a shared 1-d support via the quantile coupling."""
    x = np.asarray(coords, dtype=float).ravel()
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    idx = np.argsort(x, kind="stable")
    x, p, q = x[idx], p[idx], q[idx]
    Fp, Fq = np.cumsum(p), np.cumsum(q)
    levels = np.unique(np.concatenate([[0.0], Fp, Fq]))
    levels = levels[(levels >= 0) & (levels <= min(Fp[-1], Fq[-1]))]
    mids = (levels[:-1] + levels[1:]) / 2
    qp = x[np.minimum(np.searchsorted(Fp, mids, side="left"), x.size - 1)]
    qq = x[np.minimum(np.searchsorted(Fq, mids, side="left"), x.size - 1)]
    return float(np.sum(np.diff(levels) * np.abs(qp - qq) ** order) ** (1 / order))


def wp_lp(p, q, xs, ys, order: int = 2) -> float:
    """Exact W_p between finite laws by linear programming over couplings."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float).reshape(p.size, -1))
    ys = np.atleast_2d(np.asarray(ys, dtype=float).reshape(q.size, -1))
    cost = np.linalg.norm(xs[:, None, :] - ys[None, :, :], axis=-1) ** order
    n, m = p.size, q.size
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    if not res.success:
        raise NumericFailure(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0) ** (1 / order))


def w2_gaussian(a: GaussianDistribution, b: GaussianDistribution) -> float:
    """W_2 between Gaussians (Bures); reduces to |mean gap| for equal covariances."""
    dm = a.mean - b.mean
    if np.allclose(a.cov, b.cov, rtol=0, atol=1e-14):
        return float(np.linalg.norm(dm))
    ra = np.real(sqrtm(a.cov))
    cross = np.real(sqrtm(ra @ b.cov @ ra))
    bures = np.trace(a.cov + b.cov - 2 * cross)
    return float(np.sqrt(dm @ dm + max(bures, 0.0)))


def kernel_w2(first, second, coords=None) -> float:
    """W_2 between two one-step laws delta_x P and delta_x P_S.

    Accepts GaussianDistribution pairs, or probability vectors on a shared
    support (1-d coords use the quantile coupling, otherwise the LP).
    """
    if isinstance(first, GaussianDistribution) and isinstance(second, GaussianDistribution):
        return w2_gaussian(first, second)
    if coords is None:
        raise UnsupportedKernel("finite laws need state coordinates")
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1 or coords.shape[1] == 1:
        return wp_1d(first, second, coords.ravel(), 2)
    return wp_lp(first, second, coords, coords, 2)
