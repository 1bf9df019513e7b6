"""Vectorized adaptive Simpson (1-d) and tensor Gauss-Legendre (2-d) rules."""

from __future__ import annotations

import numpy as np

from .errors import NumericFailure


def adaptive_simpson(f, breakpoints, tol: float = 1e-9, max_depth: int = 50, max_intervals: int = 2_000_000):
    """Integrate a vectorized f over [min(breakpoints), max(breakpoints)].

    Every interval between consecutive breakpoints starts as a Simpson
    panel; panels are halved until the Richardson-corrected local error
    meets its share of `tol`. Returns (value, estimated_abs_error).
    """
    bp = np.unique(np.asarray(breakpoints, dtype=float))
    if bp.size < 2:
        return 0.0, 0.0
    total = bp[-1] - bp[0]
    a, b = bp[:-1], bp[1:]
    fa, fb = f(a), f(b)
    m = (a + b) / 2
    fm = f(m)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    value, err = 0.0, 0.0
    for _ in range(max_depth):
        lm, rm = (a + m) / 2, (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        diff = left + right - whole
        local_tol = tol * (b - a) / total
        done = np.abs(diff) <= 15 * local_tol
        value += np.sum((left + right + diff / 15)[done])
        err += np.sum(np.abs(diff[done])) / 15
        keep = ~done
        if not keep.any():
            return float(value), float(err)
        a_k, m_k, b_k = a[keep], m[keep], b[keep]
        a = np.concatenate([a_k, m_k])
        b = np.concatenate([m_k, b_k])
        m = np.concatenate([lm[keep], rm[keep]])
        fa = np.concatenate([fa[keep], fm[keep]])
        fb = np.concatenate([fm[keep], fb[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        if a.size > max_intervals:
            break
    raise NumericFailure(f"adaptive Simpson did not reach tol={tol:g}")


def gauss_legendre_2d(f, box, order: int = 96):
    """Tensor Gauss-Legendre over box = ((x0, x1), (y0, y1)); error from order halving."""

    def rule(n):
        x, w = np.polynomial.legendre.leggauss(n)
        (x0, x1), (y0, y1) = box
        xs = (x1 - x0) / 2 * x + (x1 + x0) / 2
        ys = (y1 - y0) / 2 * x + (y1 + y0) / 2
        wx = w * (x1 - x0) / 2
        wy = w * (y1 - y0) / 2
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        return float(np.sum(np.outer(wx, wy).ravel() * f(pts)))

    fine = rule(order)
    coarse = rule(order // 2)
    return fine, abs(fine - coarse)
