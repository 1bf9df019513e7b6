"""Poisson transforms, their inversion on circles, and residual decay fits.

The Poisson transform of a sequence g is

    G(z) = exp(-z) * sum_k g_k z^k / k!

and g_n is recovered from G on the circle |z| = n by Cauchy's formula.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import gammaln

from .errors import GrowthBoundViolation, NotEntire, ParameterOutOfRange

RESIDUAL_FLOOR = 1e-14
IMAG_TOL = 1e-8


@dataclass(frozen=True)
class GrowthBound:
    """|g_k| <= A * r^k * (k + 1)^p for every k."""

    A: float = 1.0
    r: float = 1.0
    p: float = 0.0

    def __post_init__(self):
        if not (self.A > 0 and self.r >= 0):
            raise ParameterOutOfRange("growth bound needs A > 0 and r >= 0")

    def log_bound(self, k: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return math.log(self.A) + k * np.log(self.r) + self.p * np.log1p(k)


Sequence = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, list, tuple]


def _terms_needed(growth: GrowthBound, z: complex, tol: float) -> int:
    """Smallest K with the bounded tail sum_{k > K} |term_k| <= tol."""
    mod = abs(z)
    if mod == 0 or growth.r == 0:
        return 1
    shift = -z.real
    k = np.arange(0, 64)
    K = 0
    while True:
        lb = growth.log_bound(k) + k * math.log(mod) - gammaln(k + 1) + shift
        # successive bound ratio r|z| ((k+2)/(k+1))^p / (k+1) <= 1/2 makes the tail at most twice the next term
        ratio = growth.r * mod * ((k + 2) / (k + 1)) ** growth.p / (k + 1)
        ok = (ratio <= 0.5) & (lb + math.log(2) <= math.log(tol))
        if ok.any():
            return int(k[np.argmax(ok)])
        K += 64
        k = np.arange(K, K + 64)
        if K > 10_000_000:
            raise ParameterOutOfRange("transform series does not reach the tolerance")


def _sequence_values(seq: Sequence, K: int) -> np.ndarray:
    if callable(seq):
        return np.asarray(seq(np.arange(K + 1)), dtype=complex)
    g = np.asarray(seq, dtype=complex)
    if g.size < K + 1:
        raise ParameterOutOfRange(f"sequence has {g.size} terms; {K + 1} are needed for the requested tolerance")
    return g[: K + 1]


def check_growth(seq: Sequence, growth: GrowthBound, K: int):
    g = _sequence_values(seq, K)
    k = np.arange(g.size)
    with np.errstate(divide="ignore"):
        lg = np.log(np.abs(g))
    bad = lg > growth.log_bound(k) + 1e-12
    if bad.any():
        j = int(np.argmax(bad))
        raise GrowthBoundViolation(f"|g_{j}| = {abs(g[j]):.6g} exceeds the declared growth bound")
    return g


def transform_eval(seq: Sequence, z, tol: float = 1e-14, growth: Optional[GrowthBound] = None) -> complex:
    """exp(-z) sum_k g_k z^k / k! with a certified truncation tail <= tol.

    Each term is formed as exp(log|g_k| + k log z - log k! - z), so large
    |z| never overflows; terms are summed with compensated summation.
    """
    growth = GrowthBound() if growth is None else growth
    z = complex(z)
    K = _terms_needed(growth, z, tol)
    g = check_growth(seq, growth, K)
    if z == 0:
        return complex(g[0])
    k = np.arange(K + 1)
    nz = g != 0
    logs = np.log(g[nz]) + k[nz] * np.log(z) - gammaln(k[nz] + 1) - z
    terms = np.exp(logs)
    out = complex(math.fsum(terms.real), math.fsum(terms.imag))
    if z.imag == 0 and not np.any(g.imag):
        out = complex(out.real, 0.0)
    return out


def transform_function(seq: Sequence, tol: float = 1e-14, growth: Optional[GrowthBound] = None):
    """Vectorized z -> transform_eval(seq, z)."""

    def G(z):
        return np.vectorize(lambda w: transform_eval(seq, w, tol, growth), otypes=[complex])(z)

    return G


def cauchy_reconstruct(G: Callable, n: int, quad_points: Optional[int] = None, imag_tol: float = IMAG_TOL) -> float:
    """g_n = n! / (2 pi n^n) * int G(n e^{it}) exp(n e^{it}) e^{-int} dt by the periodic trapezoid rule.

    A residual imaginary part above imag_tol (relative to max(1, |g_n|))
    means G is not entire or the rule is too coarse.
    """
    if n < 0 or int(n) != n:
        raise ParameterOutOfRange("n must be a nonnegative integer")
    n = int(n)
    if n == 0:
        val = complex(np.asarray(G(np.array([0j])))[0])
        if abs(val.imag) > imag_tol * max(1.0, abs(val.real)):
            raise NotEntire(f"imaginary residue {val.imag:.3g} at the origin")
        return val.real
    m = 8 * n + 64 if quad_points is None else int(quad_points)
    t = -math.pi + 2 * math.pi * np.arange(m) / m
    z = n * np.exp(1j * t)
    try:
        Gz = np.asarray(G(z), dtype=complex)
        if Gz.shape != z.shape:
            raise ValueError
    except (TypeError, ValueError):
        Gz = np.array([complex(G(w)) for w in z])
    log_scale = gammaln(n + 1) - n * math.log(n)
    vals = Gz * np.exp(log_scale + z - 1j * n * t)
    re = math.fsum(vals.real) / m
    im = math.fsum(vals.imag) / m
    if not (math.isfinite(re) and math.isfinite(im)):
        raise NotEntire("non-finite values on the contour")
    if abs(im) > imag_tol * max(1.0, abs(re)):
        raise NotEntire(f"imaginary residue {im:.3g} exceeds {imag_tol:g}: G is not entire or quad_points is too small")
    return re


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r2: float
    k_range: tuple
    status: str
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "k_range": list(self.k_range), "status": self.status}


def residuals(seq: Sequence, ks, tol: float = 1e-14, growth: Optional[GrowthBound] = None) -> np.ndarray:
    """r_k = g_k - G(k)."""
    ks = np.asarray(ks, dtype=int)
    g = _sequence_values(seq, int(ks.max())).real if callable(seq) else np.asarray(seq, dtype=float)
    return np.array([g[k] - transform_eval(seq, float(k), tol, growth).real for k in ks])


def residual_decay_fit(seq: Sequence, k_range, tol: float = 1e-14, growth: Optional[GrowthBound] = None) -> DecayFit:
    """Least-squares slope of log|r_k| against log k over k_range."""
    ks = np.asarray(list(k_range), dtype=int)
    if ks.size < 8:
        raise ParameterOutOfRange("k_range needs at least 8 points")
    if np.any(ks < 1):
        raise ParameterOutOfRange("k_range must be positive (log k is fitted)")
    r = residuals(seq, ks, tol, growth)
    keep = np.abs(r) > RESIDUAL_FLOOR
    span = (int(ks.min()), int(ks.max()))
    if keep.sum() < max(2, ks.size // 2):
        return DecayFit(math.nan, math.nan, math.nan, span, "residual at floor", r)
    x, y = np.log(ks[keep]), np.log(np.abs(r[keep]))
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(intercept), r2, span, "ok", r)


def read_sequence_csv(path) -> np.ndarray:
    """Load g_k from a CSV with columns k, g_k (k must run 0, 1, 2, ...)."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    ks = np.array([int(float(r[0])) for r in rows])
    if not np.array_equal(ks, np.arange(ks.size)):
        raise ParameterOutOfRange("sequence CSV must list k = 0, 1, 2, ... in order")
    return np.array([float(r[1]) for r in rows])


def write_sequence_csv(path, g):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "g_k"])
        for k, v in enumerate(np.asarray(g, dtype=float)):
            w.writerow([k, f"{v:.17g}"])


def write_fit_json(path, fit: DecayFit):
    with open(path, "w") as fh:
        json.dump(fit.to_dict(), fh, indent=2, sort_keys=True)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
