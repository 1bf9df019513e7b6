"""Acceptance gate: the ten primary criteria at their stated tolerances.

Every test records one PASS/FAIL line; the lines are printed together in
the pytest terminal summary (see conftest.py) and also when this file is
run as a script.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.linalg import expm

from poissongen.bounds import (
    ergodicity_certificate,
    exact_poissonized_kl,
    noisy_kl_bound,
    default_grid,
    score_hessian_estimate,
    sgld_coefficient_check,
)
from poissongen.config import resolve
from poissongen.depoisson import GrowthBound, cauchy_reconstruct, transform_function
from poissongen.entropy import dirichlet_bregman_identity, entropy_flow_check
from poissongen.experiments import run_experiment
from poissongen.learn import FiniteSurrogate, depoisson_gap_compare
from poissongen.lsi import clsi_strongly_convex, lsi_decay_check, ou_certificate, ou_representation
from poissongen.markov import (
    DiscreteDistribution,
    FiniteKernel,
    GaussianDistribution,
    flip_kernel,
    ou_prior,
    random_kernel,
    random_positive_distribution,
    random_reversible_kernel,
)
from poissongen.poissonize import poissonize, sample_poissonized_finite

RESULTS = []


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def test_01_entropy_flow_identity():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, worst_fd = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(2, 11))
        P, P_S = random_kernel(n, rng), random_kernel(n, rng)
        p0 = random_positive_distribution(n, rng)
        for r in entropy_flow_check(P, P_S, p0, [0.5, 1.0, 2.0]):
            worst = max(worst, r.residual)
            worst_fd = max(worst_fd, r.residual_fd)
    elapsed = time.perf_counter() - start
    record(1, "entropy-flow identity", worst <= 1e-8 and worst_fd <= 1e-4 and elapsed < 30,
           f"analytic {worst:.2e} <= 1e-8, finite-difference {worst_fd:.2e} <= 1e-4, {elapsed:.1f}s < 30s")


def test_02_dirichlet_bregman_identity():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 11))
        P, pi = random_reversible_kernel(n, rng)
        v = rng.random(n) * 5 + 0.01
        worst = max(worst, dirichlet_bregman_identity(P, pi, v)[2])
    elapsed = time.perf_counter() - start
    record(2, "Dirichlet/Bregman identity", worst <= 1e-10 and elapsed < 5,
           f"residual {worst:.2e} <= 1e-10, {elapsed:.2f}s < 5s")


def test_03_poissonization():
    rng = np.random.default_rng(303)
    worst = -math.inf
    for _ in range(100):
        n = int(rng.integers(2, 11))
        P = random_kernel(n, rng)
        p0 = rng.dirichlet(np.ones(n))
        for t in (0.1, 1.0, 5.0):
            m = poissonize(P, DiscreteDistribution(p0), t)
            err = np.abs(m.flatten() - p0 @ expm(t * (P.matrix - np.eye(n)))).sum()
            worst = max(worst, err - m.weights.tail_mass)
    N = 1_000_000
    K = flip_kernel(0.3)
    states = sample_poissonized_finite(K, [1.0, 0.0], 1.0, N, np.random.default_rng(304))
    exact = poissonize(K, DiscreteDistribution([1.0, 0.0]), 1.0).flatten()[1]
    z = abs(np.mean(states == 1) - exact) / math.sqrt(exact * (1 - exact) / N)
    record(3, "Poissonization", worst <= 1e-10 and z <= 3,
           f"L1 error minus tail {worst:.2e} <= 1e-10, sampler {z:.2f} SE <= 3")


def test_04_ou_modified_lsi():
    rng = np.random.default_rng(404)
    closure = 0.0
    for _ in range(100):
        g, s = rng.uniform(0.01, 0.99), rng.uniform(0.05, 5.0)
        closure = max(closure, abs(clsi_strongly_convex(*ou_representation(g, s)) - g))
    K, pi = ou_prior(0.5, 1.0)
    gamma = ou_certificate(0.5, 1.0).gamma
    margins, _ = lsi_decay_check(K, pi, GaussianDistribution([3.0], [[0.25]]), gamma, [0.5, 1.0, 2.0, 4.0])
    record(4, "OU modified-LSI constant", closure <= 1e-12 and margins.min() >= -1e-6,
           f"closure {closure:.1e} <= 1e-12, min decay margin {margins.min():.3e} >= -1e-6")


def test_05_sgld_soundness():
    start = time.perf_counter()
    worst, worst_coef = math.inf, 0.0
    for eta, lam, sigma in itertools.product((0.05, 0.1, 0.3), (0.1, 0.5, 1.0), (0.1, 0.3, 1.0)):
        composed, direct, decay = sgld_coefficient_check(eta, lam, sigma)
        worst_coef = max(worst_coef, abs(composed - direct), abs(decay - lam * eta))
        cfg = {"experiment": "sgld-bound", "seed": 5,
               "params": {"problem": {"loss": "quadratic", "d": 1, "n": 50, "w_star": [1.0], "noise_std": 0.5,
                                      "s": 1.0},
                          "algorithm": {"eta": eta, "lambda": lam, "noise": "gaussian", "noise_scale": sigma},
                          "T_values": [1.0, 2.0, 5.0]}}
        res = run_experiment(resolve(cfg)[0])
        assert res.summary["mode"] == "exact"
        worst = min(worst, min(r["margin"] for r in res.rows))
    elapsed = time.perf_counter() - start
    record(5, "SGLD bound soundness", worst >= -1e-6 and worst_coef <= 1e-12 and elapsed < 120,
           f"min margin {worst:.3e} >= -1e-6 over 81 cases, coefficient composition {worst_coef:.1e} <= 1e-12, "
           f"{elapsed:.1f}s < 120s")


def test_06_noisy_bound():
    rng = np.random.default_rng(606)
    worst, jensen_ok = math.inf, True
    for _ in range(50):
        n = int(rng.integers(2, 6))
        P, P_S = random_kernel(n, rng), random_kernel(n, rng)
        p0 = random_positive_distribution(n, rng).probs
        for T in (1.0, 2.0, 5.0):
            rep = noisy_kl_bound(P, P_S, p0, T, default_grid(T))
            exact = exact_poissonized_kl(P, P_S, p0, T)
            slack = rep.errors["trapezoid"] + rep.errors["tail"]
            worst = min(worst, rep.bound_value + slack - exact)
            jensen_ok &= rep.bound_value <= rep.flags["without_jensen"]
    record(6, "noisy-algorithm KL bound", worst >= 0 and jensen_ok,
           f"min (bound + error estimate - exact KL) {worst:.3e} >= 0, Jensen variant never larger: {jensen_ok}")


def test_07_pac_bayes_coverage():
    start = time.perf_counter()
    cfg = {"experiment": "pacbayes-coverage", "seed": 7,
           "params": {"problem": {"loss": "quadratic", "d": 1, "n": 50, "w_star": [1.0], "noise_std": 0.5,
                                  "s": 1.0},
                      "algorithm": {"eta": 0.1, "lambda": 1.0, "noise": "gaussian", "noise_scale": 0.3},
                      "t": 2.0, "datasets": 500, "zetas": [0.05, 0.1]}}
    res = run_experiment(resolve(cfg)[0], threads=4)
    elapsed = time.perf_counter() - start
    parts = [f"zeta={k[5:]}: {v['violation_fraction']:.3f} <= {v['allowed']:.3f}" for k, v in res.summary.items()]
    ok = all(v["violation_fraction"] <= v["allowed"] for v in res.summary.values())
    record(7, "PAC-Bayes coverage", ok and elapsed < 300, ", ".join(parts) + f", {elapsed:.1f}s < 300s")


@pytest.mark.parametrize("mode", ["bounded", "lipschitz"])
def test_08_depoisson_gap(mode):
    rng = np.random.default_rng(808 if mode == "bounded" else 809)
    worst = math.inf
    for _ in range(20):
        n = int(rng.integers(2, 6))
        coords = np.sort(rng.normal(size=n))[:, None]
        P = random_kernel(n, rng, coords=coords)
        if mode == "bounded":
            gap = rng.uniform(-1, 1, n)
        else:
            gap = np.cumsum(np.concatenate([[0.0], np.diff(coords[:, 0]) * rng.uniform(-1, 1, n - 1)]))
        p0 = np.eye(n)[int(rng.integers(n))]
        sur = FiniteSurrogate(P, gap, p0, mode=mode, B=1.0, L=1.0)
        cert = ergodicity_certificate(P, metric="tv" if mode == "bounded" else "w1", k_cert=150)
        out = depoisson_gap_compare(sur, np.arange(51), certificate=cert)
        worst = min(worst, float(np.min(out["bound"] - out["gap"])))
    factor = "4BC" if mode == "bounded" else "2LC"
    record(8, f"depoissonization gap ({mode})", worst >= -1e-10,
           f"min ({factor} e^(-(1-a)k) - gap) over k <= 50 is {worst:.3e} >= -1e-10")


def test_09_cauchy_roundtrip():
    seqs = {
        "constant": (lambda k: np.full(np.shape(k), 2.0), GrowthBound(2.0), lambda n: 2.0),
        "k": (lambda k: np.asarray(k, dtype=float), GrowthBound(1.0, 1.0, 1.0), lambda n: float(n)),
        "0.5^k": (lambda k: 0.5 ** np.asarray(k, dtype=float), GrowthBound(1.0, 0.5), lambda n: 0.5 ** n),
    }
    worst = 0.0
    for g, growth, exact in seqs.values():
        G = transform_function(g, growth=growth)
        for n in range(1, 21):
            worst = max(worst, abs(cauchy_reconstruct(G, n) - exact(n)) / abs(exact(n)))
    record(9, "Cauchy roundtrip", worst <= 1e-8, f"worst relative error {worst:.2e} <= 1e-8 for n <= 20")


def test_10_second_order_pipeline():
    cfg = {"experiment": "second-order-bound", "seed": 10, "params": {"T_values": [1.0, 2.0]}}
    res = run_experiment(resolve(cfg)[0])
    dominated = all(r["margin"] >= -(r["trapezoid_error"] + r["quadrature_error"]) for r in res.rows)
    hypothesis = all(r["status"] == "hypothesis-holds-on-grid" for r in res.rows)
    prior = GaussianDistribution([0.0], [[1.5]])
    single = GaussianDistribution([0.7], [[3.0]])
    beta, _, lo = score_hessian_estimate(single, prior)
    hess_err = max(abs(beta - (1 / 1.5 - 1 / 3.0)), abs(lo - (1 / 1.5 - 1 / 3.0)))
    margins = ", ".join(f"T={r['T']:g}: {r['inner']:.4f} >= {r['exact_kl']:.4f}" for r in res.rows)
    record(10, "second-order pipeline", dominated and hypothesis and hess_err <= 1e-6,
           f"inner majorant vs exact KL {margins}; Hessian on grid nonnegative: {hypothesis}; "
           f"closed-form Hessian error {hess_err:.1e} <= 1e-6")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
