import json
import math

import numpy as np
import pytest

from poissongen.bounds import (
    BoundReport,
    FirstOrderInputs,
    SecondOrderInputs,
    default_grid,
    depoisson_gap_bound,
    ergodicity_certificate,
    exact_discrete_kl,
    exact_poissonized_kl,
    first_order_bound,
    first_order_inputs_gaussian,
    gaussian_local_kl,
    gradient_moments,
    laplace_shift_kl,
    mlsi_gen_bound,
    naive_chain_rule_bound,
    noisy_kl_bound,
    pac_bayes_bound,
    pac_bayes_coverage,
    pac_bayes_report,
    score_hessian_estimate,
    second_order_sgd_bound,
    sgld_bound,
    sgld_coefficient,
    sgld_coefficient_check,
    trapezoid_with_error,
)
from poissongen.entropy import expansion_term, integrate_against, kl
from poissongen.errors import (
    GridTooCoarse,
    InconsistentMoments,
    ParameterOutOfRange,
    SupportViolation,
    UnsoundCertificate,
)
from poissongen.learn import AlgorithmSpec, LearningProblem
from poissongen.lsi import LsiCertificate, jump_certificate
from poissongen.markov import (
    AffineGaussianKernel,
    FiniteKernel,
    GaussianDistribution,
    apply_distribution,
    flip_kernel,
    invariant_measure,
    jump_kernel,
    random_kernel,
)
from poissongen.poissonize import poissonize, poissonized_vector
from poissongen.transport import w2_gaussian

THREE_OVER_E = 3 * math.exp(-1)


# --- PAC-Bayes -----------------------------------------------------------------


def test_pac_bayes_examples():
    # zeta = 3/e gives log(3/zeta) = 1 but lies outside (0, 1): the formula is
    # checked through the assembled components, and the call itself is refused
    unit = {"n": 100, "s": 1.0}
    assert BoundReport(0.0, {"kl_term": 0.0, "confidence": 1.0}, unit).recombine() == pytest.approx(0.2, abs=1e-15)
    four = BoundReport(0.0, {"kl_term": 4.0, "confidence": 1.0}, unit).recombine()
    assert four == pytest.approx(2 * math.sqrt(0.05), abs=1e-15)
    assert four == pytest.approx(0.4472, abs=1e-4)
    with pytest.raises(ParameterOutOfRange):
        pac_bayes_bound(0.0, 100, 1.0, THREE_OVER_E)
    assert pac_bayes_bound(0.0, 100, 1.0, 0.1) == pytest.approx(0.2 * math.sqrt(math.log(30)), abs=1e-15)
    assert pac_bayes_bound(1.0, 10**12, 1.0, 0.1) < 1e-5
    with pytest.raises(ParameterOutOfRange):
        pac_bayes_bound(-0.1, 10, 1.0, 0.1)
    with pytest.raises(ParameterOutOfRange):
        pac_bayes_bound(0.1, 10, 1.0, 1.0)


def test_bound_report_recombines():
    r = pac_bayes_report(0.7, 50, 0.8, 0.05)
    assert abs(r.recombine() - r.bound_value) <= 1e-12
    d = json.loads(r.to_json())
    assert d["config_hash"] == r.hash and len(r.hash) == 12
    assert r.csv_row()["bound_value"] == r.bound_value
    kl_form = BoundReport(1.5, {"a": 2.0, "b": -0.5}, {}, form="kl")
    assert kl_form.recombine() == 1.5


def test_coverage_zero_loss_and_trivial_zeta():
    prob = LearningProblem("zero", 1, 20, (1.0,), s=1.0)
    spec = AlgorithmSpec(eta=0.1, lam=1.0, noise_scale=0.3)
    summary, rows = pac_bayes_coverage(prob, spec, 1.0, 5, [0.05, 0.999], seed=0)
    assert summary[0.05][0] == 0.0
    assert all(r["gap"] == 0.0 for r in rows)
    assert summary[0.999][0] <= 1.0 and summary[0.999][1] == 1.0


# --- local KL and chain rule ------------------------------------------------------


def test_laplace_shift_kl():
    assert laplace_shift_kl(0.0, 1.0) == 0.0
    # direct numeric integral of p log(p/q) for Laplace(1, 1) vs Laplace(0, 1)
    x = np.linspace(-40, 40, 800001)
    p = 0.5 * np.exp(-np.abs(x - 1))
    q = 0.5 * np.exp(-np.abs(x))
    assert laplace_shift_kl(1.0, 1.0) == pytest.approx(np.trapezoid(p * np.log(p / q), x), abs=1e-8)


def test_naive_chain_rule_cases(rng):
    P, PS = random_kernel(3, rng), random_kernel(3, rng)
    p0 = rng.dirichlet(np.ones(3))
    assert naive_chain_rule_bound(P, P, p0, 5) == pytest.approx(0.0, abs=1e-15)
    assert naive_chain_rule_bound(P, PS, p0, 5) >= exact_discrete_kl(P, PS, p0, 5)
    with pytest.raises(SupportViolation):
        naive_chain_rule_bound(FiniteKernel([[1.0, 0.0], [0.0, 1.0]]), flip_kernel(0.5), [0.5, 0.5], 2)


def test_naive_chain_rule_gaussian():
    sig2 = 0.09
    P = AffineGaussianKernel([[0.9]], [0.0], [[sig2]])
    PS = AffineGaussianKernel([[0.85]], [0.1], [[sig2]])
    p0 = GaussianDistribution([0.5], [[0.2]])
    total, mu = 0.0, p0
    for _ in range(4):
        val, _ = integrate_against(mu, lambda x: np.array([gaussian_local_kl(P, PS, xi) for xi in x]))
        total += val
        mu = apply_distribution(PS, mu)
    assert naive_chain_rule_bound(P, PS, p0, 4) == pytest.approx(total, abs=1e-8)
    assert gaussian_local_kl(P, PS, np.array([1.0])) == pytest.approx((0.05 - 0.1) ** 2 / (2 * sig2), abs=1e-14)


# --- noisy bound -------------------------------------------------------------------


def test_noisy_bound_same_kernel(rng):
    P = random_kernel(3, rng)
    p0, prior0 = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    r = noisy_kl_bound(P, P, p0, 2.0, prior0=prior0)
    assert r.components["local_kl_integral"] == 0.0
    assert r.components["jensen_term"] <= 0.0
    assert r.bound_value <= kl(p0, prior0) + 1e-15
    assert exact_poissonized_kl(P, P, p0, 2.0, prior0) <= r.bound_value + r.errors["trapezoid"] + r.errors["tail"]


def test_noisy_bound_random_instance(rng):
    P, PS = random_kernel(3, rng), random_kernel(3, rng)
    p0 = rng.dirichlet(np.ones(3))
    r = noisy_kl_bound(P, PS, p0, 2.0)
    exact = exact_poissonized_kl(P, PS, p0, 2.0)
    assert exact <= r.bound_value + r.errors["trapezoid"] + r.errors["tail"]
    assert r.bound_value <= r.flags["without_jensen"]
    assert abs(r.recombine() - r.bound_value) <= 1e-12


def test_noisy_bound_gaussian_local_kl():
    sig = 0.3
    P = AffineGaussianKernel([[0.9]], [0.0], [[sig**2]])
    PS = AffineGaussianKernel([[0.8]], [0.2], [[sig**2]])
    p0 = GaussianDistribution([0.0], [[1.0]])
    grid = default_grid(1.0)
    r = noisy_kl_bound(P, PS, p0, 1.0, grid)
    assert r.parameters["jensen_term"] == "omitted"
    # local KL per state is |(A_S - A) x + b_S|^2 / (2 sigma^2); integrate over each rho_t^S
    vals = []
    for t in grid:
        rho = poissonize(PS, p0, t)
        m, s2 = rho.mean()[0], rho.second_moment()[0, 0]
        vals.append(((-0.1) ** 2 * s2 + 2 * (-0.1) * 0.2 * m + 0.04) / (2 * sig**2))
    assert r.components["local_kl_integral"] == pytest.approx(np.trapezoid(vals, grid), abs=1e-12)


# --- modified-LSI bound -------------------------------------------------------------


def test_mlsi_bound_prior_only():
    cert = jump_certificate(0.5)
    t = default_grid(2.0)
    r = mlsi_gen_bound(np.zeros(t.size), t, cert, 0.8, 2.0, 100, 1.0, 0.1)
    expected = 2 * math.sqrt((math.exp(-1.0) * 0.8 + math.log(30)) / 100)
    assert r.bound_value == pytest.approx(expected, abs=1e-15)
    with pytest.raises(UnsoundCertificate):
        mlsi_gen_bound(np.zeros(t.size), t, LsiCertificate(0.5, "numeric-estimate"), 0.8, 2.0, 100, 1.0, 0.1)


def test_mlsi_bound_small_gamma_limit():
    t = default_grid(1.0)
    delta = 1 + t**2
    r = mlsi_gen_bound(delta, t, jump_certificate(1e-12), 0.0, 1.0, 10, 1.0, 0.1)
    assert r.components["expansion_integral"] == pytest.approx(np.trapezoid(delta, t), rel=1e-10)


def test_mlsi_bound_inner_dominates_exact_kl(rng):
    pi = rng.dirichlet(np.ones(3) * 3)
    theta = 0.6
    P = jump_kernel(pi, theta)
    PS = random_kernel(3, rng)
    p0 = rng.dirichlet(np.ones(3))
    T = 2.0
    t = default_grid(T, 256)
    delta = []
    for s in t:
        u, _ = poissonized_vector(PS, p0, s)
        delta.append(expansion_term(P, PS, u, u / pi)[0])
    r = mlsi_gen_bound(delta, t, jump_certificate(theta), kl(p0, pi), T, 100, 1.0, 0.1)
    uT, _ = poissonized_vector(PS, p0, T)
    assert kl(uT / uT.sum(), pi) <= r.inner + r.errors["trapezoid"] + 1e-10


# --- SGLD ---------------------------------------------------------------------------


def test_sgld_coefficient():
    assert sgld_coefficient(0.1, 1.0, 0.1) == pytest.approx(0.95, abs=1e-14)
    composed, direct, decay = sgld_coefficient_check(0.1, 1.0, 0.1)
    assert abs(composed - direct) <= 1e-12 and abs(decay - 0.1) <= 1e-12


def test_sgld_bound_zero_gradient_and_refusal():
    t = default_grid(1.0)
    assert sgld_bound(np.zeros(t.size), 0.1, 1.0, 0.3, 1.0, t).bound_value == 0.0
    with pytest.raises(ParameterOutOfRange):
        sgld_bound(np.ones(t.size), 0.1, 0.0, 0.3, 1.0, t)
    with pytest.raises(ParameterOutOfRange):
        sgld_bound(np.ones(t.size), 1.5, 1.0, 0.3, 1.0, t)


# --- first and second order ---------------------------------------------------------


def test_first_order_trivial():
    P = AffineGaussianKernel([[0.9]], [0.1], [[0.04]])
    inp = first_order_inputs_gaussian(P, P, GaussianDistribution([0.3], [[0.5]]), 1.0, 1.0)
    assert first_order_bound(inp) == 0.0
    assert first_order_bound(FirstOrderInputs(0.0, 2.0, 0.25, 3.0, 4.0)) == 1.0


def test_first_order_dominates_exact_delta():
    P = AffineGaussianKernel([[0.9]], [0.0], [[0.09]])
    PS = AffineGaussianKernel([[0.8]], [0.3], [[0.16]])
    rho = GaussianDistribution([0.4], [[0.3]])
    prior = GaussianDistribution([0.0], [[1.0]])
    m, s2, sp2 = 0.4, 0.3, 1.0
    # log v = log rho - log prior; |grad log v(y)| <= |1/sp2 - 1/s2| |y| + |m| / s2
    c1, c2 = abs(1 / sp2 - 1 / s2), abs(m) / s2

    def logv(x):
        return rho.logpdf(x) - prior.logpdf(x)

    a, _ = integrate_against(apply_distribution(PS, rho), logv)
    b, _ = integrate_against(apply_distribution(P, rho), logv)
    inp = first_order_inputs_gaussian(P, PS, rho, c1, c2)
    assert abs(a - b) <= first_order_bound(inp)
    # W2 between the one-step laws, averaged over rho, by quadrature
    w2sq, _ = integrate_against(rho, lambda x: np.array([w2_gaussian(PS.at(xi), P.at(xi)) ** 2 for xi in x]))
    assert inp.w2_sq_mean == pytest.approx(w2sq, abs=1e-8)


def _moments(T, n=9, g=1.0, x=1.0):
    ones = np.ones(n)
    return {"g1": g * ones, "g2": g * g * ones, "x1": x * ones, "x2": x * x * ones, "gx": g * x * ones}


def test_second_order_specializations():
    T, eta, lam = 1.0, 0.1, 0.5
    t = default_grid(T, 8)
    # beta = 0: Q = X |score0|
    inp = SecondOrderInputs(0.0, np.full(t.size, 2.0), _moments(T, g=1.5), 0.0)
    r = second_order_sgd_bound(inp, eta, lam, T, 100, 1.0, 0.1, t)
    expected = np.trapezoid(np.exp(-lam * eta * (T - t)) * eta * 2.0 * 1.5, t)
    assert r.components["polynomial_integral"] == pytest.approx(expected, rel=1e-12)
    # X = 0: Q = eta beta lam^2 Y^2
    inp = SecondOrderInputs(3.0, np.zeros(t.size), _moments(T, g=0.0, x=2.0), 0.0)
    r = second_order_sgd_bound(inp, eta, lam, T, 100, 1.0, 0.1, t)
    expected = np.trapezoid(np.exp(-lam * eta * (T - t)) * eta * eta * 3.0 * lam**2 * 4.0, t)
    assert r.components["polynomial_integral"] == pytest.approx(expected, rel=1e-12)
    assert "status" not in r.flags


def test_second_order_flags_and_moment_checks():
    t = default_grid(1.0, 8)
    inp = SecondOrderInputs(1.0, np.zeros(t.size), _moments(1.0), 0.0, min_eig=-1e-3)
    r = second_order_sgd_bound(inp, 0.1, 0.5, 1.0, 100, 1.0, 0.1, t)
    assert r.flags["status"] == "hypothesis-violated-on-grid"
    bad = _moments(1.0)
    bad["gx"] = bad["gx"] * 2
    with pytest.raises(InconsistentMoments):
        second_order_sgd_bound(SecondOrderInputs(1.0, np.zeros(t.size), bad, 0.0), 0.1, 0.5, 1.0, 100, 1.0, 0.1, t)


def test_score_hessian_estimate():
    prior = GaussianDistribution([0.0], [[2.0]])
    beta, s0, lo = score_hessian_estimate(prior, prior)
    assert beta == pytest.approx(0.0, abs=1e-12) and s0 == pytest.approx(0.0, abs=1e-12)
    assert lo == pytest.approx(0.0, abs=1e-12)
    single = GaussianDistribution([0.5], [[4.0]])
    beta, s0, lo = score_hessian_estimate(single, prior)
    assert beta == pytest.approx(1 / 2.0 - 1 / 4.0, abs=1e-6)
    assert lo == pytest.approx(beta, abs=1e-6)
    assert s0 == pytest.approx(0.5 / 4.0, abs=1e-12)
    with pytest.raises(GridTooCoarse):
        score_hessian_estimate(single, prior, {"step": 1.0})


def test_score_hessian_grid_refinement():
    K = AffineGaussianKernel([[0.5]], [1.0], [[0.5]])
    mix = poissonize(K, GaussianDistribution([-1.0], [[0.6]]), 0.7)
    prior = GaussianDistribution([0.0], [[1.0]])
    coarse = score_hessian_estimate(mix, prior)[0]
    sig_min = math.sqrt(0.5)
    fine = score_hessian_estimate(mix, prior, {"step": sig_min / 200})[0]
    assert abs(coarse - fine) <= 0.01 * abs(fine)


def test_gradient_moments_closed_form():
    dist = GaussianDistribution([0.0], [[1.0]])
    m = gradient_moments(dist, [[1.0]], [0.0])
    # g = x: E|x| = sqrt(2 / pi), E x^2 = 1, E|g||x| = 1
    assert m["g1"] == pytest.approx(math.sqrt(2 / math.pi), abs=1e-8)
    assert m["g2"] == 1.0 and m["x2"] == 1.0
    assert m["gx"] == pytest.approx(1.0, abs=1e-8)


# --- depoissonization -----------------------------------------------------------------


def test_depoisson_gap_bound_examples():
    assert depoisson_gap_bound("bounded", 1.0, 1.0, 0.5, 0) == 4.0
    assert depoisson_gap_bound("lipschitz", 2.0, 1.0, 0.5, 4) == pytest.approx(4 * math.exp(-2), abs=1e-15)
    assert depoisson_gap_bound("lipschitz", 2.0, 1.0, 0.5, 4) == pytest.approx(0.5413, abs=1e-4)
    near_one = depoisson_gap_bound("bounded", 1.0, 1.0, 1 - 1e-12, np.array([0, 1000]))
    assert near_one[1] == pytest.approx(near_one[0], rel=1e-8)
    with pytest.raises(ParameterOutOfRange):
        depoisson_gap_bound("bounded", 1.0, 1.0, 1.0, 3)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.7, 0.9])
def test_certificate_flip_chain(p):
    _, a = ergodicity_certificate(flip_kernel(p))
    assert a == pytest.approx(abs(1 - 2 * p), abs=1e-12)


def test_certificate_jump_kernel():
    pi = np.array([0.2, 0.5, 0.3])
    C, a = ergodicity_certificate(jump_kernel(pi))
    assert a == 0.0
    mu1 = np.eye(3)[0] @ jump_kernel(pi).matrix
    assert 0.5 * np.abs(mu1 - pi).sum() == pytest.approx(0.0, abs=1e-15)


def test_certificate_dominates_tv(rng):
    for _ in range(10):
        P = random_kernel(4, rng)
        C, a = ergodicity_certificate(P)
        pi = invariant_measure(P).probs
        Pk = np.eye(4)
        for k in range(101):
            tv = 0.5 * np.abs(Pk - pi).sum(axis=1).max()
            assert tv <= C * a**k + 1e-12
            Pk = Pk @ P.matrix


def test_trapezoid_error_estimate():
    t = np.linspace(0, 1, 65)
    val, err = trapezoid_with_error(t**2, t)
    assert abs(val - 1 / 3) <= 2 * err
