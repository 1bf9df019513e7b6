"""Runners behind the command line: one function per experiment kind.

Each runner takes the resolved params, tolerances, seed and worker count
and returns an ExperimentResult with the CSV rows, a summary, error
estimates and a pass flag.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import (
    SecondOrderInputs,
    default_grid,
    exact_poissonized_kl,
    gradient_moments,
    noisy_kl_bound,
    pac_bayes_bound,
    pac_bayes_coverage,
    score_hessian_estimate,
    second_order_sgd_bound,
    sgld_bound,
)
from .depoisson import GrowthBound, cauchy_reconstruct, read_sequence_csv, residual_decay_fit, transform_function
from .entropy import entropy_flow_check, kl_gaussian, kl_with_error
from .errors import ParameterOutOfRange, UnsupportedKernel
from .learn import (
    AlgorithmSpec,
    FiniteSurrogate,
    LearningProblem,
    build_posterior_kernel,
    build_prior_kernel,
    depoisson_gap_compare,
    quadratic_coefficients,
    run_ensemble,
    sample_dataset,
)
from .lsi import lsi_decay_check, mlsi_estimate, ou_certificate
from .markov import (
    AffineGaussianKernel,
    FiniteKernel,
    GaussianDistribution,
    invariant_measure,
    random_kernel,
    random_positive_distribution,
)
from .poissonize import poissonize


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    errors: dict = field(default_factory=dict)
    ok: bool = True
    message: str = ""


def make_problem(cfg: dict) -> LearningProblem:
    return LearningProblem(loss=cfg["loss"], d=cfg["d"], n=cfg["n"], w_star=tuple(float(w) for w in cfg["w_star"]),
                           noise_std=cfg["noise_std"], B=cfg["B"], s=cfg.get("s"), holdout_seed=cfg["holdout_seed"])


def make_spec(cfg: dict, T: float = 1.0) -> AlgorithmSpec:
    return AlgorithmSpec(eta=cfg["eta"], lam=cfg["lambda"], noise=cfg["noise"], noise_scale=cfg["noise_scale"],
                         batch_size=cfg.get("batch_size"), T=T, prior_sigma=cfg.get("prior_sigma"))


def _dataset_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))


# --- finite-chain experiments -----------------------------------------------------


def run_flow_check(p, tol, seed, threads):
    t_grid = [float(t) for t in p["t_grid"]]
    instances = []
    if "P" in p:
        P = FiniteKernel(p["P"])
        P_S = FiniteKernel(p.get("P_S", p["P"]))
        p0 = np.asarray(p["p0"], dtype=float) if "p0" in p else np.full(P.n, 1.0 / P.n)
        prior0 = np.asarray(p["prior0"], dtype=float) if "prior0" in p else p0
        instances.append((P, P_S, p0, prior0))
    else:
        rng = np.random.default_rng(seed)
        r = p["random"]
        for _ in range(r.get("count", 10)):
            n = r.get("n", 4)
            conc = r.get("concentration", 1.0)
            P, P_S = random_kernel(n, rng, conc), random_kernel(n, rng, conc)
            p0 = random_positive_distribution(n, rng).probs
            instances.append((P, P_S, p0, p0))
    rows = []
    for i, (P, P_S, p0, prior0) in enumerate(instances):
        for rep in entropy_flow_check(P, P_S, p0, t_grid, tol["tail_tol"], prior0=prior0):
            rows.append({"instance": i, **rep.as_row()})
    max_res = max(r["residual"] for r in rows)
    max_fd = max(r["residual_fd"] for r in rows)
    ok = max_res <= tol["flow_residual"] and max_fd <= tol["fd_residual"]
    return ExperimentResult(rows, {"max_residual": max_res, "max_residual_fd": max_fd, "instances": len(instances)},
                            {"tail": tol["tail_tol"]}, ok,
                            "" if ok else "entropy-flow residual above tolerance")


def run_lsi_estimate(p, tol, seed, threads):
    if "ou" in p:
        cert = ou_certificate(p["ou"]["gamma"], p["ou"]["sigma"])
        row = {"gamma": cert.gamma, "provenance": cert.provenance, **cert.details}
        return ExperimentResult([row], cert.to_dict())
    if "P" not in p:
        raise ParameterOutOfRange("lsi-estimate needs either P or ou")
    P = FiniteKernel(p["P"])
    pi = np.asarray(p["pi"], dtype=float) if "pi" in p else invariant_measure(P).probs
    cert = mlsi_estimate(P, pi, restarts=p["restarts"], seed=seed, grid=p["grid"])
    row = {"gamma": cert.gamma, "provenance": cert.provenance, "descent": cert.details["descent"],
           "grid": cert.details.get("grid", math.nan), "spectral_gap": cert.details["spectral_gap"]}
    return ExperimentResult([row], {**cert.to_dict(), "note": "numeric estimates bound the optimal constant from above"})


def run_lsi_decay(p, tol, seed, threads):
    cert = ou_certificate(p["gamma"], p["sigma"])
    P, pi = build_prior_kernel(AlgorithmSpec(eta=1.0, lam=p["gamma"], noise_scale=p["sigma"]), 1)
    p0 = GaussianDistribution(np.array([p["p0"].get("mean", 0.0)]), np.array([[p["p0"]["var"]]]))
    t_grid = [float(t) for t in p["t_grid"]]
    margins, err = lsi_decay_check(P, pi, p0, cert.gamma, t_grid, tol["tail_tol"], tol["quad_tol"])
    k0 = kl_gaussian(p0, pi)
    rows = [{"t": t, "decay_bound": math.exp(-cert.gamma * t) * k0, "kl": math.exp(-cert.gamma * t) * k0 - m,
             "margin": m} for t, m in zip(t_grid, margins)]
    ok = bool(np.all(margins >= -err))
    return ExperimentResult(rows, {"gamma": cert.gamma, "min_margin": float(margins.min()), "K0": k0},
                            {"quadrature": err}, ok, "" if ok else "KL decay violated beyond quadrature error")


def run_noisy_bound(p, tol, seed, threads):
    instances = []
    if "P" in p:
        P = FiniteKernel(p["P"])
        P_S = FiniteKernel(p.get("P_S", p["P"]))
        p0 = np.asarray(p["p0"], dtype=float) if "p0" in p else np.full(P.n, 1.0 / P.n)
        prior0 = np.asarray(p["prior0"], dtype=float) if "prior0" in p else p0
        instances.append((P, P_S, p0, prior0))
    else:
        rng = np.random.default_rng(seed)
        r = p["random"]
        for _ in range(r.get("count", 50)):
            n = r.get("n", 3)
            conc = r.get("concentration", 1.0)
            P, P_S = random_kernel(n, rng, conc), random_kernel(n, rng, conc)
            p0 = random_positive_distribution(n, rng).probs
            instances.append((P, P_S, p0, p0))
    rows = []
    ok = True
    for i, (P, P_S, p0, prior0) in enumerate(instances):
        for T in p["T_values"]:
            rep = noisy_kl_bound(P, P_S, p0, T, default_grid(T, p["grid_points"] - 1), prior0, tol["tail_tol"])
            exact = exact_poissonized_kl(P, P_S, p0, T, prior0, tol["tail_tol"])
            err = rep.errors["trapezoid"] + rep.errors["tail"]
            without = rep.flags["without_jensen"]
            ok &= rep.bound_value + err >= exact and rep.bound_value <= without
            rows.append({"instance": i, "T": T, "bound": rep.bound_value, "without_jensen": without,
                         "exact_kl": exact, "margin": rep.bound_value - exact, "error_estimate": err})
    return ExperimentResult(rows, {"instances": len(instances), "min_margin": min(r["margin"] for r in rows)},
                            {"max_error_estimate": max(r["error_estimate"] for r in rows)}, bool(ok),
                            "" if ok else "bound below exact KL beyond its error estimate")


def run_depoisson_gap(p, tol, seed, threads):
    coords = None if "coords" not in p else np.asarray(p["coords"], dtype=float)[:, None]
    kernel = FiniteKernel(p["P"], coords)
    sur = FiniteSurrogate(kernel, p["gap"], p["p0"], p["mode"], p["B"], p["L"])
    res = depoisson_gap_compare(sur, range(p["k_max"] + 1))
    rows = [{"k": int(k), "gap": g, "bound": b, "slack": b - g} for k, g, b in zip(res["k"], res["gap"], res["bound"])]
    ok = all(r["slack"] >= -1e-10 for r in rows)
    return ExperimentResult(rows, {"C": res["C"], "a": res["a"], "mode": p["mode"],
                                   "min_slack": min(r["slack"] for r in rows)}, {}, ok,
                            "" if ok else "gap exceeds the ergodicity bound")


def _sequence(p):
    s = p["sequence"]
    kind = s["kind"]
    if kind == "constant":
        c = float(s.get("value", 1.0))
        return (lambda k: np.full(np.shape(k), c)), (lambda n: c), GrowthBound(max(abs(c), 1e-300), 1.0, 0.0)
    if kind == "linear":
        return (lambda k: np.asarray(k, dtype=float)), (lambda n: float(n)), GrowthBound(1.0, 1.0, 1.0)
    if kind == "geometric":
        a = float(s.get("a", 0.5))
        return (lambda k: a ** np.asarray(k, dtype=float)), (lambda n: a**n), GrowthBound(1.0, abs(a), 0.0)
    if kind == "harmonic":
        return (lambda k: 1.0 / (np.asarray(k, dtype=float) + 1)), (lambda n: 1.0 / (n + 1)), GrowthBound()
    g = read_sequence_csv(s["path"])
    return g, (lambda n: float(g[n])), None


def run_poisson_transform(p, tol, seed, threads):
    seq, exact, growth = _sequence(p)
    if "growth" in p:
        growth = GrowthBound(**p["growth"])
    if growth is None:
        raise ParameterOutOfRange("a CSV sequence needs a declared growth bound")
    G = transform_function(seq, growth=growth)
    rows = []
    for n in p["n_values"]:
        val = cauchy_reconstruct(G, n, p.get("quad_points"), tol["imag_tol"])
        ex = exact(n)
        rows.append({"n": n, "g_n": ex, "reconstructed": val, "rel_error": abs(val - ex) / max(abs(ex), 1e-300)})
    lo, hi = p["fit_range"]
    fit = residual_decay_fit(seq, range(lo, hi + 1), growth=growth)
    max_rel = max(r["rel_error"] for r in rows)
    return ExperimentResult(rows, {"fit": fit.to_dict(), "max_rel_error": max_rel},
                            {"imag_tol": tol["imag_tol"]}, True)


# --- learning experiments ---------------------------------------------------------


def run_sgld_bound(p, tol, seed, threads):
    problem = make_problem(p["problem"])
    spec = make_spec(p["algorithm"])
    spec.require_sgld_preconditions()
    if spec.noise != "gaussian":
        raise ParameterOutOfRange("the SGLD bound needs Gaussian noise")
    data = sample_dataset(problem, _dataset_rng(seed))
    P_S = build_posterior_kernel(problem, data, spec)
    P, pi = build_prior_kernel(spec, problem.d, require_invariant=True)
    if abs(spec.prior_scale - spec.noise_scale) > 0:
        raise ParameterOutOfRange("the SGLD bound uses the prior with the algorithm's own noise scale")
    exact_mode = isinstance(P_S, AffineGaussianKernel)
    rows, errs = [], {}
    for T in p["T_values"]:
        t_grid = default_grid(T, p["grid_points"] - 1)
        if exact_mode:
            H, c, _ = quadratic_coefficients(data)
            g2 = []
            for t in t_grid:
                rho = poissonize(P_S, pi, float(t), tol["tail_tol"])
                mean, second = rho.mean(), rho.second_moment()
                g2.append(float(np.trace(H.T @ H @ second) - 2 * c @ H @ mean + c @ c))
            mc_se = 0.0
        else:
            ens = run_ensemble(problem, data, dataclasses.replace(spec, T=float(T)), p["ensemble_paths"], seed,
                               p0=pi, threads=threads)
            stats = [ens.at_time(ens.grad_norm_sq, float(t)) for t in t_grid]
            g2 = [s[0] for s in stats]
            mc_se = max(s[1] for s in stats)
        rep = sgld_bound(g2, spec.eta, spec.lam, spec.noise_scale, T, t_grid)
        exact, qerr = math.nan, 0.0
        if exact_mode and problem.d <= 2:
            exact, qerr = kl_with_error(poissonize(P_S, pi, T, tol["tail_tol"]), pi, tol["quad_tol"])
        row = {"T": T, "bound": rep.bound_value, "exact_kl": exact, "margin": rep.bound_value - exact,
               "coefficient": rep.parameters["coefficient"], "trapezoid_error": rep.errors["trapezoid"],
               "quadrature_error": qerr, "mc_standard_error": mc_se}
        if problem.s is not None:
            row["pac_bayes_bound"] = pac_bayes_bound(rep.bound_value, problem.n, problem.subgaussian, p["zeta"])
        rows.append(row)
    ok = all(not (r["margin"] < -1e-6) for r in rows)
    errs = {"max_trapezoid_error": max(r["trapezoid_error"] for r in rows),
            "max_quadrature_error": max(r["quadrature_error"] for r in rows)}
    margins = [r["margin"] for r in rows if math.isfinite(r["margin"])]
    return ExperimentResult(rows, {"mode": "exact" if exact_mode else "monte-carlo",
                                   "min_margin": min(margins) if margins else None}, errs, ok,
                            "" if ok else "exact KL exceeds the SGLD bound")


def second_order_inputs(P_S, p0, prior, H, c, t_grid, tail_tol, quad_tol, grid_step=None):
    """Moments, score at the origin and grid Hessian bounds along t_grid for the exact Gaussian pipeline."""
    names = ("g1", "g2", "x1", "x2", "gx")
    mom = {k: [] for k in names}
    score0, betas, mins, qerr = [], [], [], 0.0
    for t in t_grid:
        rho = poissonize(P_S, p0, float(t), tail_tol)
        m = gradient_moments(rho, H, c, quad_tol)
        for k in names:
            mom[k].append(m[k])
        qerr = max(qerr, m["error"])
        beta, s0, lo = score_hessian_estimate(rho, prior, None if grid_step is None else {"step": grid_step})
        score0.append(s0)
        betas.append(beta)
        mins.append(lo)
    inputs = SecondOrderInputs(max(betas), np.array(score0), {k: np.array(v) for k, v in mom.items()},
                               kl_gaussian(p0, prior), min(mins))
    return inputs, qerr


def run_second_order_bound(p, tol, seed, threads):
    problem = make_problem(p["problem"])
    spec = make_spec(p["algorithm"])
    spec.require_sgld_preconditions()
    data = sample_dataset(problem, _dataset_rng(seed))
    P_S = build_posterior_kernel(problem, data, spec)
    if not isinstance(P_S, AffineGaussianKernel) or np.any(P_S.Sigma != 0):
        raise UnsupportedKernel("the second-order pipeline needs full-batch quadratic SGD without noise")
    _, pi = build_prior_kernel(spec, problem.d, require_invariant=True)
    d = problem.d
    p0 = GaussianDistribution(np.full(d, p["p0"].get("mean", 0.0)), p["p0"]["var"] * np.eye(d))
    H, c, _ = quadratic_coefficients(data)
    rows = []
    for T in p["T_values"]:
        t_grid = default_grid(T, p["grid_points"] - 1)
        inputs, qerr = second_order_inputs(P_S, p0, pi, H, c, t_grid, tol["tail_tol"], tol["quad_tol"],
                                           p.get("grid_step"))
        rep = second_order_sgd_bound(inputs, spec.eta, spec.lam, T, problem.n, problem.subgaussian, p["zeta"], t_grid)
        exact, kerr = kl_with_error(poissonize(P_S, p0, T, tol["tail_tol"]), pi, tol["quad_tol"])
        rows.append({"T": T, "inner": rep.inner, "exact_kl": exact, "margin": rep.inner - exact,
                     "bound": rep.bound_value, "beta": inputs.beta, "min_eig": inputs.min_eig,
                     "status": rep.flags.get("status", "hypothesis-holds-on-grid"),
                     "trapezoid_error": rep.errors["trapezoid"], "quadrature_error": qerr + kerr})
    ok = all(r["margin"] >= -(r["trapezoid_error"] + r["quadrature_error"]) for r in rows)
    return ExperimentResult(rows, {"min_margin": min(r["margin"] for r in rows)},
                            {"max_trapezoid_error": max(r["trapezoid_error"] for r in rows)}, ok,
                            "" if ok else "inner majorant below exact KL")


def run_pacbayes_coverage(p, tol, seed, threads):
    problem = make_problem(p["problem"])
    spec = make_spec(p["algorithm"])
    spec.require_sgld_preconditions()
    summary, rows = pac_bayes_coverage(problem, spec, p["t"], p["datasets"], p["zetas"], seed, tol["quad_tol"],
                                       threads)
    ok = all(frac <= allowed for frac, allowed in summary.values())
    out = {f"zeta={z:g}": {"violation_fraction": f, "allowed": a} for z, (f, a) in summary.items()}
    return ExperimentResult(rows, out, {"max_kl_error": max(r["kl_error"] for r in rows)}, ok,
                            "" if ok else "violation fraction above the binomial allowance")


RUNNERS = {
    "flow-check": run_flow_check,
    "lsi-estimate": run_lsi_estimate,
    "lsi-decay": run_lsi_decay,
    "sgld-bound": run_sgld_bound,
    "noisy-bound": run_noisy_bound,
    "second-order-bound": run_second_order_bound,
    "pacbayes-coverage": run_pacbayes_coverage,
    "depoisson-gap": run_depoisson_gap,
    "poisson-transform": run_poisson_transform,
}


def run_experiment(cfg: dict, threads: int = 1, base_dir: Path = Path(".")) -> ExperimentResult:
    p = dict(cfg["params"])
    if cfg["experiment"] == "poisson-transform" and "path" in p.get("sequence", {}):
        seq = dict(p["sequence"])
        seq["path"] = str((base_dir / seq["path"]).resolve())
        p["sequence"] = seq
    return RUNNERS[cfg["experiment"]](p, cfg["tolerances"], cfg["seed"], threads)
