"""Optional figures drawn from experiment rows (matplotlib, Agg backend).

Nothing else in the package imports matplotlib; this module is only
loaded when figures are requested.
"""

from __future__ import annotations

from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"figure.figsize": (6.0, 3.8), "axes.grid": True, "grid.alpha": 0.3,
                         "savefig.dpi": 120, "font.size": 10})
    return plt


def _col(rows, key):
    return [r[key] for r in rows]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    fig.clf()
    return path


def plot_flow(rows, out: Path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.semilogy(_col(rows, "t"), [max(r["residual"], 1e-18) for r in rows], "o", label="analytic")
    ax.semilogy(_col(rows, "t"), [max(r["residual_fd"], 1e-18) for r in rows], "x", label="finite difference")
    ax.set_xlabel("t")
    ax.set_ylabel("|dKL/dt - (expansion - Bregman)|")
    ax.legend()
    return [_save(fig, out / "flow_residuals.png")]


def plot_bound_vs_exact(rows, out: Path, x="T", bound="bound", exact="exact_kl", name="bound_vs_exact.png"):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.plot(_col(rows, x), _col(rows, bound), "o-", label=bound)
    ax.plot(_col(rows, x), _col(rows, exact), "s--", label=exact)
    ax.set_xlabel(x)
    ax.set_ylabel("KL")
    ax.legend()
    return [_save(fig, out / name)]


def plot_gap(rows, out: Path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.semilogy(_col(rows, "k"), [max(r["gap"], 1e-18) for r in rows], "o", ms=3, label="|E G(X_k) - E G(Y_k)|")
    ax.semilogy(_col(rows, "k"), _col(rows, "bound"), "-", label="ergodicity bound")
    ax.set_xlabel("k")
    ax.legend()
    return [_save(fig, out / "depoisson_gap.png")]


def plot_decay(rows, out: Path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.plot(_col(rows, "t"), _col(rows, "kl"), "o-", label="KL(rho_t || pi)")
    ax.plot(_col(rows, "t"), _col(rows, "decay_bound"), "s--", label="exp(-gamma t) KL(p0 || pi)")
    ax.set_xlabel("t")
    ax.legend()
    return [_save(fig, out / "lsi_decay.png")]


def plot_transform(rows, out: Path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.semilogy(_col(rows, "n"), [max(r["rel_error"], 1e-18) for r in rows], "o")
    ax.set_xlabel("n")
    ax.set_ylabel("relative reconstruction error")
    return [_save(fig, out / "cauchy_roundtrip.png")]


def plot_coverage(rows, out: Path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    key = next(k for k in rows[0] if k.startswith("bound_"))
    ax.scatter(_col(rows, key), _col(rows, "gap"), s=6)
    lim = max(max(_col(rows, key)), max(_col(rows, "gap")))
    ax.plot([0, lim], [0, lim], "k--", lw=1)
    ax.set_xlabel(key)
    ax.set_ylabel("Poissonized generalization gap")
    return [_save(fig, out / "coverage.png")]


def render(kind: str, rows: list, out) -> list:
    """Write the figures for one experiment kind; returns the file paths."""
    out = Path(out)
    if not rows:
        return []
    if kind == "flow-check":
        return plot_flow(rows, out)
    if kind in ("sgld-bound", "noisy-bound"):
        return plot_bound_vs_exact(rows, out)
    if kind == "second-order-bound":
        return plot_bound_vs_exact(rows, out, bound="inner")
    if kind == "depoisson-gap":
        return plot_gap(rows, out)
    if kind == "lsi-decay":
        return plot_decay(rows, out)
    if kind == "poisson-transform":
        return plot_transform(rows, out)
    if kind == "pacbayes-coverage":
        return plot_coverage(rows, out)
    return []
