"""Command-line entry point.

    poissongen --config CONFIG.json --out DIR [--seed N] [--threads N]
               [--validate-only] [--figures]

Exit codes: 0 success, 2 precondition refusal, 3 numeric failure,
4 schema violation, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import config_hash, precondition_warnings, resolve, schema_errors
from .errors import NumericFailure, PreconditionError
from .experiments import run_experiment

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERIC, EXIT_SCHEMA, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("poissongen")


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise (no locale)."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.17g}"
    try:
        import numpy as np

        if isinstance(x, np.floating):
            return f"{float(x):.17g}"
        if isinstance(x, np.integer):
            return str(int(x))
    except ImportError:  # pragma: no cover
        pass
    return str(x)


def write_csv(path: Path, rows: list):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in cols])


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            obj = obj.item()
        except (ValueError, AttributeError):
            obj = obj.tolist()
            return _clean(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def validate(path: str):
    """(exit code, diagnostics). Diagnostics are 'error: ...' / 'warning: ...' lines."""
    try:
        cfg = load_config(path)
    except OSError as exc:
        return EXIT_IO, [f"error: cannot read {path}: {exc.strerror}"]
    except json.JSONDecodeError as exc:
        return EXIT_SCHEMA, [f"error: $: invalid JSON ({exc.msg} at line {exc.lineno})"]
    errors = schema_errors(cfg)
    if errors:
        return EXIT_SCHEMA, [f"error: {e}" for e in errors]
    resolved, warns = resolve(cfg)
    warns += precondition_warnings(resolved)
    return EXIT_OK, [f"warning: {w}" for w in warns]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poissongen", description="Poissonized generalization-bound experiments")
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", help="output directory (overrides output_dir in the config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    ap.add_argument("--validate-only", action="store_true", help="check the config and exit")
    ap.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSV")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    code, diags = validate(args.config)
    for d in diags:
        print(d, file=sys.stderr if d.startswith("error") else sys.stdout)
    if code != EXIT_OK or args.validate_only:
        return code
    cfg = load_config(args.config)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_SCHEMA
    resolved, _ = resolve(cfg, args.seed)
    out = Path(args.out or resolved.get("output_dir") or "out")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_PRECONDITION
    try:
        result = run_experiment(resolved, threads=args.threads, base_dir=Path(args.config).parent)
    except PreconditionError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {
        "experiment": resolved["experiment"],
        "config_hash": config_hash(resolved),
        "version": __version__,
        "seed": resolved["seed"],
        "status": "ok" if result.ok else "failed",
        "message": result.message,
        "summary": result.summary,
        "error_estimates": result.errors,
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "results.csv", result.rows)
        write_json(out / "report.json", report)
        write_json(out / "config-echo.json", resolved)
        if args.figures:
            from .plotting import render

            for f in render(resolved["experiment"], result.rows, out):
                log.info("wrote %s", f)
    except OSError as exc:
        print(f"error: cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("wrote %s", out / "results.csv")
    if not result.ok:
        print(f"numeric failure: {result.message}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
