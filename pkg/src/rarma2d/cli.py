"""Batch command line: simulate | fit | detect | montecarlo | residuals.

Exit codes: 0 success (a non-converged fit is still a result), 1 I/O
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from rarma2d import io
from rarma2d.detection import (
    count_components,
    detect_anomalies,
    parse_pipeline,
    quantile_residuals,
    threshold_mask,
)
from rarma2d.estimation import FitOptions, fit_cmle
from rarma2d.inference import (
    InferenceError,
    confidence_intervals,
    information_criteria,
    overall_subset,
    wald_test,
)
from rarma2d.model import ModelSpec, ParamVector
from rarma2d.simulation import SCENARIOS, Scenario, run_monte_carlo, simulate_field, worker_count
from rarma2d.specfun import std_normal_cdf

log = logging.getLogger("rarma2d")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# flag parsing helpers
# ---------------------------------------------------------------------------


def _floats(text):
    if text is None or str(text).strip() == "":
        return []
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",")]


def _order(text):
    try:
        p, q = (int(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"order must look like p,q (got {text!r})") from None
    if p < 0 or q < 0:
        raise argparse.ArgumentTypeError("orders must be nonnegative")
    return p, q


def _sizes(text):
    sizes = []
    for item in str(text).split(","):
        item = item.strip().lower()
        rows, _, cols = item.partition("x")
        sizes.append((int(rows), int(cols or rows)))
    return sizes


def _roi(text):
    try:
        x, y, h, w = (int(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--roi must look like x,y,h,w (got {text!r})") from None
    return y, x, h, w  # (row, col, height, width)


def _gamma_from_flags(spec, args):
    phi, theta = _floats(args.phi), _floats(args.theta)
    if len(phi) != spec.n_ar:
        raise UsageError(f"--phi: RARMA({spec.p},{spec.q}) needs {spec.n_ar} values, got {len(phi)}")
    if len(theta) != spec.n_ma:
        raise UsageError(
            f"--theta: RARMA({spec.p},{spec.q}) needs {spec.n_ma} values, got {len(theta)}")
    return ParamVector(args.beta, phi, theta)


def _options(args):
    return FitOptions(max_iter=args.max_iter, grad_tol=args.grad_tol, step_tol=args.step_tol)


def _read_input(path, args):
    try:
        return io.read_matrix(path, normalize_pgm=not getattr(args, "raw_pgm", False))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# report builders
# ---------------------------------------------------------------------------


def fit_report(fit, y=None, alpha=0.05, pfa=0.05):
    """JSON-ready summary of a fit: estimates, SEs, CIs, criteria, overall Wald test."""
    spec = fit.spec
    aic, sic = information_criteria(fit)
    report = {
        "order": [spec.p, spec.q],
        "link": spec.link,
        "shape": list(fit.shape),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "message": fit.message,
        "score_norm": fit.score_norm,
        "loglik": fit.loglik,
        "aic": aic,
        "sic": sic,
        "alpha": alpha,
    }
    try:
        ci = confidence_intervals(fit, alpha)
        report["parameters"] = ci.rows()
    except InferenceError as exc:
        report["parameters"] = [
            dict(name=n, estimate=float(v), se=None, lower=None, upper=None)
            for n, v in zip(spec.param_names, fit.params)
        ]
        report["inference_error"] = str(exc)
    report["wald_overall"] = None
    if spec.n_params > 1:
        try:
            wald = wald_test(fit, overall_subset(spec), pfa=pfa)
            report["wald_overall"] = dataclasses.asdict(wald)
        except InferenceError as exc:
            report["inference_error"] = str(exc)
    if y is not None and spec.p == 0 and spec.q == 0:
        yi = np.asarray(y)
        report["closed_form_mu"] = math.sqrt(math.pi * np.sum(yi**2) / (4.0 * yi.size))
        report["fitted_mu"] = math.exp(fit.gamma.beta)
    return report


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    spec = ModelSpec(*args.order)
    gamma = _gamma_from_flags(spec, args)
    y = simulate_field(spec, gamma, args.rows, args.cols, rng=args.seed, burn_in=args.burn_in)
    io.write_csv(args.out, y)
    if args.preview:
        io.write_preview_pgm(args.preview, y)
    scenario = {
        "order": [spec.p, spec.q], "link": spec.link, "rows": args.rows, "cols": args.cols,
        "seed": args.seed, "burn_in": args.burn_in,
        "parameters": dict(zip(spec.param_names, gamma.to_array().tolist())),
        "output": str(args.out),
    }
    print(json.dumps(scenario, indent=2))
    return 0


def cmd_fit(args):
    y = _read_input(args.input, args)
    spec = ModelSpec(*args.order)
    fit = fit_cmle(y, spec, _options(args))
    report = fit_report(fit, y[spec.w:, spec.w:], args.alpha, args.pfa)
    _emit(report, args.out)
    if args.mu:
        io.write_csv(args.mu, fit.mu_hat)
    if args.residuals:
        res = quantile_residuals(y, fit.latents, spec)
        io.write_csv(args.residuals, res.values[spec.w:, spec.w:])
    return 0


def cmd_residuals(args):
    y = _read_input(args.input, args)
    spec = ModelSpec(*args.order)
    fit = fit_cmle(y, spec, _options(args))
    res = quantile_residuals(y, fit.latents, spec)
    io.write_csv(args.out, res.values[spec.w:, spec.w:])
    r = res.interior()
    mask = threshold_mask(res, args.limit)
    summary = {
        "order": [spec.p, spec.q],
        "converged": fit.converged,
        "limit": args.limit,
        "cells": int(r.size),
        "exceedances": mask.count(),
        "exceedance_rate": mask.count() / r.size,
        "nominal_rate": 2.0 * (1.0 - std_normal_cdf(args.limit)),
        "mean": float(r.mean()),
        "variance": float(r.var()),
        "clamped": res.clamped,
    }
    _emit(summary, args.summary)
    return 0


def cmd_detect(args):
    y = _read_input(args.input, args)
    spec = ModelSpec(*args.order)
    try:
        pipeline = parse_pipeline(args.morph)
    except ValueError as exc:
        raise UsageError(f"--morph: {exc}") from None
    try:
        report = detect_anomalies(y, args.roi, spec, args.limit, pipeline, _options(args),
                                  workers=worker_count())
    except ValueError as exc:
        if "ROI" in str(exc):
            raise UsageError(f"--roi: {exc}") from None
        raise
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_mask_pgm(outdir / "mask.pgm", report.mask)
    io.write_mask_pgm(outdir / "union.pgm", report.union)
    rotations = []
    for rot in report.rotations:
        entry = fit_report(rot.fit, None, args.alpha, args.pfa)
        entry["rotation_degrees"] = 90 * rot.k
        entry["flagged_pixels"] = rot.mask.count()
        rotations.append(entry)
    io.write_json(outdir / "rotations.json", rotations)
    _, n_components = count_components(report.mask)
    io.write_json(outdir / "quality.json", {
        "mse": report.quality.mse,
        "mape": report.quality.mape,
        "limit": args.limit,
        "morphology": [str(op) for op in pipeline],
        "union_pixels": report.union.count(),
        "detected_pixels": report.mask.count(),
        "components": n_components,
        "degraded": report.degraded,
        "notes": report.notes,
    })
    print(json.dumps({"outdir": str(outdir), "components": n_components,
                      "detected_pixels": report.mask.count()}))
    return 0


def cmd_montecarlo(args):
    if args.scenario == "custom":
        if args.order is None:
            raise UsageError("--scenario custom requires --order and parameter flags")
        spec = ModelSpec(*args.order)
        scenario = Scenario(spec, _gamma_from_flags(spec, args))
    else:
        scenario = SCENARIOS[args.scenario]
    scenario = dataclasses.replace(
        scenario, sizes=tuple(args.sizes), replications=args.reps, seed=args.seed,
        burn_in=args.burn_in, alpha=args.alpha,
    )
    summary = run_monte_carlo(scenario, _options(args), workers=worker_count())
    text = summary.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _emit(payload, path):
    if path:
        io.write_json(path, payload)
    else:
        print(json.dumps(payload, indent=2, default=io._default))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_fit_flags(p):
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--step-tol", type=float, default=1e-10)


def _add_param_flags(p, beta_default=0.0):
    p.add_argument("--beta", type=float, default=beta_default)
    p.add_argument("--phi", default="", help="comma-separated AR coefficients, row-major lags")
    p.add_argument("--theta", default="", help="comma-separated MA coefficients, row-major lags")


def build_parser():
    parser = argparse.ArgumentParser(prog="rarma2d", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with flag defaults (flags take precedence)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a 2-D RARMA field")
    p.add_argument("--order", type=_order, default=(0, 0))
    _add_param_flags(p)
    p.add_argument("--rows", type=int, default=80)
    p.add_argument("--cols", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=20)
    p.add_argument("--out", default="field.csv")
    p.add_argument("--preview", help="optional 8-bit PGM preview")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="conditional ML fit with Wald inference")
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=_order, default=(1, 1))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--pfa", type=float, default=0.05)
    p.add_argument("--out", help="JSON report path (default: stdout)")
    p.add_argument("--mu", help="write fitted means as CSV")
    p.add_argument("--residuals", help="write quantile residuals as CSV")
    p.add_argument("--raw-pgm", action="store_true", help="do not normalize PGM input")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("residuals", help="fit and report quantile residuals")
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=_order, default=(1, 1))
    p.add_argument("--limit", type=float, default=3.0)
    p.add_argument("--out", default="residuals.csv")
    p.add_argument("--summary", help="JSON summary path (default: stdout)")
    p.add_argument("--raw-pgm", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_residuals)

    p = sub.add_parser("detect", help="four-rotation control-chart anomaly detection")
    p.add_argument("--input", required=True)
    p.add_argument("--roi", type=_roi, required=True, help="x,y,h,w (column, row, height, width)")
    p.add_argument("--order", type=_order, default=(1, 1))
    p.add_argument("--limit", type=float, default=3.0)
    p.add_argument("--morph", default="default",
                   help="preset (default, carabas, sanfrancisco, none) or list like open:3,dilate:7")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--pfa", type=float, default=0.05)
    p.add_argument("--outdir", default="detection")
    p.add_argument("--raw-pgm", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("montecarlo", help="estimator bias/MSE/coverage study")
    p.add_argument("--scenario", choices=["rarma10", "rarma11", "custom"], default="rarma10")
    p.add_argument("--order", type=_order)
    _add_param_flags(p)
    p.add_argument("--sizes", type=_sizes, default=_sizes("10,20,40,80"))
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="CSV path (default: stdout)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        config = json.loads(Path(known.config).read_text())
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read config {known.config}: {exc}") from exc
    converters = {"order": _order, "sizes": _sizes, "roi": _roi}
    for action in parser._subparsers._group_actions:
        for name, subparser in action.choices.items():
            section = {**{k: v for k, v in config.items() if not isinstance(v, dict)},
                       **config.get(name, {})}
            defaults = {}
            for key, value in section.items():
                key = key.replace("-", "_")
                if key in converters and isinstance(value, str):
                    value = converters[key](value)
                elif key in converters and isinstance(value, list) and key == "order":
                    value = tuple(value)
                defaults[key] = value
            subparser.set_defaults(**defaults)
            for act in subparser._actions:
                if act.dest in defaults:
                    act.required = False


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, argparse.ArgumentTypeError) as exc:
        print(f"rarma2d: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, OSError) else 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rarma2d {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rarma2d {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
