"""Command-line front end: ``mcontrol <subcommand> ...``.

Exit codes: 0 when the analysis completed or the verdict is true, 2 when a
verification verdict is false, 1 on any error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import McontrolError, ZeroCoefficient
from .expsum import evaluate
from .minimality import (
    biorthogonal_norms,
    dirichlet_abscissa,
    gap_certificate,
    kernel_family,
    series_convergence_diagnostic,
    strong_minimality_diagnostic,
)
from .moment import moment_targets, synthesize_control
from .problem import ProblemFile, emit_problem, parse_problem, preset_problem
from .simulate import verify_partial_null
from .spectrum import (
    b_coefficients,
    biorthogonality_check,
    classify_spectra,
    eigen_residual,
    eigenstructure,
    merged_modes,
)

SUBCOMMANDS = ("spectrum", "analyze", "synthesize", "verify", "report")
REPORT_SCHEMA = "mcontrol.report/1"

__all__ = ["Report", "run_pipeline", "dumps_report", "write_control_csv", "main"]


@dataclass
class Report:
    """Machine-readable report plus a short human summary."""

    data: dict
    summary: list
    exit_code: int = 0
    control: object = None
    t1: float = 1.0


# -- serialization ---------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(x, ".17g")


def _dumps(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_dumps(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dumps(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_dumps(str(k), indent, level + 1)}: {_dumps(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    return _dumps(str(obj), indent, level)


def dumps_report(data: dict, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _dumps(data, indent, 0) + "\n"


def write_control_csv(control, t1: float, path, samples: int = 1000) -> None:
    """Write ``t,u`` samples of the control on a uniform grid of [0, t1]."""
    if samples < 2:
        raise ValueError("samples must be at least 2")
    t = np.linspace(0.0, t1, samples)
    u = np.array([float(v) for v in np.atleast_1d(evaluate(control, t))])
    lines = ["t,u"] + [f"{format(float(a), '.17g')},{format(float(b), '.17g')}" for a, b in zip(t, u)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- pipeline stages ---------------------------------------------------------------

def _context(problem: ProblemFile):
    model = problem.build_model()
    tol = problem.tolerances
    partition = classify_spectra(model, overlap_tol=tol.get("overlap_tol"))
    kwargs = {"resonance_guard": tol.get("resonance_guard")}
    if partition.i_yz:
        kwargs["free_value"] = problem.options.get("free_value") or 1.0
    eig = eigenstructure(model, partition, **kwargs)
    return model, partition, eig


def _spectrum_section(problem, model, partition, eig):
    bc = b_coefficients(model, eig)
    modes = []
    for mode in merged_modes(model):
        b = bc.y[mode.index] if mode.branch == "y" else bc.z[mode.index]
        modes.append({"label": mode.label, "branch": mode.branch, "eigenvalue": mode.eigenvalue, "b": float(b)})
    pairs = [{"y": model.spec_y.labels[p], "z": model.spec_z.labels[q], "c": float(eig.c[m]),
              "multiplicity_two": m in eig.multiplicity_two} for m, (p, q) in enumerate(eig.pairs)]
    return {
        "n_y": model.ny,
        "n_z": model.nz,
        "i_y": [model.spec_y.labels[j] for j in partition.i_y],
        "i_z": [model.spec_z.labels[k] for k in partition.i_z],
        "pairs": pairs,
        "overlap_tol": partition.overlap_tol,
        "biorth_error": biorthogonality_check(eig),
        "eigen_residual": eigen_residual(model, eig),
        "modes": modes,
    }


def _analyze_section(problem, model, partition, eig):
    family = kernel_family(model, eig, partition)
    n_max = int(problem.options.get("n_max") or min(12, model.ny))
    n_max = min(n_max, model.ny)
    ga = strong_minimality_diagnostic(family, model.t1, n_max)
    bc = b_coefficients(model, eig)
    lam = np.asarray(eig.lambda_y, dtype=float)
    order = np.argsort(-lam)
    neg = [j for j in order if lam[j] < 0]
    nonneg = [model.spec_y.labels[j] for j in order if lam[j] >= 0]
    dirichlet = {"excluded_nonnegative": nonneg}
    try:
        est = dirichlet_abscissa(bc.y[neg], lam[neg])
        dirichlet.update({"limit": est.limit, "sequence": est.sequence})
    except ZeroCoefficient as exc:
        dirichlet.update({"limit": None, "zero_coefficient_modes": [model.spec_y.labels[neg[i]] for i in exc.indices]})
    gap = gap_certificate(lam[order], problem.options.get("rho"))
    series = series_convergence_diagnostic(model, eig, problem.x0_z)
    scaled = family.as_scaled()
    eps = problem.options.get("epsilon") or model.t1 / 4
    n_bio = min(problem.n_synth, model.ny)
    try:
        bf = biorthogonal_norms(scaled, model.t1, n_bio, [eps])
        biorth = {"epsilon": eps, "q_norms": bf.q_norms, "k_epsilon": float(bf.k_epsilon[0]),
                  "satisfied": bool(bf.satisfied[0])}
    except McontrolError as exc:
        biorth = {"epsilon": eps, "error": str(exc)}
    return {
        "gram": {
            "n_max": ga.n_max,
            "precision_digits": ga.dps,
            "lambda1": ga.lambda1_seq,
            "lambdan": ga.lambdan_seq,
            "lambda1_normalized": ga.lambda1_normalized_seq,
            "lower_bound": ga.lower_bound,
            "stability_floor": ga.stability_floor,
            "norms": ga.norms,
            "verdict": ga.verdict.value,
        },
        "dirichlet": dirichlet,
        "gap_certificate": {
            "rho": gap.rho,
            "rho_sup": gap.rho_sup,
            "min_modulus_ok": gap.min_modulus_ok,
            "pairwise_gap_ok": gap.pairwise_gap_ok,
            "reciprocal_sum": gap.reciprocal_sum,
            "power_law_exponent": gap.power_law_exponent,
            "tail_bound": gap.tail_bound,
            "reciprocal_ok": gap.reciprocal_ok,
            "all_ok": gap.all_ok,
            "excluded": [model.spec_y.labels[order[i]] for i in gap.excluded],
            "notes": list(gap.notes),
        },
        "series": {"verdict": series.verdict, "partial_sums": series.partial_sums, "limit": series.limit},
        "biorthogonal": biorth,
    }


def _synthesize(problem, model, partition, eig):
    family = kernel_family(model, eig, partition)
    targets = moment_targets(model, eig, partition, problem.x0)
    tik = float(problem.options.get("tikhonov") or 0.0)
    kwargs = {}
    if "solver_tol" in problem.tolerances:
        kwargs["solver_tol"] = problem.tolerances["solver_tol"]
    if "cond_warn" in problem.tolerances:
        kwargs["cond_warn"] = problem.tolerances["cond_warn"]
    sol = synthesize_control(targets, family, n=problem.n_synth, tikhonov=tik, **kwargs)
    section = {
        "n_synth": sol.n,
        "targets": targets.d[: sol.n],
        "coefficients_scaled": sol.coefficients,
        "coefficients_unscaled": sol.unscaled_coefficients,
        "l2_norm": sol.l2_norm,
        "residuals": sol.residuals,
        "max_relative_residual": sol.max_relative_residual(),
        "regularization": sol.regularization,
        "fallback": sol.fallback,
        "condition_estimate": sol.condition_estimate,
        "precision_digits": sol.dps,
        "control_terms": [{"coef": c, "rate": r, "degree": d, "log_scale": s} for c, r, d, s in sol.control.terms],
    }
    return sol, section


def _verify_section(problem, model, partition, eig, sol):
    tol = problem.tolerances.get("verify_tol", 1e-6)
    rep = verify_partial_null(model, eig, partition, problem.x0, sol, model.t1, problem.n_verify, tol)
    return rep, {
        "n_synth": rep.n_synth,
        "n_verify": rep.n_verify,
        "controlled_y": rep.controlled.y_coords[: rep.n_verify],
        "uncontrolled_y": rep.uncontrolled.y_coords[: rep.n_verify],
        "ratios": rep.ratios,
        "max_controlled": rep.max_controlled,
        "threshold": rep.threshold,
        "spillover": rep.spillover,
        "uncontrolled_spillover": rep.uncontrolled_spillover,
        "spillover_bound": rep.spillover_bound,
        "verdict": rep.verdict,
    }


def run_pipeline(problem: ProblemFile, subcommand: str) -> Report:
    """Run one subcommand and collect its report."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand '{subcommand}'")
    model, partition, eig = _context(problem)
    data = {"schema": REPORT_SCHEMA, "version": __version__, "subcommand": subcommand,
            "problem": problem.name, "t1": model.t1}
    summary = [f"problem {problem.name}: {model.ny} Y modes, {model.nz} Z modes, t1 = {model.t1:g}"]
    report = Report(data, summary, 0, None, model.t1)
    if subcommand in ("spectrum", "report"):
        sec = _spectrum_section(problem, model, partition, eig)
        data["spectrum"] = sec
        summary.append(f"spectrum: {len(sec['pairs'])} matched pairs, biorthogonality error {sec['biorth_error']:.3g}")
    if subcommand in ("analyze", "report"):
        sec = _analyze_section(problem, model, partition, eig)
        data["analysis"] = sec
        lim = sec["dirichlet"].get("limit")
        summary.append(f"gram: {sec['gram']['verdict']} (n_max = {sec['gram']['n_max']}, "
                       f"lambda1 = {sec['gram']['lambda1'][-1]:.6g})")
        summary.append("dirichlet abscissa: " + ("undefined (zero coefficients)" if lim is None else f"{lim:.6g}"))
        summary.append(f"gap certificate: all_ok = {sec['gap_certificate']['all_ok']}, "
                       f"rho_sup = {sec['gap_certificate']['rho_sup']:.6g}")
        summary.append(f"series diagnostic: {sec['series']['verdict']}")
    if subcommand in ("synthesize", "verify", "report"):
        sol, sec = _synthesize(problem, model, partition, eig)
        data["synthesis"] = sec
        report.control = sol.control
        summary.append(f"control: n = {sol.n}, ||u|| = {sol.l2_norm:.6g}, "
                       f"max relative residual = {sec['max_relative_residual']:.3g}, "
                       f"digits = {sol.dps or 'float64'}")
        if subcommand in ("verify", "report"):
            rep, vsec = _verify_section(problem, model, partition, eig, sol)
            data["verification"] = vsec
            summary.append(f"verify: verdict = {rep.verdict}, max |y_j| = {rep.max_controlled:.3g} "
                           f"(threshold {rep.threshold:.3g}), spillover = {rep.spillover:.3g}")
            report.exit_code = 0 if rep.verdict else 2
    return report


# -- argument parsing -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcontrol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcontrol {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--problem", metavar="FILE", help="JSON problem file")
        src.add_argument("--demo", metavar="NAME", help="built-in preset (example1, example2)")
        p.add_argument("--modes", type=int, help="modes per branch for presets")
        p.add_argument("--alpha", type=float, help="coupling strength for presets")
        p.add_argument("--normalization", choices=("orthonormal", "raw"), default="orthonormal",
                       help="scale of the preset control coordinates")
        p.add_argument("--t1", type=float, help="control horizon (overrides the problem)")
        p.add_argument("--n-synth", type=int, help="number of moment equations to solve")
        p.add_argument("--n-verify", type=int, help="modes checked during verification")
        p.add_argument("--tikhonov", type=float, help="ridge parameter for the Gram solve")
        p.add_argument("--emit-control", metavar="PATH", help="write sampled control as CSV (t,u)")
        p.add_argument("--samples", type=int, default=1000, help="CSV sample count (default 1000)")
        p.add_argument("--json", metavar="PATH", help="write the machine-readable report")
        p.add_argument("--emit-problem", metavar="PATH", help="write the canonical problem file")

    for name in SUBCOMMANDS:
        common(sub.add_parser(name, help=f"run the {name} stage"))
    demo = sub.add_parser("demo", help="full report on a built-in preset")
    demo.add_argument("name", choices=("example1", "example2"))
    common(demo)
    return parser


def _load_problem(args) -> ProblemFile:
    name = getattr(args, "name", None) if args.subcommand == "demo" else args.demo
    if args.problem:
        problem = parse_problem(args.problem)
    else:
        name = name or "example1"
        problem = preset_problem(name, modes=args.modes, alpha=1.0 if args.alpha is None else args.alpha,
                                 normalization=args.normalization)
    changes = {}
    if args.t1 is not None:
        changes["t1"] = args.t1
    if args.n_synth is not None:
        changes["n_synth"] = args.n_synth
        if args.n_verify is None:
            changes["n_verify"] = max(problem.n_verify, args.n_synth)
    if args.n_verify is not None:
        changes["n_verify"] = args.n_verify
    if args.tikhonov is not None:
        opts = dict(problem.options)
        opts["tikhonov"] = args.tikhonov
        changes["options"] = opts
    return problem.replace(**changes) if changes else problem


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        problem = _load_problem(args)
        if args.emit_problem:
            emit_problem(problem, args.emit_problem)
        sub = "report" if args.subcommand == "demo" else args.subcommand
        report = run_pipeline(problem, sub)
        if args.json:
            Path(args.json).write_text(dumps_report(report.data), encoding="utf-8")
        if args.emit_control:
            if report.control is None:
                raise ValueError("--emit-control needs a subcommand that synthesizes a control")
            write_control_csv(report.control, report.t1, args.emit_control, args.samples)
    except (McontrolError, ValueError, OSError) as exc:
        print(f"mcontrol: error: {exc}", file=sys.stderr)
        return 1
    print("\n".join(report.summary))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
