"""Command-line pipeline: config in, report and bound curves out.

Exit status is 0 for a complete run, 1 for configuration or validation
failures and 2 when an unresolved admissibility verdict left results partial.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .admissibility import UnresolvedVerdictError, is_admissible
from .bounds import MISPRINT_NOTES, VARIANTS, BoundCurve, BoundInputs, return_bounds, theta_bounds
from .candidate import CandidateError
from .mcverify import martingale_check, simulate
from .model import ModelConfig, ModelError, build_model
from .spectral import SpectralError

log = logging.getLogger("riskbounds")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
CSV_HEADER = ["x", "theta_lower", "theta_upper", "mu_lower", "mu_upper", "variant"]


@dataclass
class AnalysisReport:
    model: str
    beta_bar: Optional[float] = None
    beta_bar_bracket: Optional[float] = None
    ell: Optional[float] = None
    L_cap: Optional[float] = None
    scan_resolution: Optional[float] = None
    curves: dict = field(default_factory=dict)
    admissibility: list = field(default_factory=list)
    mc_checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    exit_code: int = EXIT_OK


def _num(v):
    """JSON-safe number: non-finite floats become strings."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _fmt(v) -> str:
    return "" if v is None else f"{float(v):.12g}"


def write_curve_csv(curve: BoundCurve, path: Path) -> None:
    n = len(curve.xs)
    mu_lo = curve.mu_lower if curve.mu_lower is not None else [None] * n
    mu_hi = curve.mu_upper if curve.mu_upper is not None else [None] * n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(n):
            w.writerow([_fmt(curve.xs[i]), _fmt(curve.theta_lower[i]), _fmt(curve.theta_upper[i]),
                        _fmt(mu_lo[i]), _fmt(mu_hi[i]), curve.variant])


def _summary(curve: BoundCurve, csv_name: str) -> dict:
    out = {
        "csv": csv_name,
        "provenance": {k: {kk: (_num(vv) if isinstance(vv, float) else vv) for kk, vv in v.items()}
                       for k, v in curve.provenance.items()},
        "theta_lower_range": [_num(np.min(curve.theta_lower)), _num(np.max(curve.theta_lower))],
        "theta_upper_range": [_num(np.min(curve.theta_upper)), _num(np.max(curve.theta_upper))],
    }
    if curve.mu_lower is not None:
        out["mu_lower_range"] = [_num(np.min(curve.mu_lower)), _num(np.max(curve.mu_lower))]
        out["mu_upper_range"] = [_num(np.min(curve.mu_upper)), _num(np.max(curve.mu_upper))]
    return out


def run_analysis(config_path, out_dir, variants=("all",), mc: bool = False, seed: Optional[int] = None,
                 allow_zero_rate: bool = False, grid_points: Optional[int] = None,
                 refinement_levels: Optional[int] = None) -> AnalysisReport:
    """Run the full pipeline and write ``report.json`` plus one CSV per variant.

    Raises :class:`ModelError` for invalid configurations; unresolved
    admissibility verdicts are reported with ``exit_code = 2``.
    """
    config = ModelConfig.load(config_path)
    grid_changes = {}
    if grid_points is not None:
        grid_changes["n_points"] = grid_points
    if refinement_levels is not None:
        grid_changes["boundary_refinement_levels"] = refinement_levels
    if grid_changes:
        config = config.with_grid(**grid_changes)
    if seed is not None:
        config = replace(config, mc=replace(config.mc, seed=seed))
    model = build_model(config, allow_zero_rate=allow_zero_rate)
    wanted = VARIANTS if "all" in variants else tuple(variants)
    for v in wanted:
        if v not in VARIANTS:
            raise ModelError(f"unknown variant {v!r}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = AnalysisReport(model.name)
    inp = BoundInputs(model)

    log.info("critical eigenvalue")
    inp.beta()
    report.beta_bar = inp.critical.beta_bar
    report.beta_bar_bracket = inp.critical.bracket_width

    pairs = [(0.0, "min"), (0.0, "max"), (report.beta_bar, "min"), (report.beta_bar, "max")]
    for lam, side in pairs:
        rep = is_admissible(model, lam, inp.extremal(lam, side))
        report.admissibility.append({
            "lambda": _num(lam), "profile": "H" if side == "max" else "h", "slope0": _num(rep.slope0),
            "admissible": rep.admissible, "left": rep.left_explosion, "right": rep.right_explosion,
            "left_log_integrals": [_num(v) for v in rep.left.log_values],
            "right_log_integrals": [_num(v) for v in rep.right.log_values],
        })
        if rep.unresolved:
            report.warnings.append(f"unresolved Feller verdict for ({lam:.10g}, "
                                   f"{'H' if side == 'max' else 'h'}): {rep.left.reason}; {rep.right.reason}")

    log.info("thresholds")
    try:
        th = inp.threshold()
        report.ell, report.L_cap, report.scan_resolution = th.ell, th.L_cap, th.scan_resolution
        report.warnings.append("thresholds are scan infima, treated as attained at the scanned point "
                               f"(resolution {th.scan_resolution:.3g})")
        for name, val in (("ell", th.ell), ("L", th.L_cap)):
            if not math.isfinite(val):
                report.warnings.append(f"{name}: no admissible extremal pair on [0, beta_bar]; "
                                       "the corresponding bound is unbounded")
    except UnresolvedVerdictError as exc:
        report.warnings.append(f"thresholds not computed: {exc}")
        report.exit_code = EXIT_PARTIAL

    for variant in wanted:
        if report.exit_code == EXIT_PARTIAL and variant != "rough":
            report.warnings.append(f"{variant} bounds skipped (unresolved admissibility)")
            continue
        curve = theta_bounds(model, variant, inp)
        if model.state_is_asset:
            return_bounds(model, curve)
        name = f"{model.name}_{variant}.csv"
        write_curve_csv(curve, out / name)
        report.curves[variant] = _summary(curve, name)
        for note in curve.notes:
            if note not in report.warnings:
                report.warnings.append(note)
    for note in MISPRINT_NOTES["any"]:
        report.warnings.append(note)

    if mc:
        log.info("Monte Carlo cross-checks")
        bundle = simulate(model)
        for lam, side in pairs:
            chk = martingale_check(model, lam, inp.extremal(lam, side), bundle)
            report.mc_checks.append({"lambda": _num(lam), "profile": "H" if side == "max" else "h",
                                     "mean": _num(chk.mean), "std_error": _num(chk.std_error),
                                     "z_score": _num(chk.z_score), "absorbed_fraction": _num(chk.absorbed_fraction)})
        report.warnings.extend(bundle.warnings)

    doc = {
        "version": __version__,
        "model": report.model,
        "beta_bar": _num(report.beta_bar),
        "beta_bar_bracket": _num(report.beta_bar_bracket),
        "ell": _num(report.ell),
        "L_cap": _num(report.L_cap),
        "scan_resolution": _num(report.scan_resolution),
        "curves": report.curves,
        "admissibility": report.admissibility,
        "mc_checks": report.mc_checks,
        "warnings": report.warnings,
        "exit_code": report.exit_code,
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskbounds", description="Intrinsic bounds on the risk premium of a "
                                "Markovian pricing-kernel market from risk-neutral inputs.")
    p.add_argument("--config", required=True, help="JSON model configuration")
    p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    p.add_argument("--variant", default="all", choices=("all",) + VARIANTS)
    p.add_argument("--mc", action=argparse.BooleanOptionalAction, default=False,
                   help="attach Monte Carlo martingale checks")
    p.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (overrides the config)")
    p.add_argument("--allow-zero-rate", action="store_true", help="accept r >= 0 instead of r > 0")
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--refinement-levels", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_analysis(args.config, args.out, (args.variant,), mc=args.mc, seed=args.seed,
                              allow_zero_rate=args.allow_zero_rate, grid_points=args.grid_points,
                              refinement_levels=args.refinement_levels)
    except (ModelError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (SpectralError, CandidateError) as exc:
        log.error("analysis failed: %s", exc)
        return EXIT_CONFIG
    notes = {n for group in MISPRINT_NOTES.values() for n in group}
    for w in report.warnings:
        if w in notes or w.startswith("thresholds are scan infima"):
            log.info("%s", w)
        else:
            log.warning("%s", w)
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
