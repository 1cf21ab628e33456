"""Bound curves for the risk premium ``theta(x)``.

Every bound is ``sigma(x) w(x)`` of some positive solution, ``w = h'/h``:

==================== ========================= =========================
variant              lower generator           upper generator
==================== ========================= =========================
intrinsic            ``h_ell``                 ``H_L``
rough                ``h_0``                   ``H_0``
non-attracted-left   ``H_beta_bar``            ``H_L``
non-attracted-right  ``h_ell``                 ``h_beta_bar``
==================== ========================= =========================

A threshold that is infinite (no admissible extremal pair) leaves the
corresponding side unbounded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .admissibility import Thresholds, compute_thresholds
from .candidate import extremal_solution
from .model import DiffusionModel
from .odecore import SolutionProfile
from .spectral import CriticalEigenvalue, beta_bar

VARIANTS = ("intrinsic", "rough", "non-attracted-left", "non-attracted-right")
ORDER_SLACK = 1e-8

MISPRINT_NOTES = {
    "non-attracted-left": (
        'Black-Scholes closed form: the lower premium bound printed as "1/2 - r/v" is inconsistent '
        "with H_beta_bar(x) = x^(1/2 - r/v^2); sigma*w of that solution gives v/2 - r/v, which is used.",
        'Black-Scholes closed form: the lower return bound printed as "v/2 <= mu" is inconsistent '
        "with r + sigma^2 w of H_beta_bar; the consistent value v^2/2 is used.",
    ),
    "any": (
        'The closed form "H_0(x) = e^x" quoted for the Black-Scholes non-attracted case solves no '
        "Cauchy-Euler equation and is not used; the bounds need only H_beta_bar and H_L.",
    ),
}


class BoundsError(RuntimeError):
    pass


@dataclass
class BoundCurve:
    xs: np.ndarray
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    variant: str
    provenance: dict
    mu_lower: Optional[np.ndarray] = None
    mu_upper: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)


@dataclass
class BoundInputs:
    """Spectral quantities shared by all variants, computed on first use."""

    model: DiffusionModel
    critical: Optional[CriticalEigenvalue] = None
    thresholds: Optional[Thresholds] = None
    profiles: dict = field(default_factory=dict)

    def beta(self) -> float:
        if self.critical is None:
            self.critical = beta_bar(self.model)
        return self.critical.beta_bar

    def threshold(self) -> Thresholds:
        if self.thresholds is None:
            self.thresholds = compute_thresholds(self.model, self.beta())
        return self.thresholds

    def extremal(self, lam: float, side: str) -> Optional[SolutionProfile]:
        if not math.isfinite(lam):
            return None
        key = (float(lam), side)
        if key not in self.profiles:
            self.profiles[key] = extremal_solution(self.model, lam, side)
        return self.profiles[key]


def _generators(variant: str, inp: BoundInputs):
    if variant == "rough":
        return (0.0, "min"), (0.0, "max")
    if variant == "intrinsic":
        th = inp.threshold()
        return (th.ell, "min"), (th.L_cap, "max")
    if variant == "non-attracted-left":
        return (inp.beta(), "max"), (inp.threshold().L_cap, "max")
    if variant == "non-attracted-right":
        return (inp.threshold().ell, "min"), (inp.beta(), "min")
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def theta_bounds(model: DiffusionModel, variant: str, inputs: Optional[BoundInputs] = None) -> BoundCurve:
    """Premium bounds ``sigma w`` of the generating profiles on the core grid."""
    inp = inputs if inputs is not None else BoundInputs(model)
    (lam_lo, side_lo), (lam_hi, side_hi) = _generators(variant, inp)
    core = model.core_slice
    xs = model.grid
    sig = model.vol(xs)
    curves, prov = [], {}
    for tag, lam, side, fill in (("lower", lam_lo, side_lo, -np.inf), ("upper", lam_hi, side_hi, np.inf)):
        prof = inp.extremal(lam, side)
        if prof is None:
            curves.append(np.full(xs.shape, fill))
            prov[tag] = {"lambda": lam, "profile": None}
        else:
            curves.append(sig * prof.w[core])
            prov[tag] = {"lambda": lam, "profile": "H" if side == "max" else "h", "slope0": prof.slope0}
    lower, upper = curves
    bad = lower > upper + ORDER_SLACK
    if np.any(bad):
        i = int(np.argmax(lower - upper))
        raise BoundsError(f"{variant}: lower bound exceeds upper bound at x={xs[i]:.6g} "
                          f"({lower[i]:.10g} > {upper[i]:.10g})")
    notes = list(MISPRINT_NOTES.get(variant, ()))
    return BoundCurve(xs.copy(), lower, upper, variant, prov, notes=notes)


def return_bounds(model: DiffusionModel, curve: BoundCurve) -> BoundCurve:
    """Expected-return bounds ``mu = r + (sigma / x) theta`` for an asset-valued state.

    ``sigma / x`` is the asset's relative volatility, the denominator of the
    premium ``(mu - r) / vol``.
    """
    if not model.state_is_asset:
        raise BoundsError("return bounds need a state that is the asset price (state_is_asset)")
    xs = curve.xs
    r = model.short_rate(xs)
    rel_vol = model.vol(xs) / xs
    with np.errstate(invalid="ignore"):
        curve.mu_lower = r + rel_vol * curve.theta_lower
        curve.mu_upper = r + rel_vol * curve.theta_upper
    return curve


def theta_at(model: DiffusionModel, curve: BoundCurve, x: float) -> tuple[float, float]:
    """Monotone-cubic interpolation of the curve at ``x`` (in the grid coordinate)."""
    lo, hi = curve.xs[0], curve.xs[-1]
    if not lo <= x <= hi:
        raise ValueError(f"x={x:g} outside the truncation window [{lo:g}, {hi:g}]")
    u = np.asarray(model.to_u(curve.xs), dtype=float)
    ux = float(model.to_u(x))
    out = []
    for vals in (curve.theta_lower, curve.theta_upper):
        if np.all(np.isfinite(vals)):
            out.append(float(PchipInterpolator(u, vals)(ux)))
        elif np.all(vals == vals[0]):
            out.append(float(vals[0]))
        else:
            raise BoundsError("cannot interpolate a partially infinite curve")
    return out[0], out[1]
