"""Martingale classification of candidate pairs and the thresholds ``ell``, ``L``.

A candidate pair ``(lam, h)`` is admissible when the deflator
``exp(lam t - int r) h(X_t) / h(xi)`` is a true martingale.  Equivalently the
h-transformed diffusion, with drift ``k + sigma^2 h'/h``, must not reach either
boundary in finite time.  That is decided by Feller's test, evaluated on the
sequence of refined truncation windows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .candidate import CandidateInterval, candidate_interval, extremal_solution
from .model import DiffusionModel, MCSettings
from .odecore import SolutionProfile

log = logging.getLogger(__name__)

EXPLOSIVE = "explosive"
NON_EXPLOSIVE = "non-explosive"
UNRESOLVED = "unresolved"

# verdict thresholds on the refinement sequence of the Feller integral
DOUBLING = math.log(2.0)
CONVERGED_REL = 1e-3
STEADY_RATIO = 0.95
GEOMETRIC_RATIO = 0.6


class AdmissibilityError(RuntimeError):
    pass


class UnresolvedVerdictError(AdmissibilityError):
    """A Feller verdict could not be established; carries the offending ``lam``."""

    def __init__(self, message: str, lam: float):
        super().__init__(message)
        self.lam = lam


@dataclass
class FellerResult:
    side: str
    verdict: str
    levels: list
    log_values: np.ndarray
    reason: str = ""

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)


@dataclass
class AdmissibilityReport:
    lam: float
    slope0: float
    left: FellerResult
    right: FellerResult
    mc_cross_check: Optional[object] = None

    @property
    def left_explosion(self) -> str:
        return self.left.verdict

    @property
    def right_explosion(self) -> str:
        return self.right.verdict

    @property
    def unresolved(self) -> bool:
        return UNRESOLVED in (self.left.verdict, self.right.verdict)

    @property
    def admissible(self) -> Optional[bool]:
        """True, False, or None when a side is unresolved."""
        if self.left.verdict == EXPLOSIVE or self.right.verdict == EXPLOSIVE:
            return False
        if self.unresolved:
            return None
        return True

    @property
    def feller_integrals(self) -> dict:
        return {"left": self.left.log_values, "right": self.right.log_values}


# ---------------------------------------------------------------- Feller test


def transformed_drift(model: DiffusionModel, profile: SolutionProfile) -> np.ndarray:
    """Drift ``k + sigma^2 w`` of the h-transformed diffusion on ``profile.xs``."""
    if not profile.positive:
        raise AdmissibilityError("profile has a positivity horizon; no h-transform exists")
    xs = profile.xs
    return model.drift(xs) + model.vol(xs) ** 2 * profile.w


def _log_cumtrapz(logf, u):
    """``log int_{u[0]}^{u[i]} exp(logf)`` along the (possibly descending) nodes."""
    du = np.abs(np.diff(u))
    with np.errstate(divide="ignore"):
        cell = np.log(0.5 * du) + np.logaddexp(logf[:-1], logf[1:])
    out = np.empty_like(logf)
    out[0] = -np.inf
    out[1:] = np.logaddexp.accumulate(cell)
    return out


def _log_diff(a, b):
    """``log(exp(a) - exp(b))`` for ``a >= b``."""
    if b == -np.inf:
        return a
    if a <= b:
        return -np.inf
    return a + math.log(-math.expm1(b - a))


def feller_verdict(log_values) -> tuple[str, str]:
    """Classify a refinement sequence of log Feller integrals.

    Increments between levels that do not shrink mean divergence (the
    boundary is not reached); increments shrinking geometrically mean
    convergence.  The increment test comes first because a slowly (say
    logarithmically) divergent integral can still show a tiny relative change.
    Failing that, growth by a factor two over the last level means divergence
    and a relative change below ``1e-3`` means convergence.
    """
    lv = np.asarray(log_values, dtype=float)
    if lv.size < 2:
        return UNRESOLVED, "fewer than two refinement levels"
    if np.isposinf(lv[-1]):
        return NON_EXPLOSIVE, "integral overflows"
    if lv.size >= 4:
        inc = [_log_diff(lv[i], lv[i - 1]) for i in range(lv.size - 3, lv.size)]
        r1, r2 = inc[1] - inc[0], inc[2] - inc[1]
        if min(r1, r2) >= math.log(STEADY_RATIO):
            return NON_EXPLOSIVE, f"increments do not shrink (ratios {math.exp(r1):.3g}, {math.exp(r2):.3g})"
        if max(r1, r2) <= math.log(GEOMETRIC_RATIO):
            return EXPLOSIVE, f"increments shrink geometrically (ratios {math.exp(r1):.3g}, {math.exp(r2):.3g})"
    last = lv[-1] - lv[-2]
    if last >= DOUBLING:
        return NON_EXPLOSIVE, f"value grows by {math.exp(last):.3g} over the last level"
    if math.expm1(last) < CONVERGED_REL:
        return EXPLOSIVE, f"relative change {math.expm1(last):.3g} over the last level"
    return UNRESOLVED, f"last-level growth factor {math.exp(last):.6g}"


def feller_explosion_test(model: DiffusionModel, drift, side: str) -> FellerResult:
    """Feller integral toward one boundary on refinement levels ``0 .. R-1``.

    With scale density ``s'`` of the given drift and speed density
    ``m = 2 / (s' sigma^2)`` the integral is ``int s'(y) int_y^xi m`` taken
    from ``xi`` to the window endpoint.  The deepest level is excluded because
    the extremal profiles vanish there.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    drift = np.asarray(drift, dtype=float)
    xs = model.extended_grid
    u = model.extended_u
    i_xi = model.xi_index
    levels = list(range(max(model.levels, 1)))
    outer = model.level_slice(levels[-1])
    if side == "right":
        idx = np.arange(i_xi, outer.stop)
    else:
        idx = np.arange(i_xi, outer.start - 1, -1)
    b = drift[idx]
    if not np.all(np.isfinite(b)):
        bad = idx[np.nonzero(~np.isfinite(b))[0][0]]
        raise AdmissibilityError(f"drift not finite at x={xs[bad]:.6g}")
    x = xs[idx]
    uu = u[idx]
    sig2 = model.vol(x) ** 2
    jac = model.jacobian(x)
    log_sp = -cumulative_trapezoid(2.0 * b / sig2 * jac, uu, initial=0.0)
    log_m = math.log(2.0) - log_sp - np.log(sig2)
    log_jac = np.log(jac)
    log_M = _log_cumtrapz(log_m + log_jac, uu)
    with np.errstate(invalid="ignore"):
        log_v = _log_cumtrapz(log_sp + log_M + log_jac, uu)
    vals = []
    for lev in levels:
        s = model.level_slice(lev)
        end = s.stop - 1 if side == "right" else s.start
        vals.append(log_v[abs(end - i_xi)])
    vals = np.asarray(vals)
    verdict, reason = feller_verdict(vals)
    return FellerResult(side, verdict, levels, vals, reason)


# ------------------------------------------------------------ admissibility


def is_admissible(model: DiffusionModel, lam: float, profile: SolutionProfile,
                  mc: Optional[MCSettings] = None) -> AdmissibilityReport:
    """Feller verdicts on both sides for the pair ``(lam, profile)``.

    With ``mc`` the deflator mean is also estimated by simulation and attached
    as ``mc_cross_check``; it never changes the verdict.
    """
    drift = transformed_drift(model, profile)
    report = AdmissibilityReport(float(lam), float(profile.slope0),
                                 feller_explosion_test(model, drift, "left"),
                                 feller_explosion_test(model, drift, "right"))
    if mc is not None:
        from .mcverify import martingale_check, simulate
        bundle = simulate(model, None, mc.T, mc.n_paths, mc.dt, mc.seed)
        report.mc_cross_check = martingale_check(model, lam, profile, bundle)
    return report


def attraction_classification(model: DiffusionModel, lam: float, profile: SolutionProfile, side: str,
                              interval: Optional[CandidateInterval] = None) -> str:
    """``non-attracted`` when the profile is the extremal solution for ``side``.

    The left boundary is non-attracted exactly for ``H_lam`` (largest slope),
    the right boundary exactly for ``h_lam`` (smallest slope).
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if interval is None:
        interval = candidate_interval(model, lam)
    if interval.empty:
        raise AdmissibilityError(f"no candidate pairs at lam={lam:g}")
    tol = 10.0 * interval.tolerance
    target = interval.slope_max if side == "left" else interval.slope_min
    return "non-attracted" if abs(profile.slope0 - target) <= tol else "possibly-attracted"


# ----------------------------------------------------------------- thresholds


@dataclass
class Thresholds:
    """Scan infima of the admissible ``lam`` for ``h_lam`` (``ell``) and ``H_lam`` (``L_cap``).

    An infinite value means no scanned ``lam`` in ``[0, beta_bar]`` was
    admissible.  Infima are taken as attained at the scanned point.
    """

    ell: float
    L_cap: float
    scan_resolution: float
    beta_bar: float
    scanned: list = field(default_factory=list)

    @property
    def ell_found(self) -> bool:
        return math.isfinite(self.ell)

    @property
    def L_found(self) -> bool:
        return math.isfinite(self.L_cap)


def scan_resolution(beta_bar: float) -> float:
    return max(1e-4 * beta_bar, 1e-6)


def _threshold(model, beta_bar, side, res, record, n_coarse):
    def admissible(lam):
        prof = extremal_solution(model, lam, side)
        rep = is_admissible(model, lam, prof)
        record.append((side, float(lam), rep.left_explosion, rep.right_explosion))
        if rep.unresolved:
            raise UnresolvedVerdictError(
                f"unresolved Feller verdict for the {side} extremal at lam={lam:.10g}", lam)
        return rep.admissible

    if admissible(0.0):
        return 0.0
    if beta_bar < res:
        return math.inf
    points = np.linspace(0.0, beta_bar, n_coarse + 1)[1:]
    prev = 0.0
    for lam in points:
        if admissible(lam):
            lo, hi = prev, float(lam)
            while hi - lo > res:
                mid = 0.5 * (lo + hi)
                if admissible(mid):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = float(lam)
    return math.inf


def compute_thresholds(model: DiffusionModel, beta_bar: float, n_coarse: int = 8) -> Thresholds:
    """Thresholds ``ell`` (family ``h_lam``) and ``L`` (family ``H_lam``).

    Each family is first tested at ``lam = 0``; otherwise a coarse scan of
    ``[0, beta_bar]`` locates the first admissible point and bisection refines
    it to the scan resolution.
    """
    res = scan_resolution(beta_bar)
    record: list = []
    ell = _threshold(model, beta_bar, "min", res, record, n_coarse)
    L_cap = _threshold(model, beta_bar, "max", res, record, n_coarse)
    for name, val in (("ell", ell), ("L", L_cap)):
        if not math.isfinite(val):
            log.info("%s: no admissible extremal pair on [0, %g]", name, beta_bar)
    return Thresholds(ell, L_cap, res, float(beta_bar), record)
