"""Candidate slopes, extremal solutions and the two-parameter solution family.

For fixed ``lam`` the slopes ``h'(xi)`` of normalised positive solutions form
an interval ``[slope_min, slope_max]``.  Larger slopes make ``h`` smaller to
the left of ``xi``, so ``slope_max`` is the last slope whose solution survives
leftwards and ``slope_min`` the first one that survives rightwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import DiffusionModel, log_scale_density
from .odecore import SolutionProfile, positivity_horizon, shoot_from_boundary

BRACKET_BOUND = 1e6


class CandidateError(RuntimeError):
    pass


class UnresolvedBracketError(CandidateError):
    """Bracket growth hit the slope bound without locating an endpoint."""


@dataclass
class CandidateInterval:
    lam: float
    slope_min: float
    slope_max: float
    empty: bool
    singleton: bool = False
    tolerance: float = 1e-9
    level: int = 0
    # per-endpoint estimates for refinement levels 0..level (None where empty)
    refinement_trend: dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return math.nan if self.empty else self.slope_max - self.slope_min

    def contains(self, slope: float) -> bool:
        return (not self.empty) and self.slope_min <= slope <= self.slope_max


def _endpoint(model, lam, tol, level, which):
    """Bisection for one endpoint on the window of ``level``; None means no positive slope."""
    if which == "max":
        # survives leftwards for small slopes, dies for large ones
        def ok(s):
            return positivity_horizon(model, lam, s, "left", level) is None
        grow = 1.0
    else:
        def ok(s):
            return positivity_horizon(model, lam, s, "right", level) is None
        grow = -1.0

    s = 0.0
    if ok(s):
        good, step = s, 1.0
        bad = None
        while abs(good) <= BRACKET_BOUND:
            trial = grow * step
            if ok(trial):
                good = trial
                step *= 2.0
            else:
                bad = trial
                break
        if bad is None:
            raise UnresolvedBracketError(
                f"no {which} endpoint below |slope|={BRACKET_BOUND:g} at lam={lam:g}")
    else:
        bad, step = s, 1.0
        good = None
        while step <= BRACKET_BOUND:
            trial = -grow * step
            if ok(trial):
                good = trial
                break
            bad = trial
            step *= 2.0
        if good is None:
            return None
    while abs(bad - good) > tol:
        mid = 0.5 * (good + bad)
        if mid in (good, bad):
            break
        if ok(mid):
            good = mid
        else:
            bad = mid
    return good


def _interval_at_level(model, lam, tol, level):
    s_max = _endpoint(model, lam, tol, level, "max")
    if s_max is None:
        return None
    s_min = _endpoint(model, lam, tol, level, "min")
    if s_min is None:
        return None
    return s_min, s_max


def candidate_interval(model: DiffusionModel, lam: float, slope_tol: float | None = None,
                       levels=None) -> CandidateInterval:
    """Candidate slope interval at ``lam``.

    Endpoints are bisected on each refinement window in ``levels`` (default:
    all); the reported interval is the one on the deepest window listed, the
    others form ``refinement_trend``.
    """
    tol = model.tolerances.slope if slope_tol is None else slope_tol
    levels = list(range(model.levels + 1)) if levels is None else sorted(levels)
    trend = {"min": [], "max": [], "levels": levels}
    last = None
    for lev in levels:
        last = _interval_at_level(model, lam, tol, lev)
        if last is None or last[0] > last[1] + 10 * tol:
            trend["min"].append(None)
            trend["max"].append(None)
        else:
            trend["min"].append(last[0])
            trend["max"].append(last[1])
    deepest = levels[-1]
    if last is None or last[0] > last[1] + 10 * tol:
        return CandidateInterval(lam, math.nan, math.nan, True, False, tol, deepest, trend)
    s_min, s_max = last
    if s_max - s_min < 10 * tol:
        mid = 0.5 * (s_min + s_max)
        return CandidateInterval(lam, mid, mid, False, True, tol, deepest, trend)
    return CandidateInterval(lam, s_min, s_max, False, False, tol, deepest, trend)


def is_nonempty(model: DiffusionModel, lam: float, slope_tol: float = 1e-6, level: int | None = None) -> bool:
    """Existence predicate on the deepest window, with a looser slope tolerance."""
    level = model.levels if level is None else level
    return not candidate_interval(model, lam, slope_tol, [level]).empty


def extremal_solution(model: DiffusionModel, lam: float, side: str) -> SolutionProfile:
    """``H_lam`` (``side='max'``) or ``h_lam`` (``side='min'``) on the extended grid.

    Computed by integrating inward from the deepest window endpoint at which
    the solution vanishes, then normalising at ``xi``.  The slope at ``xi``
    agrees with the bisected endpoint of :func:`candidate_interval` on the
    same window.
    """
    if side == "max":
        prof = shoot_from_boundary(model, lam, "left")
    elif side == "min":
        prof = shoot_from_boundary(model, lam, "right")
    else:
        raise ValueError("side must be 'min' or 'max'")
    if not prof.positive:
        # Near the critical value the solution is the window's ground state and
        # may vanish again just inside the opposite endpoint.  That is tolerated
        # in the outermost segment, which only serves as the shooting boundary.
        x_zero = prof.horizon_left if prof.horizon_left is not None else prof.horizon_right
        inner_lo, inner_hi = model.window(max(model.levels - 1, 0))
        if model.levels == 0 or inner_lo <= x_zero <= inner_hi:
            raise CandidateError(f"no positive {side} solution at lam={lam:g}: zero at x={x_zero:.6g}")
        prof.meta["outer_zero"] = x_zero
    prof.meta["side"] = side
    return prof


# --------------------------------------------------------- integral family


def _gl_log_cumint(g, dg, u, i0, npts=4):
    """``log |int_{u[i0]}^{u[i]} exp(g) du|`` on every node.

    ``g`` is interpolated on each cell by the cubic Hermite polynomial through
    its values and derivatives ``dg``; the cell integrals use Gauss-Legendre.
    The value at ``i0`` is ``-inf``.
    """
    t, wts = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (t + 1.0)
    du = np.diff(u)
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    gq = (g[:-1, None] * h00 + du[:, None] * dg[:-1, None] * h10
          + g[1:, None] * h01 + du[:, None] * dg[1:, None] * h11)
    with np.errstate(divide="ignore"):
        cell = np.logaddexp.reduce(gq + np.log(0.5 * wts)[None, :], axis=1) + np.log(du)
    out = np.full(u.shape, -np.inf)
    out[i0 + 1:] = np.logaddexp.accumulate(cell[i0:])
    if i0 > 0:
        out[:i0] = np.logaddexp.accumulate(cell[:i0][::-1])[::-1]
    return out


def _valid_region(model, prof):
    """Slice of nodes on which ``prof`` is finite (excludes a Dirichlet endpoint)."""
    finite = np.isfinite(prof.log_h) & np.isfinite(prof.w)
    i_xi = model.xi_index
    lo = i_xi
    while lo > 0 and finite[lo - 1]:
        lo -= 1
    hi = i_xi
    while hi < len(finite) - 1 and finite[hi + 1]:
        hi += 1
    return slice(lo, hi + 1)


def log_inverse_square(model: DiffusionModel, prof: SolutionProfile):
    """``log V^{-2}`` with ``V = h/q`` and its derivative in the grid coordinate."""
    xs = prof.xs
    logq = log_scale_density(model, xs)
    jac = model.jacobian(xs)
    g = 2.0 * logq - 2.0 * prof.log_h
    with np.errstate(all="ignore"):
        dg = jac * (-2.0 * model.drift(xs) / model.vol(xs) ** 2 - 2.0 * prof.w)
    return g, dg


def _with_jacobian(model, xs, g, dg):
    """Turn an integrand in ``x`` into one in the grid coordinate ``u``."""
    if not model.logarithmic:
        return g, dg
    return g + np.log(xs), dg + 1.0


def general_solution(model: DiffusionModel, lam: float, c: float, strict: bool = True,
                     H: SolutionProfile | None = None) -> SolutionProfile:
    """Normalised solution ``H(x) (1 + c int_xi^x V^{-2})`` with slope ``H'(xi) + c``.

    ``c > 0`` exceeds the largest candidate slope; with ``strict`` it raises,
    otherwise the returned profile shows the resulting left horizon.
    """
    if strict and c > 0:
        raise CandidateError(f"c={c:g} > 0 exceeds the maximal candidate slope")
    if H is None:
        H = extremal_solution(model, lam, "max")
    region = _valid_region(model, H)
    xs = H.xs
    u = model.extended_u
    i_xi = model.xi_index
    g, dg = log_inverse_square(model, H)
    n = len(xs)
    log_i = np.full(n, np.nan)
    sub = slice(region.start, region.stop)
    gj, dgj = _with_jacobian(model, xs, g, dg)
    log_i[sub] = _gl_log_cumint(gj[sub], dgj[sub], u[sub], i_xi - region.start)
    sign_i = np.sign(np.arange(n) - i_xi).astype(float)  # I < 0 left of xi

    # 1 + c I, in log form: t = c * sign(I), z = log|t I|
    log_h = np.full(n, np.nan)
    w = np.full(n, np.nan)
    with np.errstate(all="ignore"):
        t = c * sign_i
        z = np.log(np.abs(t)) + log_i  # log|c I|
        small = ~(z >= 30.0)
        val = 1.0 + t * np.exp(np.where(small, log_i, 0.0))
        log_abs = np.where(small, np.log(np.abs(val)), z + np.log1p(np.sign(t) * np.exp(-z)))
        sgn = np.where(small, np.sign(val), np.sign(t))
        log_h[sub] = H.log_h[sub] + log_abs[sub]
        # w = H'/H + c V^{-2} / (1 + c I)
        w[sub] = H.w[sub] + c * sgn[sub] * np.exp(g[sub] - log_abs[sub])
    log_h[i_xi] = 0.0
    w[i_xi] = H.w[i_xi] + c

    # first sign change of 1 + cI on each side is a positivity horizon
    horizon_left = horizon_right = None
    pos = sgn > 0
    pos[i_xi] = True
    right_bad = np.nonzero(~pos[i_xi:sub.stop])[0]
    if right_bad.size:
        j = i_xi + int(right_bad[0])
        horizon_right = float(xs[j])
        log_h[j:] = np.nan
        w[j:] = np.nan
    left_bad = np.nonzero(~pos[sub.start:i_xi + 1][::-1])[0]
    if left_bad.size:
        j = i_xi - int(left_bad[0])
        horizon_left = float(xs[j])
        log_h[:j + 1] = np.nan
        w[:j + 1] = np.nan
    return SolutionProfile(lam=float(lam), slope0=float(H.slope0 + c), xs=xs, log_h=log_h, w=w,
                           xi_index=i_xi, horizon_left=horizon_left, horizon_right=horizon_right,
                           method="integral", meta={"c": c, "flagged": c > 0})


@dataclass
class DivergenceSequence:
    side: str
    levels: list
    log_values: np.ndarray

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @property
    def increasing(self) -> bool:
        return bool(np.all(np.diff(self.log_values) > 0))


def divergence_diagnostic(model: DiffusionModel, lam: float, side: str,
                          extremal: Optional[SolutionProfile] = None) -> DivergenceSequence:
    """Truncated integrals of ``V^{-2}`` toward the left (``V = H/q``) or of
    ``v^{-2}`` toward the right (``v = h/q``) for every refinement level
    below the deepest one, which serves as the shooting boundary.
    """
    if side in ("left", "left-of-H"):
        prof = extremal if extremal is not None else extremal_solution(model, lam, "max")
        left = True
    elif side in ("right", "right-of-h"):
        prof = extremal if extremal is not None else extremal_solution(model, lam, "min")
        left = False
    else:
        raise ValueError("side must be 'left-of-H' or 'right-of-h'")
    g, dg = _with_jacobian(model, prof.xs, *log_inverse_square(model, prof))
    i_xi = model.xi_index
    levels = list(range(max(model.levels, 1)))
    outer = model.level_slice(levels[-1])
    if left:
        sl = slice(outer.start, i_xi + 1)
    else:
        sl = slice(i_xi, outer.stop)
    if not (np.all(np.isfinite(g[sl])) and np.all(np.isfinite(dg[sl]))):
        bad = np.nonzero(~(np.isfinite(g[sl]) & np.isfinite(dg[sl])))[0][0] + sl.start
        raise CandidateError(f"non-finite integrand at x={prof.xs[bad]:.6g}")
    u = model.extended_u[sl]
    cum = _gl_log_cumint(g[sl], dg[sl], u, i_xi - sl.start)
    vals = []
    for lev in levels:
        s = model.level_slice(lev)
        idx = (s.start if left else s.stop - 1) - sl.start
        vals.append(cum[idx])
    return DivergenceSequence("left-of-H" if left else "right-of-h", levels, np.asarray(vals))
