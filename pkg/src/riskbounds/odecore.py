"""Positive solutions of ``1/2 sigma^2 h'' + k h' - r h = -lam h``.

The linear system ``(h, p)`` with ``p = dh/du`` (``u`` the grid coordinate) is
integrated with an adaptive DOP853 scheme compiled by numba.  ``(h, p)`` is
rescaled whenever it leaves ``[1e-150, 1e150]``; the scale is carried in a
running log offset, so ``log h`` and ``w = h'/h`` are unaffected.  Zero
crossings of ``h`` are located by bisection on the step length of a single
re-taken Runge-Kutta step from the last accepted state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from .expr import STACK_SIZE, run_program
from .model import DiffusionModel

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

RENORM_HI = 1e150
RENORM_LO = 1e-150

STATUS_OK = 0
STATUS_ZERO = 1
STATUS_UNDERFLOW = 2
STATUS_SINGULAR = 3
STATUS_MAXSTEPS = 4


class IntegrationError(RuntimeError):
    def __init__(self, message: str, x: float):
        super().__init__(f"{message} at x={x:.12g}")
        self.x = x


@numba.njit(cache=True)
def _rhs(u, h, p, lam, logsp, kops, kval, sops, sval, rops, rval, stack, out):
    if logsp:
        x = math.exp(u)
        jac = x
    else:
        x = u
        jac = 1.0
    kx = run_program(kops, kval, x, stack)
    sx = run_program(sops, sval, x, stack)
    rx = run_program(rops, rval, x, stack)
    ratio = jac / sx
    if not (sx > 0.0) or not math.isfinite(kx) or not math.isfinite(rx) or not math.isfinite(ratio):
        return False
    out[0] = p
    dp = 2.0 * ratio * ratio * (-kx * (p / jac) + (rx - lam) * h)
    if logsp:
        dp += p
    out[1] = dp
    return True


@numba.njit(cache=True)
def _rk_step(u, h, p, f0, f1, step, lam, logsp, kops, kval, sops, sval, rops, rval,
             stack, K, A, B, C, res):
    """One DOP853 step; fills res = (h_new, p_new, f0_new, f1_new). Returns False on singular rhs."""
    K[0, 0] = f0
    K[0, 1] = f1
    tmp = np.empty(2)
    for s in range(1, 12):
        dh = 0.0
        dp = 0.0
        for j in range(s):
            a = A[s, j]
            if a != 0.0:
                dh += a * K[j, 0]
                dp += a * K[j, 1]
        ok = _rhs(u + C[s] * step, h + step * dh, p + step * dp, lam, logsp,
                  kops, kval, sops, sval, rops, rval, stack, tmp)
        if not ok:
            return False
        K[s, 0] = tmp[0]
        K[s, 1] = tmp[1]
    dh = 0.0
    dp = 0.0
    for j in range(12):
        dh += B[j] * K[j, 0]
        dp += B[j] * K[j, 1]
    hn = h + step * dh
    pn = p + step * dp
    ok = _rhs(u + step, hn, pn, lam, logsp, kops, kval, sops, sval, rops, rval, stack, tmp)
    if not ok:
        return False
    K[12, 0] = tmp[0]
    K[12, 1] = tmp[1]
    res[0] = hn
    res[1] = pn
    res[2] = tmp[0]
    res[3] = tmp[1]
    return True


@numba.njit(cache=True)
def _err_norm(K, step, h, p, hn, pn, rtol, atol, E3, E5):
    e5h = 0.0
    e5p = 0.0
    e3h = 0.0
    e3p = 0.0
    for j in range(13):
        e5h += E5[j] * K[j, 0]
        e5p += E5[j] * K[j, 1]
        e3h += E3[j] * K[j, 0]
        e3p += E3[j] * K[j, 1]
    # atol is relative to the state magnitude: the system is linear and homogeneous
    floor = atol * max(abs(h), abs(p))
    sh = floor + rtol * max(abs(h), abs(hn))
    sp = floor + rtol * max(abs(p), abs(pn))
    e5 = (e5h / sh) ** 2 + (e5p / sp) ** 2
    e3 = (e3h / sh) ** 2 + (e3p / sp) ** 2
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(step) * e5 / math.sqrt((e5 + 0.01 * e3) * 2.0)


@numba.njit(cache=True)
def shoot(kops, kval, sops, sval, rops, rval, lam, logsp, u0, h0, p0, u_end, nodes,
          rtol, atol, stop_on_zero, out_logh, out_w, A, B, C, E3, E5):
    """Integrate from ``u0`` to ``u_end``, writing ``log|h|`` and ``h'/h`` at ``nodes``.

    ``nodes`` must be monotone in the direction of integration and lie between
    ``u0`` (exclusive) and ``u_end`` (inclusive).  Returns
    ``(status, u_event, n_written)``.
    """
    stack = np.empty(STACK_SIZE)
    K = np.empty((13, 2))
    res = np.empty(4)
    f = np.empty(2)
    direction = 1.0 if u_end > u0 else -1.0
    span = abs(u_end - u0)
    n_nodes = nodes.shape[0]
    for i in range(n_nodes):
        out_logh[i] = np.nan
        out_w[i] = np.nan
    if span == 0.0:
        return STATUS_OK, u0, 0

    u = u0
    h = h0
    p = p0
    offset = 0.0
    m = max(abs(h), abs(p))
    if m > 0.0:
        h /= m
        p /= m
        offset = math.log(m)
    if not _rhs(u, h, p, lam, logsp, kops, kval, sops, sval, rops, rval, stack, f):
        return STATUS_SINGULAR, u, 0
    f0 = f[0]
    f1 = f[1]

    h_abs = min(0.01, 0.1 * span)
    next_node = 0
    rejected = False
    n_steps = 0
    while True:
        target = nodes[next_node] if next_node < n_nodes else u_end
        dist = abs(target - u)
        truncated = h_abs >= dist
        step_abs = dist if truncated else h_abs
        step = direction * step_abs
        if step_abs < 1e-14 * max(1.0, abs(u)):
            return STATUS_UNDERFLOW, u, next_node
        n_steps += 1
        if n_steps > 20_000_000:
            return STATUS_MAXSTEPS, u, next_node
        if not _rk_step(u, h, p, f0, f1, step, lam, logsp, kops, kval, sops, sval,
                        rops, rval, stack, K, A, B, C, res):
            h_abs = 0.5 * step_abs
            rejected = True
            if h_abs < 1e-14 * max(1.0, abs(u)):
                return STATUS_SINGULAR, u, next_node
            continue
        err = _err_norm(K, step, h, p, res[0], res[1], rtol, atol, E3, E5)
        if err > 1.0 or not math.isfinite(err):
            fac = 0.2
            if math.isfinite(err):
                fac = max(0.2, 0.9 * err ** (-1.0 / 8.0))
            h_abs = step_abs * fac
            rejected = True
            continue

        hn = res[0]
        if stop_on_zero and h > 0.0 and hn <= 0.0:
            # bisection on the length of a single step from the accepted state
            a_len = 0.0
            b_len = step_abs
            for _ in range(200):
                mid = 0.5 * (a_len + b_len)
                if mid == a_len or mid == b_len:
                    break
                ok = _rk_step(u, h, p, f0, f1, direction * mid, lam, logsp, kops, kval,
                              sops, sval, rops, rval, stack, K, A, B, C, res)
                if ok and res[0] > 0.0:
                    a_len = mid
                else:
                    b_len = mid
            return STATUS_ZERO, u + direction * 0.5 * (a_len + b_len), next_node

        u = target if truncated else u + step
        h = hn
        p = res[1]
        f0 = res[2]
        f1 = res[3]
        m = max(abs(h), abs(p))
        if m > RENORM_HI or (m < RENORM_LO and m > 0.0):
            h /= m
            p /= m
            f0 /= m
            f1 /= m
            offset += math.log(m)

        if truncated and next_node < n_nodes:
            jac = math.exp(u) if logsp else 1.0
            out_logh[next_node] = math.log(abs(h)) + offset if h != 0.0 else -np.inf
            out_w[next_node] = p / (jac * h) if h != 0.0 else np.inf * np.sign(p)
            next_node += 1
        if truncated and next_node >= n_nodes and u == u_end:
            return STATUS_OK, u, next_node
        if not truncated:
            fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
            if rejected:
                fac = min(1.0, fac)
            h_abs = step_abs * fac
        rejected = False


# ------------------------------------------------------------------ profiles


@dataclass
class SolutionProfile:
    """A solution of the eigen-equation normalised to ``h(xi) = 1``.

    Arrays are aligned with ``xs``; entries beyond a positivity horizon (or
    outside the integrated window) are NaN.
    """

    lam: float
    slope0: float
    xs: np.ndarray
    log_h: np.ndarray
    w: np.ndarray
    xi_index: int
    horizon_left: Optional[float] = None
    horizon_right: Optional[float] = None
    method: str = "forward"
    meta: dict = field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.horizon_left is None and self.horizon_right is None

    def h(self) -> np.ndarray:
        return np.exp(self.log_h)

    @property
    def positivity_horizon(self) -> tuple[Optional[float], Optional[float]]:
        return self.horizon_left, self.horizon_right


def _programs(model: DiffusionModel):
    pk, ps, pr = model.programs
    return pk.ops, pk.values, ps.ops, ps.values, pr.ops, pr.values


def _run(model, lam, u0, h0, p0, u_end, nodes_u, stop_on_zero=True):
    nodes_u = np.ascontiguousarray(nodes_u, dtype=np.float64)
    out_logh = np.empty(nodes_u.shape[0])
    out_w = np.empty(nodes_u.shape[0])
    tol = model.tolerances
    status, u_ev, n = shoot(*_programs(model), float(lam), model.logarithmic, float(u0), float(h0),
                            float(p0), float(u_end), nodes_u, tol.ode_rel, tol.ode_abs,
                            stop_on_zero, out_logh, out_w, _A, _B, _C, _E3, _E5)
    x_ev = float(model.from_u(u_ev))
    if status == STATUS_UNDERFLOW:
        raise IntegrationError("step size underflow (coefficient singularity?)", x_ev)
    if status == STATUS_SINGULAR:
        raise IntegrationError("non-finite or non-positive coefficient", x_ev)
    if status == STATUS_MAXSTEPS:
        raise IntegrationError("step budget exhausted", x_ev)
    return status, x_ev, out_logh, out_w


def _resolve_level(model: DiffusionModel, level):
    return model.levels if level is None else level


def integrate_solution(model: DiffusionModel, lam: float, slope0: float, level: int | None = None) -> SolutionProfile:
    """Integrate from ``xi`` with ``h(xi) = 1``, ``h'(xi) = slope0`` in both directions.

    Integration stops at the first zero of ``h`` on either side (recorded as
    a positivity horizon) or at the window of refinement ``level`` (default:
    deepest).  Values are returned on ``model.extended_grid``.

    A component that is recessive in the direction of integration is lost
    at the rate it decays relative to the dominant one; use
    :func:`shoot_from_boundary` for solutions that must stay recessive.
    """
    level = _resolve_level(model, level)
    xs = model.extended_grid
    u = model.extended_u
    i_xi = model.xi_index
    sl = model.level_slice(level)
    log_h = np.full(xs.shape, np.nan)
    w = np.full(xs.shape, np.nan)
    log_h[i_xi] = 0.0
    w[i_xi] = slope0
    p0 = float(model.jacobian(model.xi)) * slope0
    horizons = {}
    for side in ("right", "left"):
        if side == "right":
            idx = np.arange(i_xi + 1, sl.stop)
        else:
            idx = np.arange(i_xi - 1, sl.start - 1, -1)
        status, x_ev, lh, ww = _run(model, lam, u[i_xi], 1.0, p0, u[idx[-1]], u[idx])
        log_h[idx] = lh
        w[idx] = ww
        horizons[side] = x_ev if status == STATUS_ZERO else None
    return SolutionProfile(lam=float(lam), slope0=float(slope0), xs=xs, log_h=log_h, w=w, xi_index=i_xi,
                           horizon_left=horizons["left"], horizon_right=horizons["right"],
                           meta={"level": level})


def positivity_horizon(model: DiffusionModel, lam: float, slope0: float, direction: str,
                       level: int | None = None) -> Optional[float]:
    """First zero of the normalised solution in ``direction`` inside the window, else None."""
    if direction not in ("left", "right"):
        raise ValueError("direction must be 'left' or 'right'")
    level = _resolve_level(model, level)
    lo, hi = model.window(level)
    end = hi if direction == "right" else lo
    p0 = float(model.jacobian(model.xi)) * slope0
    empty = np.empty(0)
    status, x_ev, _, _ = _run(model, lam, float(model.to_u(model.xi)), 1.0, p0, float(model.to_u(end)), empty)
    return x_ev if status == STATUS_ZERO else None


def shoot_from_boundary(model: DiffusionModel, lam: float, side: str, level: int | None = None) -> SolutionProfile:
    """Solution vanishing at one endpoint of the refinement window, normalised at ``xi``.

    ``side='left'`` starts from ``h(lo) = 0, h'(lo) > 0`` and integrates right;
    this is the solution with the largest slope at ``xi`` among those positive
    on the window.  ``side='right'`` is the mirror image.  Integrating away from
    the boundary keeps the wanted solution dominant, which forward shooting
    from ``xi`` cannot do.
    """
    level = _resolve_level(model, level)
    xs = model.extended_grid
    u = model.extended_u
    sl = model.level_slice(level)
    i_xi = model.xi_index
    if side == "left":
        idx = np.arange(sl.start + 1, sl.stop)
        start, p0 = sl.start, 1.0
    elif side == "right":
        idx = np.arange(sl.stop - 2, sl.start - 1, -1)
        start, p0 = sl.stop - 1, -1.0
    else:
        raise ValueError("side must be 'left' or 'right'")
    status, x_ev, lh, ww = _run(model, lam, u[start], 0.0, p0, u[idx[-1]], u[idx])
    log_h = np.full(xs.shape, np.nan)
    w = np.full(xs.shape, np.nan)
    log_h[idx] = lh
    w[idx] = ww
    log_h[start] = -np.inf
    w[start] = np.inf if side == "left" else -np.inf
    horizon_left = horizon_right = None
    if status == STATUS_ZERO:
        if side == "left":
            horizon_right = x_ev
        else:
            horizon_left = x_ev
        if not np.isfinite(log_h[i_xi]):
            raise IntegrationError("boundary solution vanishes before reaching xi", x_ev)
    log_h = log_h - log_h[i_xi]
    return SolutionProfile(lam=float(lam), slope0=float(w[i_xi]), xs=xs, log_h=log_h, w=w, xi_index=i_xi,
                           horizon_left=horizon_left, horizon_right=horizon_right,
                           method=f"boundary-{side}", meta={"level": level})


# ------------------------------------------------------------------ residual


def _fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at ``z`` from nodes ``x``."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def ode_residual(model: DiffusionModel, profile: SolutionProfile, region: slice | None = None,
                 half_width: int = 5) -> np.ndarray:
    """Relative residual of the eigen-equation at interior grid nodes.

    ``|1/2 sigma^2 h'' + k h' - r h + lam h| / ((|lam| + max r) h)`` where
    ``h''/h = w' + w^2`` and ``w'`` is a central difference (``2*half_width + 1``
    nodes) of the stored ``w = h'/h``.  Differencing ``w`` rather than ``h'``
    keeps the stencil error small where ``h`` grows or decays exponentially
    from node to node.  Nodes whose stencil touches a missing value get NaN.
    """
    region = model.core_slice if region is None else region
    xs = profile.xs
    u = model.extended_u
    w = profile.w
    jac = model.jacobian(xs)
    kv = model.drift(xs)
    sv = model.vol(xs)
    rv = model.short_rate(xs)
    lam = profile.lam
    scale = abs(lam) + model.max_rate
    out = np.full(xs.shape, np.nan)
    lo = max(region.start, half_width)
    hi = min(region.stop, len(xs) - half_width)
    for i in range(lo, hi):
        sl = slice(i - half_width, i + half_width + 1)
        if not (np.all(np.isfinite(w[sl])) and np.isfinite(profile.log_h[i])):
            continue
        dw = (_fornberg_weights(u[i], u[sl], 1) @ w[sl]) / jac[i]
        terms = (0.5 * sv[i] ** 2 * dw, 0.5 * sv[i] ** 2 * w[i] ** 2, kv[i] * w[i], rv[i] - lam)
        res = terms[0] + terms[1] + terms[2] - terms[3]
        # with r = lam = 0 the natural scale vanishes; use the size of the terms instead
        denom = scale if scale > 0.0 else max(sum(abs(t) for t in terms), 1e-300)
        out[i] = abs(res) / denom
    return out
