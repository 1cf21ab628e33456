"""Monte Carlo cross-checks: deflator martingale tests and bound containment.

Paths follow an Euler-Maruyama discretisation of the state dynamics, either
under the risk-neutral measure or under an h-transformed measure given by a
drift override on the model grid.  Each path draws its normals from its own
generator seeded by ``(seed, path index)``, so results do not depend on how
paths are grouped into chunks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .expr import STACK_SIZE, run_program
from .model import DiffusionModel
from .odecore import SolutionProfile

log = logging.getLogger(__name__)

CHUNK = 2048
ABSORBED_WARNING = 0.2


@numba.njit(cache=True)
def _euler_chunk(z, x0, dt, lo, hi, kops, kval, sops, sval, rops, rval,
                 use_override, drift_x, drift_v, cells, out_x, out_int, out_absorbed, visits):
    stack = np.empty(STACK_SIZE)
    n_paths, n_steps = z.shape
    sqdt = math.sqrt(dt)
    n_cells = cells.shape[0] - 1
    for i in range(n_paths):
        x = x0
        r_prev = run_program(rops, rval, x, stack)
        acc = 0.0
        absorbed = False
        last_cell = -1
        for j in range(n_steps):
            if use_override:
                b = np.interp(x, drift_x, drift_v)
            else:
                b = run_program(kops, kval, x, stack)
            s = run_program(sops, sval, x, stack)
            xn = x + b * dt + s * sqdt * z[i, j]
            if not (lo < xn < hi):
                absorbed = True
                break
            r_new = run_program(rops, rval, xn, stack)
            acc += 0.5 * (r_prev + r_new) * dt
            r_prev = r_new
            x = xn
            if n_cells > 0 and cells[0] <= x <= cells[n_cells]:
                c = np.searchsorted(cells, x) - 1
                if c < 0:
                    c = 0
                if c != last_cell:
                    visits[c] += 1
                    last_cell = c
        out_x[i] = x
        out_int[i] = acc
        out_absorbed[i] = absorbed


@dataclass
class PathBundle:
    """Terminal statistics of a batch of simulated paths."""

    n_paths: int
    dt: float
    horizon: float
    x_T: np.ndarray
    int_r: np.ndarray
    absorbed: np.ndarray
    seed: int
    visits: np.ndarray = field(repr=False, default=None)
    warnings: list = field(default_factory=list)

    @property
    def absorbed_fraction(self) -> float:
        return float(np.mean(self.absorbed)) if self.n_paths else 0.0

    @property
    def absorbed_count(self) -> int:
        return int(np.count_nonzero(self.absorbed))


def _normals(seed: int, first: int, count: int, n_steps: int) -> np.ndarray:
    out = np.empty((count, n_steps))
    for i in range(count):
        ss = np.random.SeedSequence(seed, spawn_key=(first + i,))
        out[i] = np.random.Generator(np.random.PCG64(ss)).standard_normal(n_steps)
    return out


def simulate(model: DiffusionModel, drift_override=None, T: Optional[float] = None,
             n_paths: Optional[int] = None, dt: Optional[float] = None,
             seed: Optional[int] = None) -> PathBundle:
    """Euler-Maruyama paths from ``xi`` absorbed at the deepest window endpoints.

    Parameters
    ----------
    drift_override
        Drift values on ``model.extended_grid`` (linearly interpolated) used
        instead of ``k``; this simulates under a transformed measure.
    T, n_paths, dt, seed
        Default to the model's Monte Carlo settings.
    """
    mc = model.mc
    T = mc.T if T is None else float(T)
    n_paths = mc.n_paths if n_paths is None else int(n_paths)
    dt = mc.dt if dt is None else float(dt)
    seed = mc.seed if seed is None else int(seed)
    if not T > 0:
        raise ValueError("T must be positive")
    if dt > T / 100.0:
        raise ValueError(f"dt={dt:g} exceeds T/100")
    n_steps = int(round(T / dt))
    lo, hi = model.window(model.levels)
    pk, ps, pr = model.programs
    xs = model.extended_grid
    if drift_override is not None:
        drift_v = np.ascontiguousarray(drift_override, dtype=float)
        ok = np.isfinite(drift_v)
        drift_x, drift_v = np.ascontiguousarray(xs[ok]), np.ascontiguousarray(drift_v[ok])
        use = True
    else:
        drift_x = drift_v = np.zeros(1)
        use = False
    cells = np.ascontiguousarray(model.grid)
    visits = np.zeros(len(cells) - 1, dtype=np.int64)
    x_T = np.empty(n_paths)
    int_r = np.empty(n_paths)
    absorbed = np.empty(n_paths, dtype=np.bool_)
    for start in range(0, n_paths, CHUNK):
        count = min(CHUNK, n_paths - start)
        z = _normals(seed, start, count, n_steps)
        _euler_chunk(z, float(model.xi), dt, lo, hi, pk.ops, pk.values, ps.ops, ps.values, pr.ops, pr.values,
                     use, drift_x, drift_v, cells, x_T[start:start + count], int_r[start:start + count],
                     absorbed[start:start + count], visits)
    bundle = PathBundle(n_paths, dt, T, x_T, int_r, absorbed, seed, visits)
    if bundle.absorbed_fraction > ABSORBED_WARNING:
        msg = f"{bundle.absorbed_fraction:.1%} of paths absorbed at the truncation boundary"
        bundle.warnings.append(msg)
        log.warning(msg)
    return bundle


@dataclass
class MartingaleCheck:
    mean: float
    std_error: float
    z_score: float
    absorbed_fraction: float
    n_used: int
    target: float = 1.0
    warnings: list = field(default_factory=list)


def _interp_log_h(profile: SolutionProfile, model: DiffusionModel, x):
    u = np.asarray(model.to_u(profile.xs), dtype=float)
    with np.errstate(invalid="ignore"):
        lh = np.where(np.isnan(profile.log_h), -np.inf, profile.log_h)
        return np.interp(np.asarray(model.to_u(x), dtype=float), u, lh, left=-np.inf, right=-np.inf)


def martingale_check(model: DiffusionModel, lam: float, profile: SolutionProfile,
                     bundle: PathBundle) -> MartingaleCheck:
    """Sample mean of ``exp(lam T - int r) h(X_T) / h(xi)`` over non-absorbed paths."""
    keep = ~bundle.absorbed
    n = int(np.count_nonzero(keep))
    if n < 2:
        raise ValueError("fewer than two non-absorbed paths")
    log_h = _interp_log_h(profile, model, bundle.x_T[keep])
    vals = np.exp(lam * bundle.horizon - bundle.int_r[keep] + log_h)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n))
    z = (mean - 1.0) / se if se > 0 else (0.0 if mean == 1.0 else math.copysign(math.inf, mean - 1.0))
    return MartingaleCheck(mean, se, z, bundle.absorbed_fraction, n, warnings=list(bundle.warnings))


@dataclass
class ContainmentReport:
    holds: bool
    n_checked: int
    worst_x: float
    worst_excess: float
    absorbed_fraction: float
    warnings: list = field(default_factory=list)


def empirical_bound_check(model: DiffusionModel, curve, lam: float, profile: SolutionProfile,
                          T: Optional[float] = None, n_paths: Optional[int] = None,
                          dt: Optional[float] = None, seed: Optional[int] = None,
                          slack: float = 1e-6) -> ContainmentReport:
    """Simulate under the measure generated by ``(lam, profile)`` and test that
    its premium ``sigma w`` lies inside ``curve`` at every visited grid node."""
    from .admissibility import transformed_drift

    bundle = simulate(model, transformed_drift(model, profile), T, n_paths, dt, seed)
    core = model.core_slice
    theta = (model.vol(profile.xs) * profile.w)[core]
    visited = np.zeros(len(model.grid), dtype=bool)
    hit = bundle.visits > 0
    visited[:-1] |= hit
    visited[1:] |= hit
    excess = np.maximum(curve.theta_lower - theta, theta - curve.theta_upper)
    excess = np.where(visited, excess, -np.inf)
    n_checked = int(np.count_nonzero(visited))
    if n_checked == 0:
        return ContainmentReport(True, 0, math.nan, -math.inf, bundle.absorbed_fraction, list(bundle.warnings))
    worst = int(np.nanargmax(excess))
    worst_excess = float(excess[worst])
    return ContainmentReport(bool(worst_excess <= slack), n_checked, float(model.grid[worst]), worst_excess,
                             bundle.absorbed_fraction, list(bundle.warnings))
