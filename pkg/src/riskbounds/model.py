"""Risk-neutral state dynamics and their discretisation.

The state follows ``dX = k(X) dt + sigma(X) dW`` under the risk-neutral
measure on an interval ``(c, d)`` with short rate ``r(X)``.  Numerics live on a
finite truncation window ``[x_min, x_max]`` around ``xi``; the window is pushed
towards ``c`` and ``d`` in ``boundary_refinement_levels`` geometric steps so
that boundary-limit quantities can be studied as refinement sequences.

Grids are built in a computational coordinate ``u``: ``u = x`` for uniform
spacing and ``u = log x`` for logarithmic spacing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .expr import ExprError, Expression, Program, parse

SPACINGS = ("uniform", "logarithmic")


class ModelError(ValueError):
    """Invalid model configuration or violated model invariant."""


@dataclass(frozen=True)
class GridPolicy:
    n_points: int = 513
    spacing: str = "uniform"
    boundary_refinement_levels: int = 6
    # Each level moves a finite endpoint ``refinement_factor`` times closer to
    # its boundary, or an infinite one ``refinement_factor`` times further out.
    refinement_factor: float = 2.0

    def __post_init__(self):
        if self.n_points < 64:
            raise ModelError(f"n_points must be >= 64, got {self.n_points}")
        if self.spacing not in SPACINGS:
            raise ModelError(f"spacing must be one of {SPACINGS}, got {self.spacing!r}")
        if self.boundary_refinement_levels < 0:
            raise ModelError("boundary_refinement_levels must be >= 0")
        if not self.refinement_factor > 1.0:
            raise ModelError("refinement_factor must be > 1")


@dataclass(frozen=True)
class Tolerances:
    slope: float = 1e-9
    lam: float = 1e-6
    ode_rel: float = 1e-10
    ode_abs: float = 1e-12


@dataclass(frozen=True)
class MCSettings:
    n_paths: int = 100_000
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0


def _extended_real(v) -> float:
    if isinstance(v, str):
        t = v.strip().lower()
        if t in ("inf", "+inf", "infinity"):
            return math.inf
        if t in ("-inf", "-infinity"):
            return -math.inf
        return float(t)
    return float(v)


@dataclass
class ModelConfig:
    """Configuration document, field for field as it appears in JSON."""

    name: str
    k: str
    sigma: str
    rate: str
    interval: tuple[float, float]
    xi: float
    truncation: tuple[float, float]
    parameters: dict[str, float] = field(default_factory=dict)
    grid: GridPolicy = field(default_factory=GridPolicy)
    state_is_asset: bool = False
    tolerances: Tolerances = field(default_factory=Tolerances)
    mc: MCSettings = field(default_factory=MCSettings)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ModelConfig":
        try:
            grid = dict(doc.get("grid", {}))
            if "refinement_levels" in grid:
                grid["boundary_refinement_levels"] = grid.pop("refinement_levels")
            tol = dict(doc.get("tolerances", {}))
            if "lambda" in tol:
                tol["lam"] = tol.pop("lambda")
            interval = doc["interval"]
            truncation = doc["truncation"]
            if len(interval) != 2 or len(truncation) != 2:
                raise ModelError("interval and truncation must have two entries")
            return cls(
                name=str(doc.get("name", "model")),
                k=str(doc["k"]),
                sigma=str(doc["sigma"]),
                rate=str(doc["rate"]),
                interval=(_extended_real(interval[0]), _extended_real(interval[1])),
                xi=float(doc["xi"]),
                truncation=(float(truncation[0]), float(truncation[1])),
                parameters={str(n): float(v) for n, v in doc.get("parameters", {}).items()},
                grid=GridPolicy(**grid),
                state_is_asset=bool(doc.get("state_is_asset", False)),
                tolerances=Tolerances(**tol),
                mc=MCSettings(**doc.get("mc", {})),
            )
        except KeyError as exc:
            raise ModelError(f"missing config field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ModelError):
                raise
            raise ModelError(f"malformed config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def with_grid(self, **changes) -> "ModelConfig":
        from dataclasses import replace

        return replace(self, grid=replace(self.grid, **changes))


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    name: str
    k: Expression
    sigma: Expression
    rate: Expression
    parameters: Mapping[str, float]
    interval: tuple[float, float]
    xi: float
    truncation: tuple[float, float]
    grid_policy: GridPolicy
    tolerances: Tolerances = Tolerances()
    state_is_asset: bool = False
    allow_zero_rate: bool = False
    mc: MCSettings = MCSettings()

    # ---------------------------------------------------------------- coords

    @property
    def logarithmic(self) -> bool:
        return self.grid_policy.spacing == "logarithmic"

    @property
    def levels(self) -> int:
        return self.grid_policy.boundary_refinement_levels

    def to_u(self, x):
        return np.log(x) if self.logarithmic else np.asarray(x, dtype=float)

    def from_u(self, u):
        return np.exp(u) if self.logarithmic else np.asarray(u, dtype=float)

    def jacobian(self, x):
        """dx/du at ``x``."""
        return np.asarray(x, dtype=float) if self.logarithmic else np.ones_like(np.asarray(x, dtype=float))

    def window(self, level: int) -> tuple[float, float]:
        """Truncation window after ``level`` boundary refinements."""
        if not 0 <= level <= self.levels:
            raise ValueError(f"level must lie in [0, {self.levels}]")
        c, d = self.interval
        lo, hi = self.truncation
        f = self.grid_policy.refinement_factor**level
        if level == 0:
            return lo, hi
        if math.isfinite(c):
            lo = c + (lo - c) / f
        elif self.logarithmic:  # pragma: no cover - excluded by validation
            raise ModelError("logarithmic spacing needs a finite left endpoint")
        else:
            lo = self.xi - (self.xi - lo) * f
        if math.isfinite(d):
            hi = d - (d - hi) / f
        elif self.logarithmic:
            hi = hi * f
        else:
            hi = self.xi + (hi - self.xi) * f
        return lo, hi

    # ------------------------------------------------------------------ grid

    @cached_property
    def _grid_data(self):
        n = self.grid_policy.n_points
        lo, hi = self.truncation
        u_lo, u_hi, u_xi = (float(self.to_u(v)) for v in (lo, hi, self.xi))
        n_left = int(round((n - 1) * (u_xi - u_lo) / (u_hi - u_lo)))
        n_left = min(max(n_left, 1), n - 2)
        n_right = n - 1 - n_left
        core = np.concatenate([np.linspace(u_lo, u_xi, n_left + 1), np.linspace(u_xi, u_hi, n_right + 1)[1:]])
        density = (n - 1) / (u_hi - u_lo)

        left_parts, right_parts = [], []
        bounds_u = [(u_lo, u_hi)]
        for j in range(1, self.levels + 1):
            a, b = (float(self.to_u(v)) for v in self.window(j))
            pa, pb = bounds_u[-1]
            m = int(min(max(math.ceil(density * (pa - a)), 8), n))
            left_parts.append(np.linspace(a, pa, m + 1)[:-1])
            m = int(min(max(math.ceil(density * (b - pb)), 8), n))
            right_parts.append(np.linspace(pb, b, m + 1)[1:])
            bounds_u.append((a, b))
        u = np.concatenate(left_parts[::-1] + [core] + right_parts)
        x = self.from_u(u).astype(float)

        # exact node values at xi and at every window endpoint
        level_index = []
        n_ext_left = sum(len(p) for p in left_parts)
        i_xi = n_ext_left + n_left
        x[i_xi] = self.xi
        offset_left = n_ext_left
        offset_right = n_ext_left + len(core) - 1
        for j in range(self.levels + 1):
            lo_j, hi_j = self.window(j)
            i_lo = offset_left - sum(len(p) for p in left_parts[:j])
            i_hi = offset_right + sum(len(p) for p in right_parts[:j])
            x[i_lo], x[i_hi] = lo_j, hi_j
            level_index.append((i_lo, i_hi))
        u = np.asarray(self.to_u(x), dtype=float)
        return x, u, i_xi, tuple(level_index)

    @property
    def extended_grid(self) -> np.ndarray:
        """All nodes from the deepest left window endpoint to the deepest right one."""
        return self._grid_data[0]

    @property
    def extended_u(self) -> np.ndarray:
        return self._grid_data[1]

    @property
    def xi_index(self) -> int:
        return self._grid_data[2]

    def level_slice(self, level: int) -> slice:
        i_lo, i_hi = self._grid_data[3][level]
        return slice(i_lo, i_hi + 1)

    @property
    def core_slice(self) -> slice:
        return self.level_slice(0)

    @property
    def grid(self) -> np.ndarray:
        """Nodes of the truncation window ``[x_min, x_max]``; contains ``xi``."""
        return self.extended_grid[self.core_slice]

    # ---------------------------------------------------------- coefficients

    def drift(self, x):
        return self.k(x, self.parameters)

    def vol(self, x):
        return self.sigma(x, self.parameters)

    def short_rate(self, x):
        return self.rate(x, self.parameters)

    @cached_property
    def programs(self) -> tuple[Program, Program, Program]:
        return tuple(e.compile(self.parameters) for e in (self.k, self.sigma, self.rate))

    @cached_property
    def max_rate(self) -> float:
        return float(np.max(self.short_rate(self.grid)))


def build_model(config: ModelConfig, allow_zero_rate: bool = False) -> DiffusionModel:
    """Validate ``config`` and bind its expressions into a :class:`DiffusionModel`."""
    c, d = config.interval
    if not c < d:
        raise ModelError(f"malformed interval ({c}, {d})")
    lo, hi = config.truncation
    if not (c < lo < hi < d):
        raise ModelError(f"truncation [{lo}, {hi}] must lie strictly inside ({c}, {d})")
    if not (lo < config.xi < hi):
        raise ModelError(f"xi={config.xi} must lie strictly inside the truncation [{lo}, {hi}]")
    if config.grid.spacing == "logarithmic" and not (math.isfinite(c) and c >= 0):
        raise ModelError("logarithmic spacing requires an interval inside (0, inf)")
    try:
        names = set(config.parameters)
        k = parse(config.k, names)
        sigma = parse(config.sigma, names)
        rate = parse(config.rate, names)
    except ExprError as exc:
        raise ModelError(f"bad expression: {exc}") from None

    model = DiffusionModel(
        name=config.name,
        k=k,
        sigma=sigma,
        rate=rate,
        parameters=dict(config.parameters),
        interval=(c, d),
        xi=config.xi,
        truncation=(lo, hi),
        grid_policy=config.grid,
        tolerances=config.tolerances,
        state_is_asset=config.state_is_asset,
        allow_zero_rate=allow_zero_rate,
        mc=config.mc,
    )
    for j in range(1, model.levels + 1):
        a, b = model.window(j)
        if not (c < a and b < d):
            raise ModelError(f"refinement level {j} window [{a}, {b}] left the interval")

    xs = model.extended_grid
    if not np.all(np.isfinite(xs)) or np.any(np.diff(xs) <= 0):
        raise ModelError("grid construction failed (non-finite or non-increasing nodes)")
    try:
        kv = model.drift(xs)
        sv = model.vol(xs)
        rv = model.short_rate(xs)
    except ExprError as exc:
        raise ModelError(f"coefficient evaluation failed on the grid: {exc}") from None
    for name, vals in (("k", kv), ("sigma", sv), ("rate", rv)):
        bad = ~np.isfinite(vals)
        if bad.any():
            raise ModelError(f"{name} is not finite at x={xs[bad][0]:.12g}")
    s_xi = float(model.vol(model.xi))
    if not s_xi > 0:
        raise ModelError(f"sigma must be positive: sigma({model.xi:.12g}) = {s_xi:.6g} at xi")
    if np.any(sv <= 0):
        i = int(np.argmax(sv <= 0))
        raise ModelError(f"sigma must be positive: sigma({xs[i]:.12g}) = {sv[i]:.6g}")
    if np.any(~np.isfinite((xs if model.logarithmic else 1.0) / sv)):
        raise ModelError("sigma underflows on the grid; shrink the refinement depth")
    if allow_zero_rate:
        if np.any(rv < 0):
            i = int(np.argmax(rv < 0))
            raise ModelError(f"rate must be non-negative: r({xs[i]:.12g}) = {rv[i]:.6g}")
    elif np.any(rv <= 0):
        i = int(np.argmax(rv <= 0))
        raise ModelError(
            f"rate must be positive: r({xs[i]:.12g}) = {rv[i]:.6g} "
            "(a zero rate is accepted only with allow_zero_rate / --allow-zero-rate)"
        )
    return model


# -------------------------------------------------------------- scale density

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def log_scale_density(model: DiffusionModel, xs=None, gauss_points: int = 3) -> np.ndarray:
    """``log q`` with ``q(x) = exp(-int_xi^x k/sigma^2)`` on sorted nodes ``xs``.

    Composite Gauss-Legendre in the grid coordinate between consecutive nodes,
    accumulated outward from ``xi``.
    """
    xs = model.extended_grid if xs is None else np.asarray(xs, dtype=float)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    nodes = np.union1d(xs, [model.xi])
    i_xi = int(np.searchsorted(nodes, model.xi))
    u = model.to_u(nodes)
    t, wts = _gauss_legendre(gauss_points)
    mid = 0.5 * (u[1:] + u[:-1])
    half = 0.5 * np.diff(u)
    uq = mid[:, None] + half[:, None] * t[None, :]
    xq = model.from_u(uq)
    with np.errstate(all="ignore"):
        f = model.drift(xq) / model.vol(xq) ** 2 * model.jacobian(xq)
    cell = (f * wts[None, :]).sum(axis=1) * half
    if not np.all(np.isfinite(cell)):
        bad = int(np.argmax(~np.isfinite(cell)))
        raise ModelError(f"scale density integrand not finite near x={nodes[bad]:.6g}")
    acc = np.zeros_like(nodes)
    acc[i_xi + 1 :] = np.cumsum(cell[i_xi:])
    acc[:i_xi] = -np.cumsum(cell[:i_xi][::-1])[::-1]
    logq = -acc
    return logq[np.searchsorted(nodes, xs)]


def scale_density(model: DiffusionModel, xs=None, gauss_points: int = 3) -> np.ndarray:
    """Scale density ``q`` normalised to ``q(xi) = 1`` (see :func:`log_scale_density`)."""
    return np.exp(log_scale_density(model, xs, gauss_points))
