"""Critical eigenvalue: the largest ``lam`` admitting a positive solution."""
from __future__ import annotations

from dataclasses import dataclass

from .candidate import CandidateInterval, candidate_interval, is_nonempty
from .model import DiffusionModel

PREDICATE_SLOPE_TOL = 1e-6
MAX_GROWTH = 60


class SpectralError(RuntimeError):
    pass


@dataclass
class CriticalEigenvalue:
    beta_bar: float
    bracket_width: float
    existence_at_top: bool
    interval: CandidateInterval | None = None
    n_evaluations: int = 0


def beta_bar(model: DiffusionModel, lam_tol: float | None = None) -> CriticalEigenvalue:
    """Bisection on ``lam`` over the predicate "candidate interval non-empty".

    The returned value is the largest ``lam`` found to be non-empty; the next
    ``lam`` up by ``bracket_width`` was found empty.
    """
    tol = model.tolerances.lam if lam_tol is None else lam_tol
    calls = 0

    def exists(lam):
        nonlocal calls
        calls += 1
        return is_nonempty(model, lam, PREDICATE_SLOPE_TOL)

    if not exists(0.0):
        raise SpectralError("no positive solution at lam=0; the equation has no positive "
                            "solution for any lam")
    lo = 0.0
    hi = max(model.max_rate, 1e-3)
    for _ in range(MAX_GROWTH):
        if not exists(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SpectralError(f"bracket growth exhausted at lam={hi:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if exists(mid):
            lo = mid
        else:
            hi = mid
    # confirm at full slope tolerance, stepping down if the loose predicate overshot
    final = candidate_interval(model, lo, levels=[model.levels])
    calls += 1
    if final.empty and lo > 0.0:
        hi, step = lo, tol
        while True:
            lo = max(hi - step, 0.0)
            final = candidate_interval(model, lo, levels=[model.levels])
            calls += 1
            if not final.empty or lo == 0.0:
                break
            hi, step = lo, 2.0 * step
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            trial = candidate_interval(model, mid, levels=[model.levels])
            calls += 1
            if trial.empty:
                hi = mid
            else:
                lo, final = mid, trial
    return CriticalEigenvalue(lo, hi - lo, not final.empty, final, calls)


def existence_sweep(model: DiffusionModel, lams) -> list[bool]:
    """Existence predicate over ``lams`` (used for dichotomy consistency checks)."""
    return [is_nonempty(model, lam, PREDICATE_SLOPE_TOL) for lam in lams]
