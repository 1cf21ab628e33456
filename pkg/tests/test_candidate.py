import numpy as np
import pytest

from riskbounds.candidate import (CandidateError, candidate_interval, divergence_diagnostic,
                                  extremal_solution, general_solution, is_nonempty)


def test_black_scholes_interval_at_zero(bs):
    ci = candidate_interval(bs, 0.0)
    assert not ci.empty
    assert ci.slope_min == pytest.approx(-2.5, abs=1e-8)
    assert ci.slope_max == pytest.approx(1.0, abs=1e-8)
    assert ci.contains(0.0) and not ci.contains(1.1)


def test_black_scholes_interval_empty_above_critical(bs):
    assert candidate_interval(bs, 0.07).empty
    assert not is_nonempty(bs, 0.07)


def test_brownian_interval_shrinks_to_zero(brownian):
    ci = candidate_interval(brownian, 0.0)
    assert abs(ci.slope_min) < 1e-6 and abs(ci.slope_max) < 1e-6
    trend = ci.refinement_trend
    widths = [b - a for a, b in zip(trend["min"], trend["max"])]
    assert all(b < a for a, b in zip(widths, widths[1:]))


def test_extremal_profiles_on_factor_two_window(bs):
    # the shallow window perturbs H by a multiple of x^-2.5 of relative size (lo_R/x)^3.5
    H = extremal_solution(bs, 0.0, "max")
    assert np.allclose(H.w[bs.core_slice] * bs.grid, 1.0, atol=1e-5, rtol=0)


def test_extremal_profiles(bs_deep):
    core = bs_deep.core_slice
    H = extremal_solution(bs_deep, 0.0, "max")
    h = extremal_solution(bs_deep, 0.0, "min")
    xs = bs_deep.grid
    assert np.allclose(H.w[core] * xs, 1.0, atol=1e-8, rtol=0)
    assert np.allclose(h.w[core] * xs, -2.5, atol=1e-8, rtol=0)


def test_extremal_at_critical_value(bs_deep, bs_deep_inputs):
    bb = bs_deep_inputs.beta()
    H = bs_deep_inputs.extremal(bb, "max")
    core = bs_deep.core_slice
    # theta = 0.2 * x w is within 1e-4 of -0.15
    assert np.allclose(H.w[core] * bs_deep.grid, -0.75, atol=5e-4, rtol=0)


def test_general_solution_identity(bs):
    H = extremal_solution(bs, 0.0, "max")
    g = general_solution(bs, 0.0, 0.0, H=H)
    ok = np.isfinite(H.w)
    assert np.allclose(g.w[ok], H.w[ok], rtol=0, atol=1e-10)


def test_general_solution_spans_the_minimal_solution(bs):
    g = general_solution(bs, 0.0, -3.5)
    xs = bs.extended_grid
    sel = (xs >= bs.grid[0]) & (xs <= 20.0)
    assert np.allclose(g.w[sel], -2.5 / xs[sel], rtol=0, atol=1e-6)


def test_general_solution_beyond_maximal_slope(bs):
    with pytest.raises(CandidateError):
        general_solution(bs, 0.0, 0.1)
    g = general_solution(bs, 0.0, 0.1, strict=False)
    assert g.meta["flagged"]
    assert g.horizon_left is not None and g.horizon_left < 1.0


@pytest.mark.parametrize("side, exponent", [("left-of-H", -3.5), ("right-of-h", 3.5)])
def test_divergence_black_scholes(bs, side, exponent):
    seq = divergence_diagnostic(bs, 0.0, side)
    assert seq.increasing
    lo, hi = bs.window(0)
    # closed forms: int_eps^1 x^-4.5 dx and int_1^M x^2.5 dx
    x0 = lo if side == "left-of-H" else hi
    exact0 = abs(x0**exponent - 1.0) / 3.5
    assert seq.values[0] == pytest.approx(exact0, rel=1e-6)
    assert seq.values[-1] > 10 * seq.values[0]


def test_divergence_brownian_is_window_length(brownian):
    seq = divergence_diagnostic(brownian, 0.0, "left-of-H")
    # H is nearly constant on the deep window, so V^-2 is nearly 1
    lo, _ = brownian.window(0)
    assert seq.values[0] == pytest.approx(-lo, rel=1e-5)
    assert seq.increasing
