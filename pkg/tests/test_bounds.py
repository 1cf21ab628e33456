import numpy as np
import pytest

from riskbounds.bounds import (VARIANTS, BoundInputs, BoundsError, return_bounds, theta_at,
                               theta_bounds)
from riskbounds.candidate import candidate_interval, general_solution


@pytest.fixture(scope="module")
def curves(bs_deep, bs_deep_inputs):
    return {v: return_bounds(bs_deep, theta_bounds(bs_deep, v, bs_deep_inputs)) for v in VARIANTS}


def test_rough_black_scholes(curves):
    c = curves["rough"]
    assert np.allclose(c.theta_lower, -0.5, atol=1e-8, rtol=0)
    assert np.allclose(c.theta_upper, 0.2, atol=1e-8, rtol=0)
    assert np.allclose(c.mu_lower, -0.05, atol=1e-8, rtol=0)
    assert np.allclose(c.mu_upper, 0.09, atol=1e-8, rtol=0)


def test_non_attracted_left_black_scholes(curves):
    c = curves["non-attracted-left"]
    assert np.allclose(c.theta_lower, 0.2 / 2 - 0.05 / 0.2, atol=1e-4, rtol=0)
    assert np.allclose(c.theta_upper, 0.2, atol=1e-8, rtol=0)
    assert np.allclose(c.mu_lower, 0.2**2 / 2, atol=1e-4, rtol=0)
    assert any("1/2 - r/v" in n for n in c.notes)


def test_intrinsic_equals_rough_when_thresholds_vanish(curves):
    assert np.array_equal(curves["intrinsic"].theta_lower, curves["rough"].theta_lower)
    assert np.array_equal(curves["intrinsic"].theta_upper, curves["rough"].theta_upper)


def test_ordering_and_nesting(curves):
    rough = curves["rough"]
    for c in curves.values():
        assert np.all(c.theta_lower <= c.theta_upper + 1e-8)
    nal = curves["non-attracted-left"]
    assert np.all(nal.theta_lower >= rough.theta_lower - 1e-8)
    assert np.all(nal.theta_upper <= rough.theta_upper + 1e-8)


def test_provenance_records_generators(curves, bs_deep_inputs):
    prov = curves["non-attracted-left"].provenance
    assert prov["lower"]["lambda"] == bs_deep_inputs.beta()
    assert prov["lower"]["profile"] == "H"
    assert prov["upper"]["lambda"] == 0.0


def test_theta_at(bs_deep, curves):
    assert theta_at(bs_deep, curves["rough"], 3.7) == pytest.approx((-0.5, 0.2), abs=1e-8)
    lo, hi = theta_at(bs_deep, curves["non-attracted-left"], 1.0)
    assert lo == pytest.approx(-0.15, abs=1e-4) and hi == pytest.approx(0.2, abs=1e-8)
    with pytest.raises(ValueError):
        theta_at(bs_deep, curves["rough"], 1e5)


def test_brownian_bounds_vanish(brownian):
    c = theta_bounds(brownian, "rough")
    assert np.allclose(c.theta_lower, 0.0, atol=1e-6) and np.allclose(c.theta_upper, 0.0, atol=1e-6)
    assert theta_at(brownian, c, 0.0) == pytest.approx((0.0, 0.0), abs=1e-6)


def test_return_bounds_need_asset_state(brownian):
    with pytest.raises(BoundsError):
        return_bounds(brownian, theta_bounds(brownian, "rough"))


def test_unbounded_side_when_no_threshold(x2dw):
    c = theta_bounds(x2dw, "intrinsic")
    assert np.all(np.isposinf(c.theta_upper))
    assert c.provenance["upper"]["profile"] is None


def test_unknown_variant(bs):
    with pytest.raises(ValueError):
        theta_bounds(bs, "tight")


def test_interior_pairs_lie_inside_intrinsic_bounds(bs_deep, bs_deep_inputs, curves):
    lam = 0.5 * bs_deep_inputs.beta()
    ci = candidate_interval(bs_deep, lam)
    H = bs_deep_inputs.extremal(lam, "max")
    c = curves["intrinsic"]
    core = bs_deep.core_slice
    sig = bs_deep.vol(bs_deep.grid)
    for frac in (0.1, 0.5, 0.9):
        prof = general_solution(bs_deep, lam, frac * ci.width - ci.width, H=H)
        theta = sig * prof.w[core]
        ok = np.isfinite(theta)
        assert ok.sum() > 0.9 * ok.size
        assert np.all(theta[ok] >= c.theta_lower[ok] - 1e-6)
        assert np.all(theta[ok] <= c.theta_upper[ok] + 1e-6)
