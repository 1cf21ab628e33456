import math

import numpy as np
import pytest

from riskbounds.admissibility import (EXPLOSIVE, NON_EXPLOSIVE, UNRESOLVED, AdmissibilityError,
                                      UnresolvedVerdictError, attraction_classification,
                                      compute_thresholds, feller_explosion_test, feller_verdict,
                                      is_admissible, transformed_drift)
from riskbounds.candidate import extremal_solution
from riskbounds.odecore import SolutionProfile, integrate_solution


def constant_profile(model):
    n = len(model.extended_grid)
    return SolutionProfile(0.0, 0.0, model.extended_grid, np.zeros(n), np.zeros(n), model.xi_index)


def test_drift_of_linear_transform(bs_deep):
    H = extremal_solution(bs_deep, 0.0, "max")
    xs = bs_deep.grid
    b = transformed_drift(bs_deep, H)[bs_deep.core_slice]
    assert np.allclose(b, (0.05 + 0.04) * xs, rtol=1e-9, atol=0)


def test_drift_of_power_transform(bs_deep):
    h = extremal_solution(bs_deep, 0.0, "min")
    xs = bs_deep.grid
    b = transformed_drift(bs_deep, h)[bs_deep.core_slice]
    assert np.allclose(b, -0.05 * xs, rtol=1e-8, atol=0)


def test_constant_profile_leaves_drift_unchanged(cir):
    b = transformed_drift(cir, constant_profile(cir))
    assert np.array_equal(b, cir.drift(cir.extended_grid))


def test_transform_needs_positive_profile(bs):
    with pytest.raises(AdmissibilityError):
        transformed_drift(bs, integrate_solution(bs, 0.0, 2.0))


@pytest.mark.parametrize("values, verdict", [
    ([1.0, 2.0, 3.0, 4.0], NON_EXPLOSIVE),  # linear growth
    ([0.5, 1.0, 4.0, 9.0, 16.0], NON_EXPLOSIVE),
    ([1.0, 1.5, 1.75, 1.875, 1.9375], EXPLOSIVE),  # geometric convergence
    ([1.0, 1.0 + 1e-5], EXPLOSIVE),
    ([1.0, 2.5], NON_EXPLOSIVE),
    ([1.0, 1.3], UNRESOLVED),
    ([1.0], UNRESOLVED),
])
def test_verdict_rule(values, verdict):
    assert feller_verdict(np.log(values))[0] == verdict


def test_black_scholes_linear_transform_keeps_away_from_zero(bs_deep):
    H = extremal_solution(bs_deep, 0.0, "max")
    res = feller_explosion_test(bs_deep, transformed_drift(bs_deep, H), "left")
    assert res.verdict == NON_EXPLOSIVE
    assert np.all(np.diff(res.log_values) > 0)


def test_inverse_bessel_transform_explodes(x2dw):
    H = extremal_solution(x2dw, 0.0, "max")
    assert H.slope0 == pytest.approx(1.0, abs=1e-4)
    res = feller_explosion_test(x2dw, transformed_drift(x2dw, H), "right")
    assert res.verdict == EXPLOSIVE
    # the exact right-tail integral converges like 1 - 2/M
    vals = res.values
    lo, hi = x2dw.window(res.levels[-1])
    assert vals[-1] == pytest.approx(1.0 - 2.0 / hi + 1.0 / hi**2, abs=2e-3)


def test_brownian_does_not_explode(brownian):
    drift = transformed_drift(brownian, constant_profile(brownian))
    for side in ("left", "right"):
        assert feller_explosion_test(brownian, drift, side).verdict == NON_EXPLOSIVE


def test_feller_rejects_nonfinite_drift(bs):
    drift = np.full(len(bs.extended_grid), np.nan)
    with pytest.raises(AdmissibilityError):
        feller_explosion_test(bs, drift, "left")


@pytest.mark.parametrize("side", ["max", "min"])
def test_black_scholes_pairs_at_zero_are_admissible(bs_deep, side):
    rep = is_admissible(bs_deep, 0.0, extremal_solution(bs_deep, 0.0, side))
    assert rep.admissible is True


def test_strict_local_martingale_pair_is_not_admissible(x2dw):
    rep = is_admissible(x2dw, 0.0, extremal_solution(x2dw, 0.0, "max"))
    assert rep.admissible is False
    assert rep.right_explosion == EXPLOSIVE and rep.left_explosion == NON_EXPLOSIVE


def test_attraction_black_scholes(bs):
    H = extremal_solution(bs, 0.0, "max")
    h = extremal_solution(bs, 0.0, "min")
    assert attraction_classification(bs, 0.0, H, "left") == "non-attracted"
    assert attraction_classification(bs, 0.0, h, "left") == "possibly-attracted"
    assert attraction_classification(bs, 0.0, h, "right") == "non-attracted"
    assert attraction_classification(bs, 0.0, H, "right") == "possibly-attracted"


def test_attraction_only_at_the_maximal_slope(bs):
    from riskbounds.candidate import candidate_interval, general_solution

    ci = candidate_interval(bs, 0.0)
    for frac in (0.0, 0.3, 0.7, 0.999):
        slope = ci.slope_min + frac * ci.width
        prof = general_solution(bs, 0.0, slope - ci.slope_max)
        assert attraction_classification(bs, 0.0, prof, "left", ci) == "possibly-attracted"


def test_attraction_brownian_both_sides(brownian):
    from dataclasses import replace

    from riskbounds.candidate import candidate_interval

    ci = candidate_interval(brownian, 0.0)
    # the truncated window leaves a width of ~1e-7; compare at that resolution
    ci = replace(ci, tolerance=max(ci.tolerance, ci.width))
    one = constant_profile(brownian)
    assert attraction_classification(brownian, 0.0, one, "left", ci) == "non-attracted"
    assert attraction_classification(brownian, 0.0, one, "right", ci) == "non-attracted"


def test_thresholds_black_scholes(bs_deep_inputs):
    th = bs_deep_inputs.threshold()
    assert th.ell == 0.0 and th.L_cap == 0.0
    assert th.scan_resolution == pytest.approx(1e-4 * bs_deep_inputs.beta())


def test_thresholds_strict_local_martingale(x2dw):
    th = compute_thresholds(x2dw, 0.0)
    assert th.ell == 0.0
    assert math.isinf(th.L_cap)


def test_thresholds_brownian(brownian):
    th = compute_thresholds(brownian, 0.0)
    assert th.ell == 0.0 and th.L_cap == 0.0


def test_unresolved_verdict_aborts_scan(cir):
    from riskbounds.spectral import beta_bar

    bb = beta_bar(cir).beta_bar
    with pytest.raises(UnresolvedVerdictError) as info:
        compute_thresholds(cir, bb)
    assert 0.0 < info.value.lam <= bb


def test_admissible_set_is_an_up_set(cir):
    from riskbounds.spectral import beta_bar

    bb = beta_bar(cir).beta_bar
    verdicts = [is_admissible(cir, lam, extremal_solution(cir, lam, "max")).admissible
                for lam in np.linspace(0.0, 0.95 * bb, 6)]
    assert verdicts == [True] * 6
    verdicts = [is_admissible(cir, lam, extremal_solution(cir, lam, "min")).admissible
                for lam in np.linspace(0.0, 0.95 * bb, 6)]
    assert verdicts == [False] * 6
