import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgreen import monotonicity as mono
from pgreen.geometry import FOUR_PI, make_metric
from pgreen.green import level_functionals, level_grid, solve_green

EUC = make_metric("euclidean")
HYP = make_metric("hyperbolic")
PC8 = make_metric("power_cap", {"alpha": 0.8, "transition": 2.0})


@pytest.fixture(scope="module")
def prof():
    out = {("euc", p): solve_green(EUC, p) for p in (1.2, 1.5, 2.0)}
    out["pc8", 1.5] = solve_green(PC8, 1.5)
    out["pc8", 2.0] = solve_green(PC8, 2.0)
    out["hyp", 1.5] = solve_green(HYP, 1.5)
    return out


def test_lambda_for_beta_examples():
    lm, lp = mono.lambda_for_beta(2.0, 2.0)
    assert (lm, lp) == pytest.approx((2.0, 4.0), rel=1e-15)
    assert mono.lambda_for_beta(1.5, 4.0 / 3.0)[0] == pytest.approx(2.0, rel=1e-12)
    beta = 1 + 1e-9
    lm, lp = mono.lambda_for_beta(2.0, beta)
    disc = (beta + 1) ** 2 - 4 * beta * (beta + 1) / 3
    assert lp == pytest.approx((beta + 1) + math.sqrt(disc), rel=1e-15)
    assert lm == pytest.approx((beta + 1) - math.sqrt(disc), rel=1e-12)
    with pytest.raises(mono.AdmissibilityError):
        mono.lambda_for_beta(1.1, 10.0)


@given(st.floats(1.01, 2.0), st.floats(1.0 + 1e-6, 3.0))
@settings(max_examples=200, deadline=None)
def test_roots_satisfy_constraint(p, beta):
    try:
        roots = mono.lambda_for_beta(p, beta)
    except mono.AdmissibilityError:
        return
    for lam in roots:
        assert mono.constraint_residual(p, beta, lam) <= 1e-12 * beta * (beta + 1)


@given(st.floats(1.01, 2.0))
@settings(max_examples=100, deadline=None)
def test_default_pair_is_smaller_root(p):
    beta = 2.0 / (3.0 - p)
    assert mono.lambda_for_beta(p, beta)[0] == pytest.approx(2.0, rel=1e-12)
    lb = mono.default_pair(p)
    assert lb.admissible
    assert lb.exponent == pytest.approx(-1.0, abs=1e-14)


def test_admissibility_flags():
    assert mono.make_lambda_beta(2.0, 2.0, 4.0).admissible
    assert not mono.make_lambda_beta(2.0, 2.0, 3.0).admissible
    assert not mono.make_lambda_beta(2.0, 0.5, 1.0).admissible
    # (5-p) + (3p-7) beta < 0 for beta > 1.4 at p = 1.5
    assert not mono.make_lambda_beta(1.5, 2.9, 2.0).admissible


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0])
def test_flat_equalities(prof, p):
    g = prof["euc", p]
    lv = level_grid(g, 64)
    tb = mono.level_table(g, lv)
    ra = mono.check_theorem_a(g, lv, table=tb)
    rb = mono.check_theorem_b(g, lv, table=tb)
    assert ra.passed and abs(ra.worst_margin) <= 1e-9
    assert rb.passed and abs(rb.worst_margin) <= 1e-12
    assert rb.details["M_max_abs_normalized"] <= 1e-8
    rc, rd = mono.check_corollary_cd(g, lv, table=tb)
    assert abs(rc.worst_margin) <= 1e-12 and abs(rd.worst_margin) <= 1e-12
    assert rd.details["holder_chain_min"] >= 1 - 1e-10
    np.testing.assert_allclose(tb.area, (FOUR_PI * g.p.c_p**2 * tb.t**2) ** (-(p - 1) / (3 - p)),
                               rtol=1e-12)


def test_generalized_flat_and_reduction(prof):
    g = prof["euc", 1.5]
    lv = level_grid(g, 64)
    rg, ri = mono.check_generalized(g, mono.make_lambda_beta(1.5, 4 / 3, 2.0), lv)
    assert abs(rg.worst_margin) <= 1e-9 and abs(ri.worst_margin) <= 1e-12
    red = ri.details["reduction"]
    assert red["exponent_plus_one"] <= 1e-14 and red["coefficient_rel_error"] <= 1e-14
    assert red["I_minus_M_rel"] <= 1e-12
    # the reduction at p = 2: beta - 3 lambda / 2 = -1, coefficient 4 pi c_p^2
    lb = mono.default_pair(2.0)
    assert lb.exponent == -1.0
    coef = FOUR_PI / ((lb.beta - 1) * (lb.exponent + 2)) * 1.0
    assert coef == pytest.approx(FOUR_PI, rel=1e-14)


def test_reduction_identity_shared_levels(prof):
    g = prof["pc8", 1.5]
    lv = level_grid(g, 32)
    tb = mono.level_table(g, lv)
    M = mono.monotone_quantity(g.p, tb.t, tb.F)
    lb = mono.default_pair(1.5)
    I = tb.t ** lb.exponent * tb.F - FOUR_PI * g.p.c_p / ((lb.beta - 1) * (lb.exponent + 2)) \
        * tb.t ** (lb.exponent + 2)
    # M is a difference of two large terms; compare at their scale
    scale = tb.F / tb.t + FOUR_PI * g.p.c_p**2 * tb.t
    assert np.all(np.abs(I - M) <= 1e-12 * scale)
    M2 = np.array([level_functionals(g, t).M for t in lv])
    assert np.all(np.abs(M2 - M) <= 1e-12 * scale)


def test_generalized_rejects_inadmissible(prof):
    with pytest.raises(mono.AdmissibilityError):
        mono.check_generalized(prof["euc", 2.0], mono.make_lambda_beta(2.0, 2.0, 3.0), [0.1, 0.2])


def test_power_cap_claims(prof):
    g = prof["pc8", 1.5]
    lv = level_grid(g, 64)
    assert mono.check_theorem_a(g, lv).passed
    rc, rd = mono.check_corollary_cd(g, lv)
    assert rc.passed and rd.passed
    g2 = prof["pc8", 2.0]
    lv2 = level_grid(g2, 128)
    assert mono.check_theorem_b(g2, lv2).passed
    _, ri = mono.check_generalized(g2, mono.make_lambda_beta(2.0, 2.0, 4.0), lv2)
    assert ri.passed


def test_hyperbolic_recorded(prof):
    g = prof["hyp", 1.5]
    lv = level_grid(g, 32)
    rep = mono.check_theorem_b(g, lv)
    assert not rep.in_hypothesis and rep.status == "recorded"
    assert np.isfinite(rep.worst_margin)
    d = rep.to_json_dict()
    assert {"claim", "p", "metric", "levels", "worst_margin", "violations", "tolerances"} <= set(d)
    with pytest.raises(mono.CertificationError):
        mono.check_corollary_cd(g, lv)


def test_detector_finds_injected_violation():
    p = 1.5
    cp = (3 - p) / (p - 1)
    F = lambda t: FOUR_PI * cp**2 * t**2 * (1 + 0.1 * np.sin(np.log(t)))
    src = mono.SyntheticLevels(p, F, (1e-6, 1e6))
    lv = np.geomspace(1e-4, 1e4, 64)
    ra = mono.check_theorem_a(src, lv)
    rb = mono.check_theorem_b(src, lv)
    assert ra.violations and not ra.passed
    assert rb.violations and not rb.passed
    assert (len(ra.violations) > 0) == (ra.worst_margin < -ra.tolerance)


@given(st.floats(0.01, 0.5), st.floats(-3.0, 3.0))
@settings(max_examples=30, deadline=None)
def test_detector_soundness(amp, phase):
    # any sinusoidal perturbation of the flat F violates (a) on some level
    p = 2.0
    F = lambda t: FOUR_PI * t**2 * (1 + amp * np.sin(np.log(t) + phase))
    src = mono.SyntheticLevels(p, F, (1e-6, 1e6))
    assert mono.check_theorem_a(src, np.geomspace(1e-3, 1e3, 64)).violations


def test_unperturbed_flat_synthetic_clean():
    src = mono.SyntheticLevels(1.2, lambda t: FOUR_PI * 81 * t**2, (1e-6, 1e6))
    lv = np.geomspace(1e-4, 1e4, 64)
    for rep in (mono.check_theorem_a(src, lv), mono.check_theorem_b(src, lv)):
        assert not rep.violations


def test_theorem_ordering(prof):
    # a pass of (a) at every level comes with a pass of (b) on the same levels
    for key in (("pc8", 1.5), ("pc8", 2.0), ("euc", 1.2)):
        g = prof[key]
        lv = level_grid(g, 64)
        tb = mono.level_table(g, lv)
        if mono.check_theorem_a(g, lv, table=tb).passed:
            assert mono.check_theorem_b(g, lv, table=tb).passed


def test_rigidity_flat(prof):
    g = prof["euc", 1.5]
    lv = level_grid(g, 32)
    d = mono.rigidity_diagnostics(g, lv)
    assert d["matched"]
    C = (48 * math.pi**2) ** (4 / 3) / (4 * math.pi) ** 2
    np.testing.assert_allclose(d["ratio_grad"], C, rtol=1e-12)
    g2 = prof["euc", 2.0]
    d2 = mono.rigidity_diagnostics(g2, level_grid(g2, 16))
    np.testing.assert_allclose(d2["hess_Q_rad"], 1.0, rtol=1e-12)
    np.testing.assert_allclose(d2["hess_Q_tan"], 1.0, rtol=1e-12)
    assert mono.check_rigidity(g, lv).passed


def test_rigidity_power_cap_deviates(prof):
    g = prof["pc8", 2.0]
    d = mono.rigidity_diagnostics(g, level_grid(g, 32))
    assert d["deviation"]["ratio_grad"] > 0.0 and not d["matched"]
    rep = mono.check_rigidity(g, level_grid(g, 32))
    assert rep.passed and not rep.details["flat"]
