import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from pgreen.geometry import (FOUR_PI, DomainError, MetricError, PParam, certify_curvature,
                             curvature_at, hessian_radial, log_grid, make_metric,
                             nonparabolicity_check)

BUILTIN = [
    ("euclidean", {}),
    ("hyperbolic", {}),
    ("sphere", {}),
    ("power_cap", {"alpha": 0.8, "transition": 2.0, "p": 1.5}),
    ("power_cap", {"alpha": 0.7, "transition": 2.0}),
]


def _ricci_scalar_symbolic(f):
    """Scalar curvature of dr^2 + f(r)^2 (dth^2 + sin^2 th dph^2) from Christoffel symbols."""
    r, th, ph = sp.symbols("r theta phi", positive=True)
    x = [r, th, ph]
    g = sp.diag(1, f(r) ** 2, f(r) ** 2 * sp.sin(th) ** 2)
    gi = g.inv()
    n = 3
    gam = [[[sum(gi[a, d] * (sp.diff(g[d, b], x[c]) + sp.diff(g[d, c], x[b])
                             - sp.diff(g[b, c], x[d])) for d in range(n)) / 2
             for c in range(n)] for b in range(n)] for a in range(n)]
    ric = sp.zeros(n)
    for b in range(n):
        for c in range(n):
            ric[b, c] = sum(sp.diff(gam[a][b][c], x[a]) - sp.diff(gam[a][b][a], x[c])
                            + sum(gam[a][a][d] * gam[d][b][c] - gam[a][c][d] * gam[d][b][a]
                                  for d in range(n))
                            for a in range(n))
    R = sp.simplify(sum(gi[b, c] * ric[b, c] for b in range(n) for c in range(n)))
    return r, R


def test_pparam_rules():
    assert PParam(1.5).c_p == pytest.approx(3.0)
    assert PParam(2.0).q == 1.0
    for bad in (1.0, 2.5, 0.5):
        with pytest.raises(ValueError):
            PParam(bad)
    assert PParam(2.5, smooth_override=True).c_p == pytest.approx(1.0 / 3.0)
    with pytest.raises(ValueError):
        PParam(3.0, smooth_override=True)


def test_euclidean_values():
    m = make_metric("euclidean", {})
    assert (m.w(1.0), m.dw(1.0), m.d2w(1.0)) == (1.0, 1.0, 0.0)
    cs = curvature_at(m, 2.0)
    assert cs.R_scalar == 0.0
    assert cs.H_sphere == pytest.approx(1.0, rel=1e-15)


def test_hyperbolic_w_against_series():
    w1 = float(sum(sp.Rational(1, math.factorial(2 * k + 1)) for k in range(20)))
    assert make_metric("hyperbolic").w(1.0) == pytest.approx(w1, rel=1e-15)


@pytest.mark.parametrize("family,fn,r0,expected", [
    ("sphere", sp.sin, math.pi / 2, 6.0),
    ("hyperbolic", sp.sinh, 1.0, -6.0),
])
def test_scalar_curvature_symbolic(family, fn, r0, expected):
    r, R = _ricci_scalar_symbolic(fn)
    assert float(R.subs(r, r0)) == pytest.approx(expected, rel=1e-14)
    assert curvature_at(make_metric(family), r0).R_scalar == pytest.approx(expected, rel=1e-13)


def test_symbolic_formula_matches_generic_warp():
    # the hard-coded R formula agrees with Christoffel symbols for a generic warp
    r, R = _ricci_scalar_symbolic(lambda s: s + s**3 / 7 + sp.sin(s) / 5)
    f = lambda s: s + s**3 / 7 + math.sin(s) / 5
    df = lambda s: 1 + 3 * s**2 / 7 + math.cos(s) / 5
    d2f = lambda s: 6 * s / 7 - math.sin(s) / 5
    for x in (0.3, 1.1, 2.5):
        mine = 2 * (1 - df(x) ** 2) / f(x) ** 2 - 4 * d2f(x) / f(x)
        assert mine == pytest.approx(float(R.subs(r, x)), rel=1e-12)


def _fd_R(m, r):
    h = 1e-4 * r
    ws = m.w(r + h * np.arange(-2, 3))
    d1 = (ws[0] - 8 * ws[1] + 8 * ws[3] - ws[4]) / (12 * h)
    d2 = (-ws[0] + 16 * ws[1] - 30 * ws[2] + 16 * ws[3] - ws[4]) / (12 * h * h)
    w = ws[2]
    return 2 * (1 - d1 * d1) / (w * w) - 4 * d2 / w, 6.0 / (w * w)


@pytest.mark.parametrize("family,params", BUILTIN)
def test_curvature_finite_difference_oracle(family, params):
    m = make_metric(family, params)
    hi = 3.0 if family == "sphere" else 20.0
    for r in np.geomspace(0.05, hi, 40):
        if family == "power_cap" and min(abs(r - 1.0), abs(r - 2.0)) < 1e-3:
            continue  # w''' jumps at the blend ends; the stencil would straddle them
        fd, scale = _fd_R(m, r)
        exact = curvature_at(m, r).R_scalar
        # relative to the curvature scale 6/w^2 so flat space is tested too
        assert abs(fd - exact) <= 1e-6 * max(abs(exact), scale)


@pytest.mark.parametrize("family,params", BUILTIN)
def test_area_positive_on_log_grid(family, params):
    m = make_metric(family, params)
    hi = {"sphere": 3.1, "hyperbolic": 300.0}.get(family, 1e4)
    r = log_grid(1e-4, hi, 64)
    assert r.size >= 256
    a = m.area(r)
    assert np.all(a > 0)
    np.testing.assert_allclose(a, FOUR_PI * m.w(r) ** 2, rtol=1e-15)


def test_power_cap_grid_scan():
    m = make_metric("power_cap", {"alpha": 0.8, "transition": 2.0, "p": 1.5})
    r = np.linspace(1e-3, 50.0, 1000)
    assert np.all(m.d2w(r) <= 0.0)
    assert np.all(m.dw(r) > 0.0) and np.all(m.dw(r) <= 1.0)
    cert = certify_curvature(m)
    assert cert.scalar_nonnegative and cert.k == 0.0
    cs = curvature_at(m, log_grid(1e-4, 1e4, 32))
    assert np.all(cs.R_scalar >= -1e-12)
    assert np.all(cs.ric_radial >= -cert.k) and np.all(cs.ric_tangential >= -cert.k)


def test_power_cap_consistent_derivatives():
    m = make_metric("power_cap", {"alpha": 0.7, "transition": 3.0})
    r = np.array([0.5, 1.7, 2.9, 4.0, 30.0])
    h = 1e-5 * r
    np.testing.assert_allclose((m.w(r + h) - m.w(r - h)) / (2 * h), m.dw(r), rtol=1e-8)
    np.testing.assert_allclose((m.dw(r + h) - m.dw(r - h)) / (2 * h), m.d2w(r),
                               rtol=1e-6, atol=1e-10)


def test_power_cap_errors():
    with pytest.raises(MetricError):
        make_metric("power_cap", {"alpha": 0.4, "transition": 2.0, "p": 2.0})
    with pytest.raises(MetricError):
        make_metric("power_cap", {"alpha": 1.2, "transition": 2.0})
    with pytest.raises(MetricError):
        make_metric("power_cap", {"alpha": 0.8})


def test_custom_table_rules():
    with pytest.raises(MetricError):
        make_metric("custom_table", {"table_r": [0, 2, 1, 3], "table_w": [0, 1, 2, 3]})
    with pytest.raises(MetricError):
        make_metric("custom_table", {"table_r": [0, 1, 2]})
    with pytest.raises(MetricError):
        make_metric("nonsense", {})
    r = np.linspace(0.0, 5.0, 60)
    m = make_metric("custom_table", {"table_r": r.tolist(), "table_w": r.tolist(),
                                     "pole_complete": True, "tail_exponent": 1.0})
    assert m.w(2.345) == pytest.approx(2.345, rel=1e-12)
    assert m.w(50.0) == pytest.approx(50.0, rel=1e-12)


def test_domain_errors():
    s = make_metric("sphere")
    with pytest.raises(DomainError):
        s.w(4.0)
    with pytest.raises(DomainError):
        curvature_at(make_metric("euclidean"), -1.0)


def test_hessian_examples():
    e = make_metric("euclidean")
    assert hessian_radial(e, 3.0, 3.0, 1.0) == (1.0, 1.0)
    # mu for p = 1.5 is r^-3/(48 pi^2); mu' = -3 r^-4/(48 pi^2), mu'' = 12 r^-5/(48 pi^2)
    c = 1 / (48 * math.pi**2)
    h_rad, h_tan = hessian_radial(e, 1.0, -3 * c, 12 * c)
    assert h_tan / h_rad == pytest.approx(-0.25, rel=1e-15)
    h = make_metric("hyperbolic")
    h_rad, h_tan = hessian_radial(h, 1.0, math.sinh(1.0), math.cosh(1.0))
    assert h_rad == pytest.approx(math.cosh(1.0), rel=1e-15)
    assert h_tan == pytest.approx(math.cosh(1.0), rel=1e-15)


@pytest.mark.parametrize("family,params", BUILTIN[:2] + BUILTIN[3:])
def test_trace_identity(family, params):
    # Laplacian of f = 1/r: h_rad + 2 h_tan = (A f')'/A
    m = make_metric(family, params)
    for r in (0.3, 1.3, 4.0):
        h_rad, h_tan = hessian_radial(m, r, -1 / r**2, 2 / r**3)
        flux = lambda s: m.area(s) * (-1 / s**2)
        hh = 1e-4 * r
        fd = (flux(r + hh) - flux(r - hh)) / (2 * hh) / m.area(r)
        assert float(h_rad + 2 * h_tan) == pytest.approx(fd, rel=1e-6)


def test_nonparabolicity_examples():
    res = nonparabolicity_check(make_metric("euclidean"), 2.0, 1.0)
    assert res.exists and res.tail_integral == pytest.approx(1 / (4 * math.pi), rel=1e-12)
    assert nonparabolicity_check(make_metric("euclidean"), PParam(2.99, True), 1.0).exists
    pc = make_metric("power_cap", {"alpha": 0.4, "transition": 2.0})
    assert not nonparabolicity_check(pc, 2.0, 1.0).exists
    assert not nonparabolicity_check(make_metric("sphere"), 2.0, 1.0).exists


def test_power_cap_tail_matches_quadrature():
    from pgreen.quadrature import integrate_log
    m = make_metric("power_cap", {"alpha": 0.8, "transition": 2.0})
    res = nonparabolicity_check(m, 1.5, 1.0)
    edges = np.geomspace(1.0, 1e12, 400)
    head, _ = integrate_log(lambda s: m.area(s) ** -2.0, edges[:-1], edges[1:])
    rest = m.tail_integral(2.0, 1e12)
    assert res.tail_integral == pytest.approx(head.sum() + rest, rel=1e-11)


@given(st.floats(0.6, 0.95), st.floats(0.5, 5.0))
@settings(max_examples=25, deadline=None)
def test_power_cap_always_nonnegative_curvature(alpha, T):
    m = make_metric("power_cap", {"alpha": alpha, "transition": T})
    cert = certify_curvature(m)
    assert cert.R_min >= -1e-12
