"""Rotationally symmetric 3-metrics g = dr^2 + w(r)^2 g_{S^2} and their curvature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .quadrature import integrate_log

FOUR_PI = 4.0 * math.pi
FAMILIES = ("euclidean", "power_cap", "sphere", "hyperbolic", "custom_table")


class MetricError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PParam:
    """Exponent of the p-Laplacian together with its admissibility rule."""

    p: float
    smooth_override: bool = False

    def __post_init__(self):
        p = float(self.p)
        upper_ok = p < 3.0 if self.smooth_override else p <= 2.0
        if not (p > 1.0 and upper_ok):
            rng = "(1, 3)" if self.smooth_override else "(1, 2]"
            raise ValueError(f"p={p!r} outside {rng}")
        object.__setattr__(self, "p", p)

    @property
    def c_p(self) -> float:
        return (3.0 - self.p) / (self.p - 1.0)

    @property
    def q(self) -> float:
        """Exponent 1/(p-1) turning area into gradient: |u'| = A^{-q}."""
        return 1.0 / (self.p - 1.0)


def as_pparam(p) -> PParam:
    if isinstance(p, PParam):
        return p
    return PParam(float(p), smooth_override=float(p) > 2.0)


@dataclass(frozen=True)
class WarpedMetric:
    family: str
    params: Mapping[str, float]
    r_max: float
    pole_complete: bool
    scale: float
    _w: Callable = field(repr=False, compare=False)
    _dw: Callable = field(repr=False, compare=False)
    _d2w: Callable = field(repr=False, compare=False)
    _w_minus_r: Callable = field(repr=False, compare=False)
    _tail: Callable | None = field(default=None, repr=False, compare=False)
    # smallest radius from which _tail is valid
    tail_start: float = 0.0
    # radius whose last decade is used for the asymptotic exponent fit
    far_radius: float = math.inf

    @property
    def label(self) -> str:
        inner = ",".join(f"{k}={self.params[k]!r}" for k in sorted(self.params)
                         if k != "table_r" and k != "table_w")
        return f"{self.family}({inner})" if inner else self.family

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0.0)) or np.any(r >= self.r_max):
            raise DomainError(f"radius outside (0, {self.r_max}) for {self.label}")
        return r

    def w(self, r):
        return self._w(self._check(r))

    def dw(self, r):
        return self._dw(self._check(r))

    def d2w(self, r):
        return self._d2w(self._check(r))

    def w_minus_r(self, r):
        """w(r) - r without cancellation near the pole."""
        return self._w_minus_r(self._check(r))

    def area(self, r):
        w = self.w(r)
        return FOUR_PI * w * w

    def tail_integral(self, q: float, R: float) -> float:
        """Integral of A(s)^(-q) over [R, inf); exact model tail where known."""
        if not math.isinf(self.r_max):
            raise MetricError(f"{self.label} is bounded; no tail")
        if self._tail is not None and R >= self.tail_start:
            return float(self._tail(q, R))
        return fitted_power_tail(self, q, R)


def fitted_power_tail(metric: WarpedMetric, q: float, R: float) -> float:
    """Tail from the local power law w ~ w(R) (r/R)^gamma, gamma = R w'/w."""
    w = float(metric.w(R))
    gamma = R * float(metric.dw(R)) / w
    kappa = 2.0 * q * gamma - 1.0
    if kappa <= 0:
        return math.inf
    return (FOUR_PI * w * w) ** (-q) * R / kappa


# ---------------------------------------------------------------------------
# families


def _sinh_minus_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    # x^3/3! + x^5/5! + ... through x^15; truncation < 1e-17 relative for |x|<0.5
    series = xs * x2 / 6.0 * (1 + x2 / 20 * (1 + x2 / 42 * (1 + x2 / 72 * (
        1 + x2 / 110 * (1 + x2 / 156 * (1 + x2 / 210))))))
    return np.where(small, series, np.sinh(x) - x)


def _sin_minus_x(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    series = -xs * x2 / 6.0 * (1 - x2 / 20 * (1 - x2 / 42 * (1 - x2 / 72 * (
        1 - x2 / 110 * (1 - x2 / 156 * (1 - x2 / 210))))))
    return np.where(small, series, np.sin(x) - x)


def _euclidean() -> WarpedMetric:
    def tail(q, R):
        k = 2.0 * q - 1.0
        return FOUR_PI ** (-q) * R ** (-k) / k if k > 0 else math.inf

    return WarpedMetric(
        "euclidean", MappingProxyType({}), math.inf, True, 1.0,
        _w=lambda r: np.array(r, dtype=float),
        _dw=lambda r: np.ones_like(r),
        _d2w=lambda r: np.zeros_like(r),
        _w_minus_r=lambda r: np.zeros_like(r),
        _tail=tail, tail_start=0.0, far_radius=1e6,
    )


def _sphere() -> WarpedMetric:
    return WarpedMetric(
        "sphere", MappingProxyType({}), math.pi, True, 1.0,
        _w=np.sin, _dw=np.cos, _d2w=lambda r: -np.sin(r),
        _w_minus_r=_sin_minus_x,
    )


def _hyperbolic() -> WarpedMetric:
    def tail(q, R):
        # sinh^{-2q} s = 2^{2q} sum_k (2q)_k/k! e^{-(2q+2k)s}
        m = 2.0 * q
        total, k, coeff = 0.0, 0, 1.0
        while True:
            term = coeff * math.exp(-(m + 2 * k) * R) / (m + 2 * k)
            total += term
            if term <= 1e-17 * total or k > 200:
                break
            coeff *= (m + k) / (k + 1)
            k += 1
        return FOUR_PI ** (-q) * 2.0 ** m * total

    return WarpedMetric(
        "hyperbolic", MappingProxyType({}), math.inf, True, 1.0,
        _w=np.sinh, _dw=np.cosh, _d2w=np.sinh,
        _w_minus_r=_sinh_minus_x,
        _tail=tail, tail_start=2.0, far_radius=60.0,
    )


def _smootherstep(x):
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


def _smootherstep_prime(x):
    return 30.0 * x * x * (1.0 - x) ** 2


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _power_cap(params) -> WarpedMetric:
    try:
        alpha = float(params["alpha"])
        T = float(params["transition"])
    except KeyError as exc:
        raise MetricError(f"power_cap needs parameter {exc.args[0]!r}") from None
    r1 = float(params.get("inner", 0.5 * T))
    if not 0.0 < alpha < 1.0:
        raise MetricError(f"power_cap alpha={alpha!r} must lie in (0, 1)")
    if not 0.0 < r1 < T:
        raise MetricError("power_cap needs 0 < inner < transition")
    if "p" in params:
        p = float(params["p"])
        if not alpha > 0.5 * (p - 1.0):
            raise MetricError(
                f"power_cap alpha={alpha!r} not in ((p-1)/2, 1) for p={p!r}; "
                "metric would be p-parabolic"
            )
    L = T - r1
    # power part a r^alpha with unit slope at the inner radius
    a = r1 ** (1.0 - alpha) / alpha

    def P(r):
        return a * r ** alpha

    def dP(r):
        return a * alpha * r ** (alpha - 1.0)

    def d2P(r):
        return a * alpha * (alpha - 1.0) * r ** (alpha - 2.0)

    def deficit(r):
        # integral over [r1, r] of s(x) (1 - P'(rho)); zero for r <= r1
        r = np.asarray(r, dtype=float)
        half = 0.5 * (r - r1)
        rho = r1 + half[..., None] * (1.0 + _GL_X)
        vals = _smootherstep((rho - r1) / L) * (1.0 - dP(rho))
        return half * (vals @ _GL_W)

    b = float(T - deficit(np.array(T)) - P(T))

    def regions(r):
        return r <= r1, (r > r1) & (r < T), r >= T

    def w_minus_r(r):
        r = np.asarray(r, dtype=float)
        inner, ramp, outer = regions(r)
        out = np.zeros_like(r)
        if np.any(ramp):
            out[ramp] = -deficit(r[ramp])
        if np.any(outer):
            out[outer] = P(r[outer]) + b - r[outer]
        return out

    def w(r):
        r = np.asarray(r, dtype=float)
        inner, ramp, outer = regions(r)
        out = np.array(r, dtype=float, copy=True)
        if np.any(ramp):
            out[ramp] = r[ramp] - deficit(r[ramp])
        if np.any(outer):
            out[outer] = P(r[outer]) + b
        return out

    def dw(r):
        r = np.asarray(r, dtype=float)
        inner, ramp, outer = regions(r)
        out = np.ones_like(r)
        x = (r[ramp] - r1) / L
        out[ramp] = 1.0 - _smootherstep(x) * (1.0 - dP(r[ramp]))
        out[outer] = dP(r[outer])
        return out

    def d2w(r):
        r = np.asarray(r, dtype=float)
        inner, ramp, outer = regions(r)
        out = np.zeros_like(r)
        rr = r[ramp]
        x = (rr - r1) / L
        out[ramp] = (-_smootherstep_prime(x) / L * (1.0 - dP(rr))
                     + _smootherstep(x) * d2P(rr))
        out[outer] = d2P(r[outer])
        return out

    def tail(q, R):
        # (a s^alpha + b)^{-2q} = a^{-2q} s^{-2q alpha} sum_k C(-2q,k) (b/(a s^alpha))^k
        m = 2.0 * q
        x = b / (a * R ** alpha)
        if abs(x) >= 0.5:
            return fitted_power_tail(metric, q, R)
        total, k, coeff = 0.0, 0, 1.0
        while True:
            expo = alpha * (m + k) - 1.0
            if expo <= 0:
                return math.inf
            term = coeff * x ** k / expo
            total += term
            if abs(term) <= 1e-17 * abs(total) or k > 400:
                break
            coeff *= (-m - k) / (k + 1)
            k += 1
        return FOUR_PI ** (-q) * a ** (-m) * R ** (1.0 - alpha * m) * total

    stored = {"alpha": alpha, "transition": T}
    if "inner" in params:
        stored["inner"] = r1
    if "p" in params:
        stored["p"] = float(params["p"])
    metric = WarpedMetric(
        "power_cap", MappingProxyType(stored), math.inf, True, T,
        _w=w, _dw=dw, _d2w=d2w, _w_minus_r=w_minus_r,
        _tail=tail, tail_start=max(T, (4.0 * abs(b) / a) ** (1.0 / alpha)),
        far_radius=1e6 * T,
    )
    return metric


def _custom_table(params) -> WarpedMetric:
    try:
        rs = np.asarray(params["table_r"], dtype=float)
        ws = np.asarray(params["table_w"], dtype=float)
    except KeyError as exc:
        raise MetricError(f"custom_table needs {exc.args[0]!r}") from None
    if rs.ndim != 1 or rs.shape != ws.shape or rs.size < 4:
        raise MetricError("custom_table needs matching 1-d tables of >= 4 points")
    if np.any(np.diff(rs) <= 0):
        raise MetricError("custom_table radii must be strictly increasing")
    pole = bool(params.get("pole_complete", False))
    if pole and not (rs[0] == 0.0 and ws[0] == 0.0):
        raise MetricError("pole_complete table must start at (0, 0)")
    inner = ws[1:] if rs[0] == 0.0 else ws
    if np.any(inner <= 0):
        raise MetricError("custom_table needs w > 0 away from the pole")
    spline = CubicSpline(rs, ws)
    d1, d2 = spline.derivative(1), spline.derivative(2)
    rN, wN = float(rs[-1]), float(ws[-1])
    gamma = params.get("tail_exponent")
    r_max = math.inf if gamma is not None else rN
    gamma = float(gamma) if gamma is not None else 0.0

    def piece(inside, outside):
        def ev(r):
            r = np.asarray(r, dtype=float)
            return np.where(r <= rN, inside(np.minimum(r, rN)), outside(np.maximum(r, rN)))
        return ev

    w = piece(spline, lambda r: wN * (r / rN) ** gamma)
    dw = piece(d1, lambda r: gamma * wN / rN * (r / rN) ** (gamma - 1.0))
    d2w = piece(d2, lambda r: gamma * (gamma - 1.0) * wN / rN**2 * (r / rN) ** (gamma - 2.0))

    def tail(q, R):
        k = 2.0 * q * gamma - 1.0
        if k <= 0:
            return math.inf
        return (FOUR_PI * wN * wN) ** (-q) * rN * (R / rN) ** (-k) / k

    stored = {k: v for k, v in params.items()}
    return WarpedMetric(
        "custom_table", MappingProxyType(stored), r_max, pole, rN,
        _w=w, _dw=dw, _d2w=d2w, _w_minus_r=lambda r: w(r) - np.asarray(r, dtype=float),
        _tail=tail, tail_start=rN,
        far_radius=1e6 * rN,
    )


def make_metric(family: str, params: Mapping | None = None) -> WarpedMetric:
    """Build one of the built-in warped metrics.

    ``power_cap`` is w(r) = r on (0, inner], a quintic smootherstep blend of
    w' on [inner, transition], and a r^alpha + b beyond; w'' <= 0 and
    0 < w' <= 1 hold by construction so that R >= 0 and Ric >= 0.
    """
    params = dict(params or {})
    if family == "euclidean":
        return _euclidean()
    if family == "sphere":
        return _sphere()
    if family == "hyperbolic":
        return _hyperbolic()
    if family == "power_cap":
        return _power_cap(params)
    if family == "custom_table":
        return _custom_table(params)
    raise MetricError(f"unknown metric family {family!r}; expected one of {FAMILIES}")


# ---------------------------------------------------------------------------
# curvature


@dataclass(frozen=True)
class CurvatureSample:
    r: np.ndarray
    R_scalar: np.ndarray
    ric_radial: np.ndarray
    ric_tangential: np.ndarray
    H_sphere: np.ndarray
    area: np.ndarray


def curvature_at(metric: WarpedMetric, r) -> CurvatureSample:
    r = np.asarray(r, dtype=float)
    w, dw, d2w = metric.w(r), metric.dw(r), metric.d2w(r)
    if np.any(w <= 0):
        raise DomainError("w(r) <= 0")
    k_rad = -d2w / w
    k_sph = (1.0 - dw * dw) / (w * w)
    return CurvatureSample(
        r=r,
        R_scalar=2.0 * k_sph + 4.0 * k_rad,
        ric_radial=2.0 * k_rad,
        ric_tangential=k_rad + k_sph,
        H_sphere=2.0 * dw / w,
        area=FOUR_PI * w * w,
    )


def hessian_radial(metric: WarpedMetric, r, df, d2f):
    """Orthonormal-frame Hessian (radial, tangential) of a radial function."""
    r = np.asarray(r, dtype=float)
    return np.asarray(d2f, dtype=float) * np.ones_like(r), df * metric.dw(r) / metric.w(r)


@dataclass(frozen=True)
class CurvatureCertificate:
    R_min: float
    ric_min: float
    k: float
    scalar_nonnegative: bool
    n_samples: int


def certify_curvature(metric: WarpedMetric, r_grid=None, tol=1e-12) -> CurvatureCertificate:
    """Grid scan for R >= 0 and the smallest k with Ric >= -k."""
    if r_grid is None:
        hi = metric.r_max * 0.999 if math.isfinite(metric.r_max) else 100.0 * metric.scale
        r_grid = log_grid(1e-4, hi, 128)
    cs = curvature_at(metric, r_grid)
    R_min = float(np.min(cs.R_scalar))
    ric_min = float(min(np.min(cs.ric_radial), np.min(cs.ric_tangential)))
    return CurvatureCertificate(
        R_min=R_min,
        ric_min=ric_min,
        k=max(0.0, -ric_min),
        scalar_nonnegative=R_min >= -tol,
        n_samples=int(np.size(r_grid)),
    )


def log_grid(r_lo: float, r_hi: float, per_decade: int = 64) -> np.ndarray:
    n = max(2, int(math.ceil(per_decade * math.log10(r_hi / r_lo))) + 1)
    return np.geomspace(r_lo, r_hi, n)


# ---------------------------------------------------------------------------
# non-parabolicity


@dataclass(frozen=True)
class NonparabolicityResult:
    exists: bool
    tail_integral: float | None
    exponent: float | None


def asymptotic_exponent(metric: WarpedMetric) -> float:
    """Least-squares slope of log w against log r over the last decade."""
    R = metric.far_radius
    r = np.geomspace(R / 10.0, R, 33)
    slope, _ = np.polyfit(np.log(r), np.log(metric.w(r)), 1)
    return float(slope)


def nonparabolicity_check(metric: WarpedMetric, p, r0: float) -> NonparabolicityResult:
    """Decide whether the integral of A^{-1/(p-1)} over [r0, inf) converges."""
    pp = as_pparam(p)
    if not math.isinf(metric.r_max):
        return NonparabolicityResult(False, None, None)
    gamma = asymptotic_exponent(metric)
    if not 2.0 * gamma * pp.q > 1.0:
        return NonparabolicityResult(False, None, gamma)
    q = pp.q
    R = max(r0, metric.tail_start, 10.0 * metric.scale)
    head = 0.0
    if R > r0:
        vals, _ = integrate_log(lambda s: metric.area(s) ** (-q),
                                np.geomspace(r0, R, 65)[:-1], np.geomspace(r0, R, 65)[1:])
        head = float(np.sum(vals))
    return NonparabolicityResult(True, head + metric.tail_integral(q, R), gamma)
