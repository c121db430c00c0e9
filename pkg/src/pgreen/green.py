"""Radial p-Green functions and the level-set functionals built on them.

On a warped product the p-Green function with pole at the center is
radial, and unit flux forces |u'| = A^{-1/(p-1)}; the profile is the
improper integral of that slope from r to infinity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    FOUR_PI,
    PParam,
    WarpedMetric,
    as_pparam,
    hessian_radial,
    log_grid,
    nonparabolicity_check,
)
from .quadrature import QuadratureError, integrate_log, richardson_derivative


class ParabolicMetricError(ValueError):
    pass


class LevelRangeError(ValueError):
    pass


def _check_mu_args(p, r):
    if not 1.0 < p < 3.0:
        raise ValueError(f"p={p!r} outside (1, 3)")
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("r must be positive")
    return r


def mu_model(p: float, r):
    """Euclidean p-Green function (4 pi)^{-1/(p-1)} (p-1)/(3-p) r^{-(3-p)/(p-1)}."""
    r = _check_mu_args(p, r)
    return FOUR_PI ** (-1.0 / (p - 1.0)) * (p - 1.0) / (3.0 - p) * r ** (-(3.0 - p) / (p - 1.0))


def mu_prime(p: float, r):
    r = _check_mu_args(p, r)
    return -FOUR_PI ** (-1.0 / (p - 1.0)) * r ** (-2.0 / (p - 1.0))


def mu_second(p: float, r):
    r = _check_mu_args(p, r)
    return 2.0 / (p - 1.0) * FOUR_PI ** (-1.0 / (p - 1.0)) * r ** (-(p + 1.0) / (p - 1.0))


# ---------------------------------------------------------------------------


class RadialProfile:
    """A strictly decreasing radial function known on a grid plus its slope.

    ``slope(r)`` returns -u'(r) > 0 anywhere in [r[0], r[-1]]; values
    between grid points are recovered by quadrature from the right node.
    """

    metric: WarpedMetric
    r: np.ndarray
    u: np.ndarray

    def slope(self, r):
        raise NotImplementedError

    def value_at(self, r):
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        if np.any(flat < self.r[0] * (1 - 1e-15)) or np.any(flat > self.r[-1] * (1 + 1e-15)):
            raise LevelRangeError("radius outside the computed grid")
        idx = np.clip(np.searchsorted(self.r, flat, side="left"), 1, self.r.size - 1)
        right = self.r[idx]
        vals, _ = integrate_log(self.slope, np.minimum(flat, right), right)
        out = self.u[idx] + vals
        return out.reshape(r.shape) if r.ndim else float(out[0])

    @property
    def t_range(self):
        return float(self.u[-1]), float(self.u[0])

    def invert(self, t):
        """Radius with u(r) = t, by bracketed Newton in log r."""
        t = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t).ravel()
        lo_t, hi_t = self.t_range
        if np.any(~((tt >= lo_t) & (tt <= hi_t))):
            raise LevelRangeError(f"level outside computed range [{lo_t:.6g}, {hi_t:.6g}]")
        rev = self.u[::-1]
        j = np.searchsorted(rev, tt, side="left")
        idx = np.clip(self.r.size - j, 1, self.r.size - 1)
        lo = np.log(self.r[idx - 1])
        hi = np.log(self.r[idx])
        # linear interpolation in (log r, log u) as a starting point
        ul, uh = np.log(self.u[idx - 1]), np.log(self.u[idx])
        x = lo + (np.log(tt) - ul) * (hi - lo) / np.where(uh != ul, uh - ul, 1.0)
        x = np.clip(x, lo, hi)
        for _ in range(80):
            rr = np.exp(x)
            f = self.value_at(rr) - tt
            done = np.abs(f) <= 2e-16 * tt
            # u decreasing: f > 0 means the radius is still too small
            lo = np.where(f > 0, x, lo)
            hi = np.where(f < 0, x, hi)
            step = f / (self.slope(rr) * rr)
            xn = x + step
            bad = (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            converged = done | (np.abs(xn - x) <= 1e-16 * np.abs(x) + 1e-300) | (hi - lo < 1e-15)
            x = np.where(done, x, xn)
            if np.all(converged):
                break
        out = np.exp(x)
        return out.reshape(t.shape) if t.ndim else float(out[0])

    # level-set quantities -------------------------------------------------

    def slope_prime(self, r):
        """d/dr of ``slope``."""
        raise NotImplementedError

    def hessian(self, r):
        """Orthonormal-frame Hessian (h_rad, h_tan) of the profile at r."""
        r = np.asarray(r, dtype=float)
        return hessian_radial(self.metric, r, -self.slope(r), -self.slope_prime(r))

    def F_of_t(self, t):
        """Integral of |grad u|^2 over the level sphere {u = t}."""
        r_t = self.invert(t)
        s = self.slope(r_t)
        return self.metric.area(r_t) * s * s

    def area_of_t(self, t):
        return self.metric.area(self.invert(t))

    def F_prime(self, t, h=1e-3, levels=3):
        """dF/dt by Richardson-extrapolated central differences in log t."""
        return log_derivative(self.F_of_t, t, self.t_range, h, levels)


def log_derivative(func, t, t_range, h=1e-3, levels=3):
    """d func/dt from central differences in log t with Richardson extrapolation."""
    t = np.asarray(t, dtype=float)
    lo, hi = t_range
    if np.any(~((lo < t * math.exp(-h)) & (t * math.exp(h) < hi))):
        raise LevelRangeError("differentiation stencil leaves the profile range")
    g, _ = richardson_derivative(lambda y: func(np.exp(y)), np.log(t), h, levels)
    out = g / t
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GridSpec:
    r_min: float = 1e-4
    r_cut: float | None = None
    per_decade: int = 64


@dataclass(frozen=True)
class LevelFunctionals:
    t: float
    r_t: float
    F: float
    area: float
    flux: float
    M: float


@dataclass(eq=False)
class GreenProfile(RadialProfile):
    metric: WarpedMetric
    p: PParam
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    area: np.ndarray
    tail_estimate: float
    flux_norm: float
    u_minus_mu: np.ndarray = field(repr=False)

    eps = 0.0

    def slope(self, r):
        return self.metric.area(r) ** (-self.p.q)

    def slope_prime(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 * self.p.q * self.metric.dw(r) / self.metric.w(r) * self.slope(r)

    def to_csv(self, path):
        p = self.p.p
        F = self.area * self.du**2
        flux = self.area * np.abs(self.du) ** (p - 1.0)
        M = F / self.u - FOUR_PI * self.p.c_p**2 * self.u
        write_csv(path, ["r", "u", "du", "A", "F", "flux", "M"],
                  [self.r, self.u, self.du, self.area, F, flux, M])


def write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


def _default_r_cut(metric: WarpedMetric) -> float:
    return max(min(1e3 * metric.scale, 0.5 * metric.far_radius), metric.tail_start)


def solve_green(metric: WarpedMetric, p, grid_spec: GridSpec | None = None) -> GreenProfile:
    """Radial p-Green profile with unit flux on a log grid [r_min, r_cut]."""
    pp = as_pparam(p)
    gs = grid_spec or GridSpec()
    if not metric.pole_complete:
        raise ValueError(f"{metric.label} is not pole-complete")
    check = nonparabolicity_check(metric, pp, gs.r_min)
    if not check.exists:
        raise ParabolicMetricError(
            f"parabolic metric: {metric.label} admits no positive p-Green function at p={pp.p}"
        )
    q = pp.q

    def slope(s):
        return metric.area(s) ** (-q)

    r_cut = gs.r_cut if gs.r_cut is not None else _default_r_cut(metric)
    # grow r_cut until the tail model agrees with quadrature over the next decade
    for _ in range(8):
        tail = metric.tail_integral(q, r_cut)
        nxt = np.geomspace(r_cut, 10 * r_cut, 65)
        seg, _ = integrate_log(slope, nxt[:-1], nxt[1:])
        check_tail = float(np.sum(seg)) + metric.tail_integral(q, 10 * r_cut)
        if abs(check_tail - tail) <= 1e-12 * tail or gs.r_cut is not None:
            break
        r_cut *= 10.0
    else:
        raise QuadratureError(f"tail model for {metric.label} did not settle")
    if not math.isfinite(tail):
        raise ParabolicMetricError(f"parabolic metric: tail integral diverges for {metric.label}")

    r = log_grid(gs.r_min, r_cut, gs.per_decade)
    pieces, _ = integrate_log(slope, r[:-1], r[1:], rtol=1e-14)
    u = np.empty_like(r)
    u[-1] = tail
    u[:-1] = tail + np.cumsum(pieces[::-1])[::-1]

    A = metric.area(r)
    du = -A ** (-q)
    d2u = 2.0 * q * metric.dw(r) / metric.w(r) * A ** (-q)
    flux = A * np.abs(du) ** (pp.p - 1.0)
    if not np.all(np.diff(u) < 0) or not np.all(du < 0):
        raise QuadratureError("Green profile failed to be strictly decreasing")

    # u - mu accumulated directly from the slope difference, free of cancellation
    c = FOUR_PI ** (-q)

    def slope_gap(s):
        delta = metric.w_minus_r(s) / s
        return c * s ** (-2.0 * q) * np.expm1(-2.0 * q * np.log1p(delta))

    gaps, _ = integrate_intervals_signed(slope_gap, r)
    flat_tail = c * r_cut ** (1.0 - 2.0 * q) / (2.0 * q - 1.0)
    dev_tail = tail - flat_tail
    u_minus_mu = np.empty_like(r)
    u_minus_mu[-1] = dev_tail
    u_minus_mu[:-1] = dev_tail + np.cumsum(gaps[::-1])[::-1]

    return GreenProfile(
        metric=metric, p=pp, r=r, u=u, du=du, d2u=d2u, area=A,
        tail_estimate=float(tail), flux_norm=float(np.max(np.abs(flux - 1.0))),
        u_minus_mu=u_minus_mu,
    )


def integrate_intervals_signed(f, r):
    """Per-interval integrals of a possibly sign-changing integrand over a grid."""
    vals, errs = integrate_log(f, r[:-1], r[1:], rtol=1e-12, atol=1e-300)
    return vals, errs


def invert_level(profile: RadialProfile, t):
    return profile.invert(t)


def level_functionals(profile: GreenProfile, t: float) -> LevelFunctionals:
    r_t = float(profile.invert(t))
    A = float(profile.metric.area(r_t))
    s = float(profile.slope(r_t))
    F = A * s * s
    cp = profile.p.c_p
    return LevelFunctionals(
        t=float(t), r_t=r_t, F=F, area=A,
        flux=A * s ** (profile.p.p - 1.0),
        M=F / t - FOUR_PI * cp * cp * t,
    )


def level_grid(profile: RadialProfile, n: int, r_lo: float | None = None,
               r_hi: float | None = None, margin: float = 0.05) -> np.ndarray:
    """n log-spaced levels strictly inside the profile's value range.

    ``r_lo``/``r_hi`` restrict the levels to the radii where they live; the
    default keeps one decade away from both grid ends.
    """
    r0, r1 = profile.r[0], profile.r[-1]
    r_lo = max(r_lo if r_lo is not None else 10.0 * r0, r0)
    r_hi = min(r_hi if r_hi is not None else r1 / 10.0, r1)
    t_hi = profile.value_at(r_lo) * math.exp(-margin)
    t_lo = profile.value_at(r_hi) * math.exp(margin)
    if not t_lo < t_hi:
        raise LevelRangeError("empty level window")
    return np.geomspace(t_lo, t_hi, n)


def asymptotics_check(profile: GreenProfile):
    """Scaled deviations from the Euclidean model over the innermost decade.

    Returns a dict of arrays ``r, value_dev, gradient_dev, hessian_dev``
    ordered from the innermost grid point outwards; each deviation is
    multiplied by the power of r that it is o() of near the pole.
    """
    metric = profile.metric
    if not metric.pole_complete:
        raise ValueError(f"{metric.label} is not pole-complete")
    q, cp = profile.p.q, profile.p.c_p
    mask = profile.r <= 10.0 * profile.r[0] * (1 + 1e-12)
    r = profile.r[mask]
    delta = metric.w_minus_r(r) / r
    c = FOUR_PI ** (-q)
    value_dev = np.abs(profile.u_minus_mu[mask]) * r**cp
    gradient_dev = c * np.abs(np.expm1(-2.0 * q * np.log1p(delta)))
    rho_term = (metric.dw(r) - 1.0) * (1.0 + delta) ** (-2.0 * q - 1.0)
    bracket = rho_term + np.expm1(-(2.0 * q + 1.0) * np.log1p(delta))
    hessian_dev = c * math.sqrt(4.0 * q * q + 2.0) * np.abs(bracket)
    return {"r": r, "value_dev": value_dev, "gradient_dev": gradient_dev,
            "hessian_dev": hessian_dev}


def decreases_toward_pole(column, rel=1e-9, floor=None) -> bool:
    """True if ``column`` (innermost first) is nonincreasing toward the pole.

    Round-off is tolerated through ``rel`` and an absolute ``floor``
    (default: 64 ulps of the column maximum).
    """
    col = np.asarray(column, dtype=float)
    if floor is None:
        floor = 64 * np.finfo(float).eps * max(float(np.max(np.abs(col))), 1e-300)
    return bool(np.all(col[:-1] <= col[1:] * (1.0 + rel) + floor))
