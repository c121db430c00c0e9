"""Radial solutions of div((|grad u|^2 + eps)^{(p-2)/2} grad u) = 0 on annuli.

Two independent solvers are provided. Shooting uses the exact first
integral phi_eps(|u'|) |u'| A(r) = c and tunes c to the Dirichlet gap;
``minimize_energy`` minimizes the discretized convex energy with damped
Newton and knows nothing about the first integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .geometry import FOUR_PI, PParam, WarpedMetric, as_pparam
from .green import GreenProfile, LevelRangeError, RadialProfile, write_csv
from .quadrature import integrate_log


class ConvergenceError(RuntimeError):
    pass


class LineSearchError(ConvergenceError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class SolverDisagreement(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# phi_eps calculus


def _check_s_eps(s, eps):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or eps < 0:
        raise ValueError("need s >= 0 and eps >= 0")
    return s


def phi_eps(s, eps, p):
    s = _check_s_eps(s, eps)
    return (s * s + eps) ** ((p - 2.0) / 2.0)


def eta_eps(s, eps, p):
    """Logarithmic derivative s (log phi_eps)'(s) = (p-2) s^2/(s^2+eps)."""
    s = _check_s_eps(s, eps)
    if eps == 0 and np.any(s == 0):
        raise ValueError("eta undefined at s = eps = 0")
    return (p - 2.0) * s * s / (s * s + eps)


def eta_eps_prime(s, eps, p):
    s = _check_s_eps(s, eps)
    if eps == 0 and np.any(s == 0):
        raise ValueError("eta undefined at s = eps = 0")
    return 2.0 * (p - 2.0) * eps * s / (s * s + eps) ** 2


def slope_from_flux(target, eps, p):
    """Solve s (s^2+eps)^{(p-2)/2} = target for s > 0.

    Newton in y = log s. G(y) = y + (p-2)/2 log(e^{2y}+eps) - log(target)
    has G' = 1 + eta in [min(1, p-1), max(1, p-1)]; for p < 2 it is
    concave and Newton started at a lower bound increases monotonically to
    the root, for p > 2 it is convex and we start at an upper bound.
    """
    target = np.asarray(target, dtype=float)
    if np.any(target <= 0):
        raise ValueError("flux target must be positive")
    if p == 2.0:
        return target.copy()
    if eps == 0.0:
        return target ** (1.0 / (p - 1.0))
    b1 = target ** (1.0 / (p - 1.0))
    b2 = target * eps ** ((2.0 - p) / 2.0)
    y = np.log(np.maximum(b1, b2) if p < 2.0 else np.minimum(b1, b2))
    logt = np.log(target)
    for _ in range(100):
        e2 = np.exp(2.0 * y)
        middle = 0.5 * (p - 2.0) * np.log(e2 + eps)
        G = y + middle - logt
        dG = 1.0 + (p - 2.0) * e2 / (e2 + eps)
        # residual at the round-off level of its own terms: done
        noise = 4e-16 * (1.0 + np.abs(y) + np.abs(middle) + np.abs(logt))
        if np.all(np.abs(G) <= noise):
            break
        y = y - G / dG
    else:
        raise ConvergenceError("slope root-finder did not converge to 1e-12")
    return np.exp(y)


# ---------------------------------------------------------------------------
# profiles


@dataclass(eq=False)
class RegularizedProfile(RadialProfile):
    metric: WarpedMetric
    p: PParam
    eps: float
    r_a: float
    r_b: float
    u_a: float
    u_b: float
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    c_flux: float
    method: str = "shooting"

    def slope(self, r):
        A = self.metric.area(r)
        if self.c_flux == 0.0:
            return np.zeros_like(A)
        return slope_from_flux(self.c_flux / A, self.eps, self.p.p)

    def slope_prime(self, r):
        # from log g(s) = log c - log A: (1 + eta) s'/s = -2 w'/w
        r = np.asarray(r, dtype=float)
        s = self.slope(r)
        if self.c_flux == 0.0:
            return np.zeros_like(s)
        eta = eta_eps(s, self.eps, self.p.p)
        return -2.0 * s * self.metric.dw(r) / (self.metric.w(r) * (1.0 + eta))

    def value_at(self, r):
        if self.method == "shooting" and self.c_flux != 0.0:
            return super().value_at(r)
        return np.interp(r, self.r, self.u)

    def flux_residual(self):
        """Relative deviation of phi_eps(|u'|)|u'|A from c_flux on the grid."""
        s = np.abs(self.du)
        flux = phi_eps(s, self.eps, self.p.p) * s * self.metric.area(self.r)
        if self.c_flux == 0.0:
            return flux
        return flux / self.c_flux - 1.0

    def to_csv(self, path, kato=None):
        kato = kato or kato_check(self)
        write_csv(path, ["r", "ue", "due", "c_flux_residual", "eta", "kato_margin_full",
                         "kato_margin_nu"],
                  [self.r, self.u, self.du, self.flux_residual(), kato.eta,
                   kato.margin_full, kato.margin_nu])


def _check_annulus(metric, r_a, r_b):
    if not 0.0 < r_a < r_b or r_b >= metric.r_max:
        raise ValueError(f"annulus [{r_a}, {r_b}] not inside (0, {metric.r_max})")


def _constant_profile(metric, pp, eps, r_a, r_b, value, r, method):
    zeros = np.zeros_like(r)
    return RegularizedProfile(metric, pp, float(eps), r_a, r_b, value, value, r,
                              np.full_like(r, value), zeros, zeros.copy(), 0.0, method)


def solve_regularized_shooting(metric: WarpedMetric, p, eps: float, r_a: float, r_b: float,
                               boundary, n_grid: int = 513) -> RegularizedProfile:
    """Shooting on the flux constant c: u'(r) = -s(r; c) with g(s) = c/A(r).

    ``boundary`` is (u(r_b), u(r_a)) with u(r_a) >= u(r_b).
    """
    pp = as_pparam(p)
    eps = float(eps)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    _check_annulus(metric, r_a, r_b)
    u_b, u_a = (float(v) for v in boundary)
    gap = u_a - u_b
    r = np.geomspace(r_a, r_b, n_grid)
    if gap < 0:
        raise ValueError("boundary values must decrease outward: u(r_a) >= u(r_b)")
    if gap == 0:
        return _constant_profile(metric, pp, eps, r_a, r_b, u_a, r, "shooting")
    lo_r, hi_r = r[:-1], r[1:]

    def pieces(c):
        vals, _ = integrate_log(lambda x: slope_from_flux(c / metric.area(x), eps, pp.p),
                                lo_r, hi_r, rtol=1e-15)
        return vals

    def dJ_dlogc(c):
        def f(x):
            s = slope_from_flux(c / metric.area(x), eps, pp.p)
            return s / (1.0 + eta_eps(s, eps, pp.p))
        vals, _ = integrate_log(f, lo_r, hi_r, rtol=1e-12)
        return float(np.sum(vals))

    # eps = 0 flux as a starting point, then bracket
    base, _ = integrate_log(lambda x: metric.area(x) ** (-pp.q), lo_r, hi_r)
    c = (gap / float(np.sum(base))) ** (pp.p - 1.0)
    lo_c, hi_c = 0.0, math.inf
    J = float(np.sum(pieces(c)))
    for _ in range(200):
        if J < gap:
            lo_c = c
        else:
            hi_c = c
        if abs(J - gap) <= 2e-15 * gap:
            break
        c_new = c * math.exp((gap - J) / dJ_dlogc(c))
        if not lo_c < c_new < hi_c:
            c_new = 0.5 * (lo_c + hi_c) if math.isfinite(hi_c) else 2.0 * c
        if abs(c_new - c) <= 1e-16 * c:
            break
        c = c_new
        J = float(np.sum(pieces(c)))
    else:
        raise ConvergenceError("flux constant did not converge")

    vals = pieces(c)
    u = np.empty_like(r)
    u[-1] = u_b
    u[:-1] = u_b + np.cumsum(vals[::-1])[::-1]
    s = slope_from_flux(c / metric.area(r), eps, pp.p)
    if np.any(s <= 0):
        raise ConvergenceError("radial slope vanished inside the annulus")
    eta = eta_eps(s, eps, pp.p)
    d2u = 2.0 * s * metric.dw(r) / (metric.w(r) * (1.0 + eta))
    if abs(u[0] - u_a) > 1e-12 * max(abs(u_a), gap):
        raise ConvergenceError(f"boundary gap unreachable: mismatch {u[0] - u_a:.3e}")
    return RegularizedProfile(metric, pp, eps, r_a, r_b, u_a, u_b, r, u, -s, d2u, float(c))


# ---------------------------------------------------------------------------
# energy minimization


def _psi_derivs(sig, eps, p):
    base = sig * sig + eps
    psi = base ** (p / 2.0)
    d1 = p * sig * base ** ((p - 2.0) / 2.0)
    d2 = p * base ** ((p - 4.0) / 2.0) * ((p - 1.0) * sig * sig + eps)
    return psi, d1, d2


@dataclass(eq=False)
class DiscreteProfile(RegularizedProfile):
    """Piecewise-linear minimizer on a uniform grid."""

    energy: float = float("nan")
    iterations: int = 0

    @property
    def _mid_r(self):
        return 0.5 * (self.r[:-1] + self.r[1:])

    @property
    def _cell_du(self):
        return np.diff(self.u) / np.diff(self.r)

    def slope(self, r):
        return np.interp(r, self._mid_r, -self._cell_du)


def minimize_energy(metric: WarpedMetric, p, eps: float, r_a: float, r_b: float, boundary,
                    n_cells: int, reference: RegularizedProfile | None = None,
                    max_iter: int = 200) -> DiscreteProfile:
    """Minimize sum_k (sigma_k^2 + eps)^{p/2} A(r_{k+1/2}) h over P1 profiles.

    ``boundary`` is (u(r_b), u(r_a)). When ``reference`` is given the sup
    gap at the nodes is compared with an a-posteriori discretization error
    estimate (half-grid solve, Richardson for order 2) and
    SolverDisagreement is raised beyond ten times that estimate.
    """
    pp = as_pparam(p)
    p_ = pp.p
    eps = float(eps)
    if n_cells < 16:
        raise ValueError("n_cells must be >= 16")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    _check_annulus(metric, r_a, r_b)
    u_b, u_a = (float(v) for v in boundary)
    r = np.linspace(r_a, r_b, n_cells + 1)
    h = np.diff(r)
    W = metric.area(0.5 * (r[:-1] + r[1:]))
    if u_a == u_b:
        prof = DiscreteProfile(metric, pp, eps, r_a, r_b, u_a, u_b, r, np.full_like(r, u_a),
                               np.zeros_like(r), np.zeros_like(r), 0.0, "energy")
        prof.energy = float(eps ** (p_ / 2.0) * np.sum(W * h))
        return prof

    u = u_a + (u_b - u_a) * (r - r_a) / (r_b - r_a)

    def energy(v):
        sig = np.diff(v) / h
        return float(np.sum(W * h * (sig * sig + eps) ** (p_ / 2.0)))

    it = 0
    E = energy(u)
    for it in range(1, max_iter + 1):
        sig = np.diff(u) / h
        if eps == 0.0 and np.any(sig == 0):
            raise ConvergenceError("zero slope at eps = 0; energy not twice differentiable")
        _, d1, d2 = _psi_derivs(sig, eps, p_)
        flux = W * d1
        grad = flux[:-1] - flux[1:]
        k = W * d2 / h
        scale = float(np.max(np.abs(flux)))
        if np.max(np.abs(grad)) <= 1e-13 * scale:
            break
        diag = k[:-1] + k[1:]
        off = -k[1:-1]
        ab = np.zeros((2, diag.size))
        ab[0, 1:] = off
        ab[1] = diag
        d = solveh_banded(ab, -grad)
        slope_dir = float(grad @ d)
        alpha = 1.0
        while True:
            trial = u.copy()
            trial[1:-1] += alpha * d
            E_new = energy(trial)
            if E_new <= E + 1e-4 * alpha * slope_dir + 8 * np.finfo(float).eps * abs(E):
                break
            alpha *= 0.5
            if alpha < 1e-12:
                raise LineSearchError(
                    f"line search failed at iteration {it} (|grad|={np.max(np.abs(grad)):.3e})",
                    iterate=u.copy(),
                )
        u = trial
        E = E_new
        if np.max(np.abs(alpha * d)) <= 1e-16 * max(abs(u_a), abs(u_b)):
            break
    else:
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations")

    sig = np.diff(u) / h
    _, d1, _ = _psi_derivs(sig, eps, p_)
    node_du = np.empty_like(r)
    node_du[0], node_du[-1] = sig[0], sig[-1]
    node_du[1:-1] = 0.5 * (sig[:-1] + sig[1:])
    prof = DiscreteProfile(metric, pp, eps, r_a, r_b, u_a, u_b, r, u, node_du,
                           np.gradient(node_du, r), float(np.mean(W * np.abs(d1) / p_)),
                           "energy")
    prof.energy = E
    prof.iterations = it

    if reference is not None:
        gap = sup_gap(prof, reference)
        coarse = minimize_energy(metric, pp, eps, r_a, r_b, boundary, n_cells // 2)
        expected = float(np.max(np.abs(u[::2] - coarse.u))) / 3.0
        if gap > 10.0 * max(expected, 1e-14 * abs(u_a)):
            raise SolverDisagreement(
                f"energy minimizer and shooting differ by {gap:.3e} "
                f"(expected discretization error {expected:.3e})"
            )
    return prof


def sup_gap(discrete: RegularizedProfile, reference: RegularizedProfile) -> float:
    """Sup-norm nodal difference between a discrete solution and a reference."""
    return float(np.max(np.abs(discrete.u - reference.value_at(discrete.r))))


def cross_validate(metric, p, eps, r_a, r_b, boundary, n_list=(64, 128, 256, 512)):
    """Sup gaps between energy minimizers and shooting over a grid sequence."""
    ref = solve_regularized_shooting(metric, p, eps, r_a, r_b, boundary)
    gaps = [sup_gap(minimize_energy(metric, p, eps, r_a, r_b, boundary, n), ref) for n in n_list]
    ratios = [g0 / g1 for g0, g1 in zip(gaps[:-1], gaps[1:])]
    return {"n_cells": list(n_list), "gap": gaps, "ratio": ratios}


# ---------------------------------------------------------------------------
# studies and level quantities


def annulus_boundary(green: GreenProfile, r_a: float, r_b: float):
    """Dirichlet data (u(r_b), u(r_a)) taken from a Green profile."""
    return float(green.value_at(r_b)), float(green.value_at(r_a))


def convergence_study(metric: WarpedMetric, p, eps_schedule, annulus, green: GreenProfile):
    """Rows (eps, sup|u_eps - u|, sup|u_eps' - u'|) on the annulus grid."""
    eps_schedule = [float(e) for e in eps_schedule]
    if any(e1 >= e0 for e0, e1 in zip(eps_schedule[:-1], eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    r_a, r_b = annulus
    bd = annulus_boundary(green, r_a, r_b)
    rows = []
    for eps in eps_schedule:
        prof = solve_regularized_shooting(metric, p, eps, r_a, r_b, bd)
        c0 = float(np.max(np.abs(prof.u - green.value_at(prof.r))))
        c1 = float(np.max(np.abs(prof.du + green.slope(prof.r))))
        rows.append((eps, c0, c1))
    return rows


@dataclass(frozen=True)
class RegularizedLevel:
    t: float
    r_t: float
    F_eps: float
    flux_eps: float


def regularized_level_quantities(profile: RegularizedProfile, t: float) -> RegularizedLevel:
    r_t = float(profile.invert(t))
    s = float(profile.slope(r_t))
    A = float(profile.metric.area(r_t))
    return RegularizedLevel(float(t), r_t, A * s * s,
                            A * float(phi_eps(s, profile.eps, profile.p.p)) * s)


@dataclass(frozen=True)
class KatoSamples:
    r: np.ndarray
    eta: np.ndarray
    lhs: np.ndarray
    bound_full: np.ndarray
    bound_nu: np.ndarray
    margin_full: np.ndarray
    margin_nu: np.ndarray

    def violations(self, rel=1e-12):
        bad = (self.margin_full < -rel * self.lhs) | (self.margin_nu < -rel * self.lhs)
        return [(float(r), float(min(mf, mn)))
                for r, mf, mn in zip(self.r[bad], self.margin_full[bad], self.margin_nu[bad])]


def kato_check(profile: RadialProfile, grid=None) -> KatoSamples:
    """Improved Kato bounds for a radial profile at the radii in ``grid``."""
    r = profile.r if grid is None else np.asarray(grid, dtype=float)
    s = profile.slope(r)
    eps, p = profile.eps, profile.p.p
    eta = eta_eps(s, eps, p)
    h_rad, h_tan = profile.hessian(r)
    lhs = h_rad**2 + 2.0 * h_tan**2
    # for radial u: grad|grad u| = -s' dr, and <grad|grad u|, nu>^2 = h_rad^2
    grad_sq = h_rad**2
    factor = (eta * eta + 2.0 * eta + 3.0) / 2.0
    bound_full = np.minimum(factor, 2.0) * grad_sq
    bound_nu = factor * grad_sq
    return KatoSamples(r, eta, lhs, bound_full, bound_nu, lhs - bound_full, lhs - bound_nu)


def H_eps(profile: RadialProfile, t: float, beta: float, lam: float, F_prime=None) -> float:
    p = profile.p.p
    alpha = beta - lam * (5.0 - p) / (2.0 * (3.0 - p))
    F = float(profile.F_of_t(t))
    dF = profile.F_prime(t) if F_prime is None else F_prime
    return (t ** (-beta) * dF + alpha * t ** (-beta - 1.0) * F
            - FOUR_PI * (3.0 - p) / ((p - 1.0) * (beta - 1.0)) * t ** (1.0 - beta))


def _E_level(profile: RadialProfile, t: float, beta: float) -> float:
    # (p-2-eta)/eta = eps/s^2 exactly, which removes the 0/0 at p = 2
    p, eps = profile.p.p, profile.eps
    if eps == 0.0:
        return 0.0
    r_t = float(profile.invert(t))
    s = float(profile.slope(r_t))
    if s == 0.0:
        raise ValueError(f"|grad u_eps| = 0 on level {t:g}")
    eta = float(eta_eps(s, eps, p))
    h_rad, h_tan = profile.hessian(r_t)
    lap = float(h_rad + 2.0 * h_tan)
    A = float(profile.metric.area(r_t))
    return t ** (-beta) * A * (eps / (s * s)) * (eta - 1.0) * lap / (3.0 - p)


def error_term_E(profile: RadialProfile, t1: float, t2: float, beta: float) -> float:
    """Boundary term evaluated at t1 minus its value at t2."""
    return _E_level(profile, t1, beta) - _E_level(profile, t2, beta)


def almost_monotonicity(profile: RadialProfile, levels, beta: float, lam: float):
    """Largest H(t_i) - H(t_j) - E(t_i, t_j) over pairs t_i < t_j, and max |E|."""
    levels = np.sort(np.asarray(levels, dtype=float))
    H = np.array([H_eps(profile, t, beta, lam) for t in levels])
    El = np.array([_E_level(profile, t, beta) for t in levels])
    i, j = np.triu_indices(levels.size, k=1)
    E = El[i] - El[j]
    excess = H[i] - H[j] - E
    return {"sup_excess": float(np.max(excess)), "max_abs_E": float(np.max(np.abs(E))),
            "H": H, "E_levels": El}


def profile_levels(profile: RadialProfile, n: int, shrink: float = 0.1) -> np.ndarray:
    """n log-spaced levels inside the profile range, clear of both ends."""
    lo, hi = profile.t_range
    span = math.log(hi / lo)
    return np.exp(np.linspace(math.log(lo) + shrink * span, math.log(hi) - shrink * span, n))


def check_range(profile: RadialProfile, t: float):
    lo, hi = profile.t_range
    if not lo <= t <= hi:
        raise LevelRangeError(f"level {t:g} outside [{lo:g}, {hi:g}]")
