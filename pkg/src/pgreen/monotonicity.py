"""Checkers for the level-set monotonicity, comparison and rigidity statements.

Each checker evaluates one inequality on a set of levels and returns a
MonotonicityReport holding normalized signed margins: a margin >= -tol
means the inequality holds up to measured numerical error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import FOUR_PI, PParam, as_pparam, certify_curvature, curvature_at
from .green import GreenProfile, log_derivative

CLAIMS = ("T1a", "T1b", "T2", "T4G", "T4I", "C1c", "C1d", "RIGID")
DEFAULT_TOL = 1e-8
HOLDER_TOL = 1e-10


class AdmissibilityError(ValueError):
    pass


class CertificationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# (lambda, beta) family


@dataclass(frozen=True)
class LambdaBeta:
    p: float
    beta: float
    lam: float
    admissible: bool
    exact_constraint_residual: float

    @property
    def exponent(self) -> float:
        """beta - lambda (5-p)/(2(3-p)), the power of t multiplying F."""
        return self.beta - self.lam * (5.0 - self.p) / (2.0 * (3.0 - self.p))


def constraint_residual(p, beta, lam):
    return abs(lam * lam * (5.0 - p) / (4.0 * (3.0 - p))
               - lam * (5.0 - p) * (beta + 1.0) / (2.0 * (3.0 - p))
               + beta * (beta + 1.0))


def make_lambda_beta(p, beta, lam) -> LambdaBeta:
    p, beta, lam = float(p), float(beta), float(lam)
    res = constraint_residual(p, beta, lam)
    ok = (lam > 0 and beta > 1 and (5.0 - p) + (3.0 * p - 7.0) * beta >= 0
          and res <= 1e-12 * beta * (beta + 1.0))
    return LambdaBeta(p, beta, lam, ok, res)


def lambda_for_beta(p, beta):
    """Both roots of lambda^2 (5-p) - 2 lambda (5-p)(beta+1) + 4(3-p) beta(beta+1) = 0."""
    p, beta = float(p), float(beta)
    disc = (beta + 1.0) ** 2 - 4.0 * beta * (beta + 1.0) * (3.0 - p) / (5.0 - p)
    if disc < 0:
        raise AdmissibilityError(f"no real lambda for p={p}, beta={beta} (disc={disc:.3e})")
    lam_plus = (beta + 1.0) + math.sqrt(disc)
    # product of roots avoids cancellation in the smaller one
    lam_minus = 4.0 * (3.0 - p) * beta * (beta + 1.0) / ((5.0 - p) * lam_plus)
    return lam_minus, lam_plus


def default_pair(p) -> LambdaBeta:
    return make_lambda_beta(p, 2.0 / (3.0 - p), 2.0)


# ---------------------------------------------------------------------------
# level data


class SyntheticLevels:
    """Level data from a prescribed F(t), used to exercise the detectors."""

    def __init__(self, p, F, t_range, area=None, metric_label="synthetic"):
        self.p = as_pparam(p)
        self._F = F
        self._area = area
        self.t_range = t_range
        self.metric_label = metric_label

    def F_of_t(self, t):
        return self._F(np.asarray(t, dtype=float))

    def F_prime(self, t, h=1e-3, levels=3):
        return log_derivative(self.F_of_t, t, self.t_range, h, levels)

    def area_of_t(self, t):
        if self._area is None:
            # the radial identity F = A^{(p-3)/(p-1)}
            return self.F_of_t(t) ** ((self.p.p - 1.0) / (self.p.p - 3.0))
        return self._area(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class LevelTable:
    t: np.ndarray
    F: np.ndarray
    dF: np.ndarray
    area: np.ndarray


def level_table(source, levels) -> LevelTable:
    t = np.sort(np.asarray(levels, dtype=float))
    return LevelTable(t, np.asarray(source.F_of_t(t)), np.asarray(source.F_prime(t)),
                      np.asarray(source.area_of_t(t)))


def _label(source):
    if hasattr(source, "metric"):
        return source.metric.label
    return getattr(source, "metric_label", "synthetic")


def in_hypothesis(source) -> bool:
    """R >= 0 on the metric and p in the admissible range."""
    metric = getattr(source, "metric", None)
    if metric is None:
        return True
    return certify_curvature(metric).scalar_nonnegative


# ---------------------------------------------------------------------------
# reports


@dataclass
class MonotonicityReport:
    claim: str
    p: float
    metric: str
    levels: int
    worst_margin: float
    tolerance: float
    violations: list = field(default_factory=list)
    in_hypothesis: bool = True
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.worst_margin >= -self.tolerance

    @property
    def status(self) -> str:
        if not self.in_hypothesis:
            return "recorded"
        return "pass" if self.passed else "fail"

    def to_json_dict(self):
        return {
            "claim": self.claim,
            "p": self.p,
            "metric": self.metric,
            "levels": self.levels,
            "worst_margin": self.worst_margin,
            "violations": [[v[0], v[1]] for v in self.violations],
            "tolerances": {"margin": self.tolerance},
            "in_hypothesis": self.in_hypothesis,
            "status": self.status,
            "details": self.details,
        }


def _report(claim, source, t_keys, margins, tol, hyp, details=None):
    margins = np.asarray(margins, dtype=float)
    bad = margins < -tol
    violations = [(k, float(m)) for k, m, b in zip(t_keys, margins, bad) if b]
    return MonotonicityReport(
        claim=claim, p=source.p.p, metric=_label(source), levels=len(t_keys),
        worst_margin=float(np.min(margins)) if margins.size else 0.0,
        tolerance=tol, violations=violations, in_hypothesis=hyp, details=details or {},
    )


def _hyp(source, hyp):
    return in_hypothesis(source) if hyp is None else hyp


def monotone_quantity(p: PParam, t, F):
    return F / t - FOUR_PI * p.c_p**2 * t


def check_theorem_a(source, levels, tol=DEFAULT_TOL, hyp=None, table=None):
    """F'(t) <= 4 pi c_p^2 t + F(t)/t at every level."""
    tb = table or level_table(source, levels)
    rhs = FOUR_PI * source.p.c_p**2 * tb.t + tb.F / tb.t
    margins = (rhs - tb.dF) / np.abs(rhs)
    return _report("T1a", source, [float(t) for t in tb.t], margins, tol, _hyp(source, hyp))


def check_theorem_b(source, levels, tol=DEFAULT_TOL, hyp=None, table=None, claim="T1b"):
    """M(t) = F/t - 4 pi c_p^2 t nonincreasing over consecutive level pairs."""
    tb = table or level_table(source, levels)
    M = monotone_quantity(source.p, tb.t, tb.F)
    lin = FOUR_PI * source.p.c_p**2 * tb.t
    scale = np.maximum.reduce([np.abs(M[:-1]), np.abs(M[1:]), lin[1:]])
    margins = (M[:-1] - M[1:]) / scale
    keys = [[float(a), float(b)] for a, b in zip(tb.t[:-1], tb.t[1:])]
    rep = _report(claim, source, keys, margins, tol, _hyp(source, hyp))
    rep.levels = int(tb.t.size)
    rep.details["M_max_abs_normalized"] = float(np.max(np.abs(M) / lin))
    return rep


def check_generalized(source, lb: LambdaBeta, levels, tol=DEFAULT_TOL, hyp=None, table=None):
    """Upper bound on G(t) and monotonicity of I(t) for an admissible pair.

    Returns the (T4G, T4I) reports.
    """
    if not lb.admissible:
        raise AdmissibilityError(f"(lambda, beta)=({lb.lam}, {lb.beta}) is not admissible")
    p = source.p
    a = lb.exponent
    if a + 2.0 == 0.0:
        raise AdmissibilityError("exponent + 2 vanishes")
    tb = table or level_table(source, levels)
    hyp = _hyp(source, hyp)

    G = tb.dF + a * tb.F / tb.t
    bound = p.c_p * FOUR_PI / (lb.beta - 1.0) * tb.t
    g_scale = np.abs(bound) + np.abs(tb.dF) + np.abs(a * tb.F / tb.t)
    rep_g = _report("T4G", source, [float(t) for t in tb.t], (bound - G) / g_scale, tol, hyp)

    coef = FOUR_PI / ((lb.beta - 1.0) * (a + 2.0)) * p.c_p
    first = tb.t**a * tb.F
    second = coef * tb.t ** (a + 2.0)
    I = first - second
    scale = np.maximum.reduce([np.abs(first[:-1]), np.abs(first[1:]),
                               np.abs(second[:-1]), np.abs(second[1:])])
    keys = [[float(x), float(y)] for x, y in zip(tb.t[:-1], tb.t[1:])]
    rep_i = _report("T4I", source, keys, (I[:-1] - I[1:]) / scale, tol, hyp)
    rep_i.levels = int(tb.t.size)
    for rep in (rep_g, rep_i):
        rep.details.update({"lambda": lb.lam, "beta": lb.beta, "exponent": a})

    # the default pair must reduce I to the monotone quantity M exactly
    dflt = default_pair(p.p)
    if abs(lb.beta - dflt.beta) <= 1e-15 * dflt.beta and lb.lam == dflt.lam:
        M = monotone_quantity(p, tb.t, tb.F)
        rep_i.details["reduction"] = {
            "exponent_plus_one": abs(a + 1.0),
            "coefficient_rel_error": abs(coef / (FOUR_PI * p.c_p**2) - 1.0),
            "I_minus_M_rel": float(np.max(np.abs(I - M) / np.maximum(np.abs(first), 1e-300))),
        }
    return rep_g, rep_i


def check_corollary_cd(source, levels, tol=DEFAULT_TOL, hyp=None, table=None,
                       certificate=None, require_certified=True):
    """F(t) <= 4 pi c_p^2 t^2 and the matching lower bound on Area(level).

    Also records the Hoelder chain F^{(p-1)/2} Area^{(3-p)/2} >= flux = 1.
    Returns the (C1c, C1d) reports.
    """
    metric = getattr(source, "metric", None)
    if metric is not None and require_certified:
        cert = certificate or certify_curvature(metric)
        if not (cert.scalar_nonnegative and math.isfinite(cert.k)):
            raise CertificationError(
                f"{metric.label} lacks the R >= 0, Ric >= -k certification "
                f"(R_min={cert.R_min:.3e})")
    p = source.p
    tb = table or level_table(source, levels)
    hyp = _hyp(source, hyp)
    cap = FOUR_PI * p.c_p**2 * tb.t**2
    keys = [float(t) for t in tb.t]
    rep_c = _report("C1c", source, keys, (cap - tb.F) / cap, tol, hyp)
    area_bound = cap ** (-(p.p - 1.0) / (3.0 - p.p))
    rep_d = _report("C1d", source, keys, (tb.area - area_bound) / area_bound, tol, hyp)
    chain = tb.F ** ((p.p - 1.0) / 2.0) * tb.area ** ((3.0 - p.p) / 2.0)
    chain_min = float(np.min(chain))
    rep_d.details["holder_chain_min"] = chain_min
    if chain_min < 1.0 - HOLDER_TOL:
        bad = [(k, float(c - 1.0)) for k, c in zip(keys, chain) if c < 1.0 - HOLDER_TOL]
        rep_d.violations.extend(bad)
        rep_d.worst_margin = min(rep_d.worst_margin, chain_min - 1.0)
    return rep_c, rep_d


# ---------------------------------------------------------------------------
# rigidity


def rigidity_diagnostics(profile: GreenProfile, levels, tol=DEFAULT_TOL):
    """Equality-case signatures of the monotonicity on each level.

    ratio_grad   |u'| / u^{2/(3-p)}            constant on flat space
    ratio_hess   h_tan / h_rad                 = -(p-1)/2
    A_t          |grad u|^2 / <grad|grad u|, nu>  = (3-p) t / 2
    log_slope    F' t / F                      = 2
    hess_Q       Hessian of the potential Q    = metric (both components 1)
    """
    p = profile.p
    t = np.sort(np.asarray(levels, dtype=float))
    r = profile.invert(t)
    s = profile.slope(r)
    h_rad, h_tan = profile.hessian(r)
    ratio_grad = s / t ** (2.0 / (3.0 - p.p))
    C = float(ratio_grad[-1])
    dF = profile.F_prime(t)
    F = profile.F_of_t(t)
    # Q = c_p^2/(2 C^2) u^{-k}, k = 2(p-1)/(3-p); radial derivatives by chain rule
    k = 2.0 * (p.p - 1.0) / (3.0 - p.p)
    pref = p.c_p**2 / (2.0 * C * C)
    dQ = pref * (-k) * t ** (-k - 1.0) * (-s)
    d2Q = pref * (k * (k + 1.0) * t ** (-k - 2.0) * s * s + (-k) * t ** (-k - 1.0) * h_rad)
    q_rad = d2Q
    q_tan = dQ * profile.metric.dw(r) / profile.metric.w(r)
    out = {
        "t": t,
        "ratio_grad": ratio_grad,
        "ratio_hess": h_tan / h_rad,
        "A_t": s * s / h_rad,
        "log_slope": dF * t / F,
        "hess_Q_rad": q_rad,
        "hess_Q_tan": q_tan,
    }
    dev = {
        "ratio_grad": float(np.max(ratio_grad) / np.min(ratio_grad) - 1.0),
        "ratio_hess": float(np.max(np.abs(out["ratio_hess"] / (-(p.p - 1.0) / 2.0) - 1.0))),
        "A_t": float(np.max(np.abs(out["A_t"] / ((3.0 - p.p) * t / 2.0) - 1.0))),
        "log_slope": float(np.max(np.abs(out["log_slope"] / 2.0 - 1.0))),
        "hess_Q": float(max(np.max(np.abs(q_rad - 1.0)), np.max(np.abs(q_tan - 1.0)))),
    }
    out["deviation"] = dev
    out["matched"] = all(v <= tol for v in dev.values())
    return out


def is_flat(metric, r_grid=None, tol=1e-12) -> bool:
    cert = certify_curvature(metric, r_grid)
    if r_grid is None:
        hi = 100.0 * metric.scale
        r_grid = np.geomspace(1e-4, hi, 256)
    cs = curvature_at(metric, r_grid)
    return bool(np.max(np.abs(cs.ric_radial)) <= tol and np.max(np.abs(cs.ric_tangential)) <= tol
                and abs(cert.R_min) <= tol)


def check_rigidity(profile: GreenProfile, levels, tol=DEFAULT_TOL, hyp=None):
    """Equality signatures must hold on flat space and break somewhere otherwise.

    The margin is -(worst deviation) on flat metrics and +(worst deviation)
    on curved ones, so a pass means the diagnostics classify the metric
    correctly.
    """
    diag = rigidity_diagnostics(profile, levels, tol)
    flat = is_flat(profile.metric)
    worst_dev = max(diag["deviation"].values())
    margin = -worst_dev if flat else worst_dev - 2.0 * tol
    rep = _report("RIGID", profile, ["diagnostics"], [margin], tol, _hyp(profile, hyp),
                  {"flat": flat, "deviation": diag["deviation"]})
    rep.levels = int(np.size(levels))
    return rep
