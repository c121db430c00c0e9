"""Config-driven experiment runner.

    pgreen green      --config cfg.json --out DIR
    pgreen regularize --config cfg.json --out DIR
    pgreen check      --config cfg.json --out DIR [--seed N] [--tol-scale X]
    pgreen sweep      --config cfg.json --out DIR

Exit status: 0 when every in-hypothesis claim passes, 1 when one fails,
2 on configuration or solver errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import monotonicity as mono
from .geometry import FAMILIES, MetricError, as_pparam, certify_curvature, make_metric
from .green import (GridSpec, LevelRangeError, ParabolicMetricError, asymptotics_check,
                    level_grid, solve_green, write_csv)
from .regularized import (almost_monotonicity, annulus_boundary, convergence_study,
                          cross_validate, kato_check, profile_levels,
                          solve_regularized_shooting)

GREEN_CLAIMS = ("T1a", "T1b", "T2", "T4G", "T4I", "C1c", "C1d", "RIGID")
EPS_CLAIMS = ("KATO", "T32")
ALL_CLAIMS = GREEN_CLAIMS + EPS_CLAIMS
# claims whose hypothesis includes R >= 0
CURVATURE_CLAIMS = frozenset(GREEN_CLAIMS) - {"RIGID"}

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
BUNDLED = {"euclidean-suite": "euclidean_suite.json"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class MetricSpec:
    id: str
    family: str
    params: dict


@dataclass(frozen=True)
class ExperimentConfig:
    metrics: tuple
    p: tuple
    smooth_override: bool = False
    eps_schedule: tuple = ()
    annulus: tuple | None = None
    n_levels: int = 128
    r_lo: float | None = None
    r_hi: float | None = None
    claims: tuple = ()
    lambda_beta: tuple = ()
    n_cells: tuple = ()
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    grid: GridSpec = GridSpec()
    crossval_eps: float = 1e-3

    def tol(self, key="margin", default=mono.DEFAULT_TOL):
        return float(self.tolerances.get(key, default))


def _num(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _num_list(value, where):
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list")
    return tuple(_num(v, f"{where}[{i}]") for i, v in enumerate(value))


def parse_config(data: dict, seed=None, tol_scale=1.0) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    known = {"metrics", "p", "smooth_override", "eps_schedule", "annulus", "levels", "claims",
             "lambda_beta", "n_cells", "tolerances", "seed", "grid", "crossval_eps"}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown field(s): {', '.join(extra)}")

    raw_metrics = data.get("metrics")
    if not isinstance(raw_metrics, list) or not raw_metrics:
        raise ConfigError("metrics: expected a non-empty list")
    metrics, seen = [], set()
    for i, m in enumerate(raw_metrics):
        where = f"metrics[{i}]"
        if not isinstance(m, dict) or "family" not in m:
            raise ConfigError(f"{where}: expected an object with a 'family'")
        if m["family"] not in FAMILIES:
            raise ConfigError(f"{where}.family: unknown family {m['family']!r}")
        params = m.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError(f"{where}.params: expected an object")
        mid = str(m.get("id", m["family"]))
        if mid in seen:
            raise ConfigError(f"{where}.id: duplicate id {mid!r}")
        seen.add(mid)
        metrics.append(MetricSpec(mid, m["family"], params))

    smooth = data.get("smooth_override", False)
    if not isinstance(smooth, bool):
        raise ConfigError("smooth_override: expected true or false")
    ps = _num_list(data.get("p", []), "p")
    if not ps:
        raise ConfigError("p: expected at least one exponent")
    for i, p in enumerate(ps):
        if not (1.0 < p <= 2.0 or (smooth and 1.0 < p < 3.0)):
            raise ConfigError(f"p[{i}]: {p} outside (1, 2]" + ("" if smooth else
                              " (set smooth_override for p in (2, 3))"))

    eps = _num_list(data.get("eps_schedule", []), "eps_schedule")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        raise ConfigError("eps_schedule: expected positive, strictly decreasing values")

    annulus = data.get("annulus")
    if annulus is not None:
        annulus = _num_list(annulus, "annulus")
        if len(annulus) != 2 or not 0 < annulus[0] < annulus[1]:
            raise ConfigError("annulus: expected [r_a, r_b] with 0 < r_a < r_b")

    levels = data.get("levels", {})
    if not isinstance(levels, dict):
        raise ConfigError("levels: expected an object")
    n_levels = levels.get("n", 128)
    if not isinstance(n_levels, int) or n_levels < 2:
        raise ConfigError("levels.n: expected an integer >= 2")
    r_lo = levels.get("r_lo")
    r_hi = levels.get("r_hi")
    r_lo = None if r_lo is None else _num(r_lo, "levels.r_lo")
    r_hi = None if r_hi is None else _num(r_hi, "levels.r_hi")

    claims = data.get("claims", [])
    if not isinstance(claims, list):
        raise ConfigError("claims: expected a list")
    for i, c in enumerate(claims):
        if c not in ALL_CLAIMS:
            raise ConfigError(f"claims[{i}]: unknown claim {c!r}")
    if any(c in EPS_CLAIMS for c in claims) and (not eps or annulus is None):
        raise ConfigError("claims: KATO and T32 need eps_schedule and annulus")

    pairs = []
    for i, lb in enumerate(data.get("lambda_beta", [])):
        where = f"lambda_beta[{i}]"
        if not isinstance(lb, dict) or "beta" not in lb:
            raise ConfigError(f"{where}: expected an object with 'beta'")
        beta = _num(lb["beta"], f"{where}.beta")
        if "lambda" in lb:
            pairs.append((beta, _num(lb["lambda"], f"{where}.lambda")))
        elif lb.get("root") in ("minus", "plus"):
            pairs.append((beta, lb["root"]))
        else:
            raise ConfigError(f"{where}: give 'lambda' or root 'minus'/'plus'")

    n_cells = data.get("n_cells", [])
    if not isinstance(n_cells, list) or not all(isinstance(n, int) and n >= 4 for n in n_cells):
        raise ConfigError("n_cells: expected a list of integers >= 4")

    tols = data.get("tolerances", {})
    if not isinstance(tols, dict):
        raise ConfigError("tolerances: expected an object")
    tols = {k: _num(v, f"tolerances.{k}") * tol_scale for k, v in tols.items()}
    tols.setdefault("margin", mono.DEFAULT_TOL * tol_scale)

    grid = data.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected an object")
    try:
        grid_spec = GridSpec(**grid)
    except TypeError as exc:
        raise ConfigError(f"grid: {exc}") from None

    cv_eps = _num(data.get("crossval_eps", 1e-3), "crossval_eps")
    if cv_eps < 0:
        raise ConfigError("crossval_eps: expected a nonnegative number")

    cfg_seed = data.get("seed", 0)
    if seed is not None:
        cfg_seed = seed
    if not isinstance(cfg_seed, int):
        raise ConfigError("seed: expected an integer")

    return ExperimentConfig(
        metrics=tuple(metrics), p=ps, smooth_override=smooth, eps_schedule=eps,
        annulus=annulus, n_levels=n_levels, r_lo=r_lo, r_hi=r_hi, claims=tuple(claims),
        lambda_beta=tuple(pairs), n_cells=tuple(n_cells), tolerances=tols, seed=cfg_seed,
        grid=grid_spec, crossval_eps=cv_eps,
    )


def load_config(path, seed=None, tol_scale=1.0) -> ExperimentConfig:
    """Read a JSON config file, or a bundled one by name."""
    if str(path) in BUNDLED:
        text = resources.files("pgreen.configs").joinpath(BUNDLED[str(path)]).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data, seed=seed, tol_scale=tol_scale)


# ---------------------------------------------------------------------------
# helpers


def _tag(metric_id, p):
    return f"{metric_id}_p{p!r}"


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _pair_for(p, spec):
    beta, lam = spec
    if lam in ("minus", "plus"):
        lam = mono.lambda_for_beta(p, beta)[0 if lam == "minus" else 1]
    return mono.make_lambda_beta(p, beta, lam)


def _jittered(levels, seed, key):
    """Levels moved by up to a quarter spacing in log t, reproducibly."""
    rng = np.random.default_rng([seed, zlib.crc32(key.encode())])
    logt = np.log(levels)
    step = (logt[-1] - logt[0]) / (levels.size - 1)
    jit = rng.uniform(-0.25, 0.25, levels.size) * step
    jit[[0, -1]] = 0.0
    return np.exp(logt + jit)


def _row(metric_id, p, eps, claim, status, margin=float("nan"), levels=0, n_viol=0,
         in_hyp=True, message=""):
    return {"metric_id": metric_id, "p": p, "eps": eps, "claim": claim, "status": status,
            "worst_margin": margin, "levels": levels, "violations": n_viol,
            "in_hypothesis": in_hyp, "message": message}


def _report_row(metric_id, p, eps, rep, claim=None):
    return _row(metric_id, p, eps, claim or rep.claim, rep.status, rep.worst_margin,
                rep.levels, len(rep.violations), rep.in_hypothesis)


# ---------------------------------------------------------------------------
# stages


def run_green_stage(cfg, spec, p, out):
    metric = make_metric(spec.family, spec.params)
    profile = solve_green(metric, as_pparam(p), cfg.grid)
    tag = _tag(spec.id, p)
    profile.to_csv(out / f"green_{tag}.csv")
    if metric.pole_complete:
        asy = asymptotics_check(profile)
        write_csv(out / f"asymptotics_{tag}.csv", ["r", "value_dev", "gradient_dev",
                  "hessian_dev"], [asy["r"], asy["value_dev"], asy["gradient_dev"],
                                   asy["hessian_dev"]])
    return profile


def run_regularize_stage(cfg, spec, p, out, green=None):
    """Convergence table, regularized profiles and solver cross-validation."""
    if not cfg.eps_schedule or cfg.annulus is None:
        return None
    metric = make_metric(spec.family, spec.params)
    tag = _tag(spec.id, p)
    green = green or solve_green(metric, as_pparam(p), cfg.grid)
    r_a, r_b = cfg.annulus
    rows = convergence_study(metric, p, cfg.eps_schedule, cfg.annulus, green)
    bd = annulus_boundary(green, r_a, r_b)
    spread, profiles = [], []
    for eps in cfg.eps_schedule:
        prof = solve_regularized_shooting(metric, p, eps, r_a, r_b, bd)
        kato = kato_check(prof)
        prof.to_csv(out / f"regularized_{tag}_eps{eps!r}.csv", kato)
        spread.append(float(np.max(np.abs(prof.flux_residual()))))
        profiles.append((prof, kato))
    write_csv(out / f"convergence_{tag}.csv", ["eps", "c0_error", "c1_error", "flux_spread"],
              [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], spread])
    if cfg.n_cells:
        cv = cross_validate(metric, p, cfg.crossval_eps, r_a, r_b, bd, cfg.n_cells)
        write_csv(out / f"crossval_{tag}.csv", ["n_cells", "gap", "ratio"],
                  [cv["n_cells"], cv["gap"], [float("nan")] + cv["ratio"]])
    return {"green": green, "profiles": profiles, "convergence": rows}


def _eps_claims(cfg, spec, p, out, green, reg):
    rows = []
    tag = _tag(spec.id, p)
    tol = cfg.tol()
    if "KATO" in cfg.claims:
        sets = [(0.0, kato_check(green))] + [(prof.eps, k) for prof, k in reg["profiles"]]
        for eps, kato in sets:
            bad = kato.violations()
            lhs = np.maximum(kato.lhs, 1e-300)
            margin = float(min(np.min(kato.margin_full / lhs), np.min(kato.margin_nu / lhs)))
            saturation = float(np.max(np.abs(kato.margin_nu) / lhs))
            rep = {"claim": "KATO", "p": p, "metric": spec.id, "eps": eps,
                   "levels": int(kato.r.size), "worst_margin": margin,
                   "violations": [[r, m] for r, m in bad],
                   "tolerances": {"margin": 1e-12}, "in_hypothesis": True,
                   "status": "fail" if bad else "pass",
                   "details": {"nu_bound_saturation": saturation}}
            write_json(out / f"{tag}_eps{eps!r}_KATO.report.json", rep)
            rows.append(_row(spec.id, p, eps, "KATO", rep["status"], margin,
                             rep["levels"], len(bad)))
    if "T32" in cfg.claims:
        lb = mono.default_pair(p)
        for prof, _ in reg["profiles"]:
            levels = profile_levels(prof, 12)
            am = almost_monotonicity(prof, levels, lb.beta, lb.lam)
            rep = {"claim": "T32", "p": p, "metric": spec.id, "eps": prof.eps,
                   "levels": int(levels.size), "worst_margin": -am["sup_excess"],
                   "violations": [], "tolerances": {"margin": tol},
                   "in_hypothesis": True, "status": "recorded",
                   "details": {"sup_excess": am["sup_excess"], "max_abs_E": am["max_abs_E"],
                               "lambda": lb.lam, "beta": lb.beta}}
            write_json(out / f"{tag}_eps{prof.eps!r}_T32.report.json", rep)
            rows.append(_row(spec.id, p, prof.eps, "T32", "recorded", -am["sup_excess"],
                             int(levels.size), 0, True, f"max|E|={am['max_abs_E']!r}"))
    return rows


def run_claims(cfg, spec, p, profile, out):
    """Green-profile claims for one (metric, p); returns summary rows."""
    tag = _tag(spec.id, p)
    tol = cfg.tol()
    claims = [c for c in cfg.claims if c in GREEN_CLAIMS]
    if not claims:
        return []
    cert = certify_curvature(profile.metric)
    curv_ok = cert.scalar_nonnegative
    levels = level_grid(profile, cfg.n_levels, cfg.r_lo, cfg.r_hi)
    table = mono.level_table(profile, levels)
    rows = []

    def emit(rep, name=None):
        rep.in_hypothesis = curv_ok if rep.claim in CURVATURE_CLAIMS else True
        write_json(out / f"{tag}_{name or rep.claim}.report.json", _jsonable(rep.to_json_dict()))
        rows.append(_report_row(spec.id, p, 0.0, rep, name))

    if "T1a" in claims:
        emit(mono.check_theorem_a(profile, levels, tol, table=table))
    if "T1b" in claims:
        emit(mono.check_theorem_b(profile, levels, tol, table=table))
    if "T2" in claims:
        jit = _jittered(levels, cfg.seed, tag)
        emit(mono.check_theorem_b(profile, jit, tol, claim="T2"))
    if "T4G" in claims or "T4I" in claims:
        pairs = cfg.lambda_beta or ((2.0 / (3.0 - p), 2.0),)
        for spec_lb in pairs:
            try:
                lb = _pair_for(p, spec_lb)
                rep_g, rep_i = mono.check_generalized(profile, lb, levels, tol, table=table)
            except mono.AdmissibilityError as exc:
                for c in ("T4G", "T4I"):
                    if c in claims:
                        rows.append(_row(spec.id, p, 0.0, c, "error", message=str(exc)))
                continue
            suffix = "" if lb.lam == 2.0 and lb.beta == 2.0 / (3.0 - p) else \
                f"_lam{lb.lam!r}_beta{lb.beta!r}"
            for rep in (rep_g, rep_i):
                if rep.claim in claims:
                    emit(rep, rep.claim + suffix)
    if "C1c" in claims or "C1d" in claims:
        rep_c, rep_d = mono.check_corollary_cd(profile, levels, tol, table=table,
                                               certificate=cert, require_certified=False)
        rep_c.details["certified"] = rep_d.details["certified"] = curv_ok
        rep_c.details["ric_lower_k"] = rep_d.details["ric_lower_k"] = cert.k
        for rep in (rep_c, rep_d):
            if rep.claim in claims:
                emit(rep)
    if "RIGID" in claims:
        emit(mono.check_rigidity(profile, levels, tol))
    return rows


def run_cell(cfg, spec, p, out, stages=("green", "regularize", "check")):
    """All requested stages for one (metric, p); failures become error rows."""
    rows = []
    try:
        green = run_green_stage(cfg, spec, p, out)
        reg = None
        if "regularize" in stages or any(c in cfg.claims for c in EPS_CLAIMS):
            reg = run_regularize_stage(cfg, spec, p, out, green)
        if "check" in stages:
            rows += run_claims(cfg, spec, p, green, out)
            if reg is not None:
                rows += _eps_claims(cfg, spec, p, out, green, reg)
    except (ParabolicMetricError, MetricError, LevelRangeError, ValueError,
            ArithmeticError, RuntimeError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        claims = [c for c in cfg.claims] if "check" in stages else []
        if claims:
            rows += [_row(spec.id, p, 0.0, c, "error", message=msg) for c in claims]
        else:
            rows.append(_row(spec.id, p, 0.0, "", "error", message=msg))
    return rows


def _cell_job(args):
    cfg, spec, p, out, stages = args
    return run_cell(cfg, spec, p, Path(out), stages)


def _workers():
    env = os.environ.get("PGREEN_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PGREEN_WORKERS: not an integer: {env!r}") from None
    return os.cpu_count() or 1


def run_cells(cfg, out, stages):
    jobs = [(cfg, spec, p, str(out), stages) for spec in cfg.metrics for p in cfg.p]
    n = min(_workers(), len(jobs))
    if n <= 1:
        results = [_cell_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_cell_job, jobs))
    return [row for rows in results for row in rows]


# ---------------------------------------------------------------------------
# summary and exit status


SWEEP_COLUMNS = ("metric_id", "p", "eps", "claim", "status", "worst_margin", "levels",
                 "violations", "in_hypothesis", "message")


def write_sweep_csv(path, rows):
    rows = sorted(rows, key=lambda r: (r["metric_id"], r["p"], r["eps"], r["claim"]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c]
                             for c in SWEEP_COLUMNS])


def summary_line(row):
    where = f"{row['claim']} {row['metric_id']} p={row['p']!r}"
    if row["eps"]:
        where += f" eps={row['eps']!r}"
    if row["status"] == "error":
        return f"{where}: error: {row['message']}"
    if not row["in_hypothesis"]:
        return f"{where}: out-of-hypothesis: recorded only"
    return f"{where}: {row['status']} worst_margin={row['worst_margin']:.3e}"


def exit_status(rows):
    if any(r["status"] == "error" for r in rows):
        return EXIT_ERROR
    if any(r["status"] == "fail" and r["in_hypothesis"] for r in rows):
        return EXIT_FAIL
    return EXIT_OK


def finish(rows, out, sweep=False):
    rows = sorted(rows, key=lambda r: (r["metric_id"], r["p"], r["eps"], r["claim"]))
    status = exit_status(rows)
    write_json(out / "summary.json", {"exit_status": status, "rows": _jsonable(rows)})
    if sweep:
        write_sweep_csv(out / "sweep.csv", rows)
    for r in rows:
        print(summary_line(r))
    return status


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="pgreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("green", "solve Green profiles"),
                        ("regularize", "regularized solves and convergence tables"),
                        ("check", "evaluate the claims on each (metric, p)"),
                        ("sweep", "cross product of all cells, aggregated into sweep.csv")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True,
                        help="JSON config path, or a bundled name (euclidean-suite)")
        sp.add_argument("--out", default="pgreen_out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--tol-scale", type=float, default=1.0,
                        help="multiplies every tolerance")
    return parser


STAGES = {
    "green": ("green",),
    "regularize": ("green", "regularize"),
    "check": ("green", "check"),
    "sweep": ("green", "regularize", "check"),
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if not (args.tol_scale > 0 and math.isfinite(args.tol_scale)):
            raise ConfigError("--tol-scale: expected a positive number")
        cfg = load_config(args.config, seed=args.seed, tol_scale=args.tol_scale)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"--out: {out} is not writable")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    rows = run_cells(cfg, out, STAGES[args.command])
    for r in rows:
        if r["status"] == "error" and not r["claim"]:
            print(f"{args.command} stage failed for {r['metric_id']} p={r['p']!r}: "
                  f"{r['message']}", file=sys.stderr)
    return finish(rows, out, sweep=args.command == "sweep")


if __name__ == "__main__":
    sys.exit(main())
