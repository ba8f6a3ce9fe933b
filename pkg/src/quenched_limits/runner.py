"""
Experiment runner: one ``ExperimentPlan`` in, artifacts and a ``RunSummary`` out.

Each experiment kind has a handler that returns a status dictionary
``{"status": "success" | "error", "message": ..., "result": ...}``. The
runner turns the result into tolerance checks, writes ``<kind>_<seed>.csv``
plus a JSON summary to the output directory and reports an exit code that
is 0 only when the run succeeded and every check passed.
"""

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .bv_calculus import check_variation_axioms, midpoints
from .config import DEFAULT_TOLERANCES, ExperimentPlan, build_driving, build_family, build_observable
from .errors import DegenerateVariance
from .limit_theorems import (
    aperiodicity_scan,
    birkhoff_samples,
    clt_experiment,
    eta_bar,
    lattice_detect,
    lclt_experiment,
    lclt_periodic_experiment,
    ldp_experiment,
    ldp_trend,
    legendre_rate,
)
from .observables import Observable
from .rds_model import symbols_between, validate_family
from .save_tool import artifact_name, save_output, save_table
from .spectral import (
    center_observable,
    dual_functional,
    equivariance_residual,
    equivariant_density,
    lambda_curve,
    variance,
)
from .storage_config import output_root, select_output
from .transfer_op import dump_ulam, lasota_yorke_fit, ulam_cache
from .visualize import SCHEMAS, emit_plot

# Configure logging
logger = logging.getLogger(__name__)

AXIOM_PAIRS = 100
AXIOM_CELLS = 256
CLT_GRID_POINTS = 41
LCLT_GRID_POINTS = 25


@dataclass
class Check:
    """One tolerance check; ``passed`` is None when the check does not apply."""

    name: str
    measured: Any
    tolerance: float
    passed: Optional[bool]
    note: str = ""

    @property
    def status(self) -> str:
        if self.passed is None:
            return "skipped"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "status": self.status, "measured": self.measured,
                "tolerance": self.tolerance, "note": self.note}


@dataclass
class RunSummary:
    kind: str
    seed: int
    status: str
    message: str
    plan: Dict[str, Any]
    wall_time: float = 0.0
    checks: List[Check] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    result: Dict[str, Any] = field(default_factory=dict)
    error_type: Optional[str] = None

    @property
    def exit_code(self) -> int:
        if self.status != "success":
            return 1
        return 0 if all(c.passed is not False for c in self.checks) else 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "status": self.status,
            "message": self.message,
            "error_type": self.error_type,
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
            "plan": self.plan,
            "checks": [c.to_dict() for c in self.checks],
            "artifacts": list(self.artifacts),
            "warnings": list(self.warnings),
            "result": self.result,
        }


class _Experiment:
    """Model objects shared by the handlers of one run."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        self.family = build_family(plan)
        self.driving = build_driving(plan)
        self.raw = build_observable(plan)
        self.n_cells = plan.n_cells
        self.tol = plan.get("discretization", "tol")
        self.n_max = plan.get("discretization", "n_max")
        self.workers = max(int(plan.workers), 1)
        self.seed = plan.seed

    def param(self, key: str) -> Any:
        return self.plan.get("experiment", key)

    def check(self, name: str, measured: Any, passed: Optional[bool], note: str = "") -> Check:
        return Check(name=name, measured=measured, tolerance=self.plan.tolerance(name), passed=passed, note=note)

    def observable(self, start: int, stop: int) -> Observable:
        """The configured observable, centered on ``[start, stop)`` when requested."""
        if not self.plan.get("observable", "center") or self.raw.kind == "zero":
            return self.raw
        return center_observable(self.raw, self.family, self.driving, (start, stop),
                                 n_cells=self.n_cells, tol=self.tol)

    def sigma2(self, observable: Observable, t0: int) -> Tuple[float, Optional[Dict[str, Any]]]:
        forced = self.param("sigma2")
        if forced is not None:
            return float(forced), None
        est = variance(self.family, self.driving, observable, j_max=self.param("j_max"),
                       n_orbit=self.param("variance_orbit"), n_cells=self.n_cells, t_start=t0,
                       n_burn=self.param("n_burn"))
        if est.degenerate:
            raise DegenerateVariance(f"estimated sigma2={est.sigma2_series:.3e} is degenerate; "
                                     f"the {self.plan.kind} check is refused")
        return est.sigma2_series, est.summary()


def _run_density(exp: _Experiment) -> Dict[str, Any]:
    t, theta = exp.param("t"), exp.param("theta")
    observable = exp.observable(t, t + 2)
    base = equivariant_density(exp.family, exp.driving, t, 0.0, None, exp.n_cells, tol=exp.tol, n_max=exp.n_max)
    data = equivariant_density(exp.family, exp.driving, t, theta, observable, exp.n_cells,
                               tol=exp.tol, n_max=exp.n_max)
    phi = dual_functional(exp.family, exp.driving, t, theta, observable, n_cells=exp.n_cells,
                          tol=exp.tol, n_max=exp.n_max, v=data.v)
    data.phi = phi

    symbol = int(symbols_between(exp.family, exp.driving, t, 1)[0])
    g = observable.grid_values(symbol, exp.n_cells) - observable.offsets(t, 1)[0]
    lam_check = complex(np.mean(np.exp(theta * g) * data.v.values))
    consistency = abs(complex(data.lam) - lam_check)
    residual = equivariance_residual(exp.family, exp.driving, t, theta, observable, exp.n_cells, tol=exp.tol)
    lam0_gap = abs(float(base.lam) - 1.0)

    table = pd.DataFrame({
        "x": midpoints(exp.n_cells),
        "v0": np.real(base.v.values),
        "v_real": np.real(data.v.values),
        "v_imag": np.imag(data.v.values),
        "phi_real": np.real(phi.values),
        "phi_imag": np.imag(phi.values),
    })
    checks = [
        exp.check("lambda_zero", lam0_gap, lam0_gap <= exp.plan.tolerance("lambda_zero")),
        exp.check("lambda_consistency", consistency, consistency <= exp.plan.tolerance("lambda_consistency")),
        exp.check("equivariance", residual, residual <= exp.plan.tolerance("equivariance")),
    ]
    pairing = complex(np.mean(phi.values * data.v.values))
    return {
        "status": "success",
        "message": f"equivariant density at t={t}, theta={theta} (horizon {data.burn_in_used})",
        "result": {
            "summary": {"density": data.to_dict(), "density_zero": base.to_dict(),
                        "phi_pairing": pairing, "v0_min": float(np.min(base.v.values))},
            "checks": checks,
            "tables": {"": table},
        },
    }


def _run_lambda(exp: _Experiment) -> Dict[str, Any]:
    t, n_orbit, n_burn = exp.param("t"), exp.param("n_orbit"), exp.param("n_burn")
    observable = exp.observable(t - n_burn - n_orbit, t)
    curve = lambda_curve(exp.family, exp.driving, observable, axis=exp.param("axis"),
                         theta_grid=exp.param("theta_grid"), n_orbit=n_orbit, n_burn=n_burn,
                         n_cells=exp.n_cells, h=exp.param("h"), workers=exp.workers, t_end=t)
    at_zero = abs(curve.value_at_0)
    d1 = abs(curve.d1_at_0)
    checks = [exp.check("lambda_at_zero", at_zero, at_zero <= exp.plan.tolerance("lambda_at_zero"))]
    if observable.centered:
        checks.append(exp.check("d1_at_zero", d1, d1 <= exp.plan.tolerance("d1_at_zero")))
    else:
        checks.append(exp.check("d1_at_zero", d1, None, "observable not centered; Lambda'(0) is its mean"))
    n_violations = len(curve.convexity_violations)
    if curve.axis == "real":
        checks.append(exp.check("convexity", n_violations, n_violations <= exp.plan.tolerance("convexity")))
    else:
        checks.append(exp.check("convexity", n_violations, None, "imaginary axis"))
    return {
        "status": "success",
        "message": f"Lambda curve on {len(curve.thetas)} points of the {curve.axis} axis",
        "result": {"summary": curve.summary(), "checks": checks, "tables": {"": curve.to_frame()}},
    }


def _run_variance(exp: _Experiment) -> Dict[str, Any]:
    t, n_orbit, n_burn = exp.param("t"), exp.param("n_orbit"), exp.param("n_burn")
    j_max, orbit = exp.param("j_max"), exp.param("variance_orbit")
    observable = exp.observable(t - n_burn - n_orbit, t + orbit + j_max)
    h = exp.param("h")
    curve = lambda_curve(exp.family, exp.driving, observable, "real", (-h, 0.0, h), n_orbit=n_orbit,
                         n_burn=n_burn, n_cells=exp.n_cells, h=h, workers=exp.workers, t_end=t)
    est = variance(exp.family, exp.driving, observable, j_max=j_max, n_orbit=orbit, n_cells=exp.n_cells,
                   t_start=t, curve=curve, n_burn=n_burn)
    lowest = min(est.sigma2_series, est.sigma2_curve)
    checks = []
    if est.degenerate:
        checks.append(exp.check("sigma2_agreement", None, None, "degenerate variance"))
    else:
        rel = abs(est.sigma2_series - est.sigma2_curve) / est.sigma2_series
        checks.append(exp.check("sigma2_agreement", rel, rel <= exp.plan.tolerance("sigma2_agreement")))
    checks.append(exp.check("sigma2_nonnegative", lowest,
                            lowest >= -exp.plan.tolerance("sigma2_nonnegative")))
    return {
        "status": "success",
        "message": f"sigma2 series {est.sigma2_series:.6g}, curve {est.sigma2_curve:.6g}",
        "result": {"summary": est.summary(), "checks": checks, "tables": {"": est.to_frame()}},
    }


def _run_ldp(exp: _Experiment) -> Dict[str, Any]:
    t0, n_orbit, n_burn = exp.param("t0"), exp.param("n_orbit"), exp.param("n_burn")
    ns = sorted(exp.param("ns"))
    observable = exp.observable(t0 - n_burn - n_orbit, t0 + ns[-1])
    curve = lambda_curve(exp.family, exp.driving, observable, "real", exp.param("theta_grid"),
                         n_orbit=n_orbit, n_burn=n_burn, n_cells=exp.n_cells, h=exp.param("h"),
                         workers=exp.workers, t_end=t0)
    rate = legendre_rate(curve, exp.param("epsilons"))
    batches = [birkhoff_samples(exp.family, exp.driving, observable, t0, n, exp.param("count"), exp.seed,
                                start_law=exp.param("start_law"), n_cells=exp.n_cells, workers=exp.workers)
               for n in ns]
    table = ldp_experiment(batches, rate)
    trend = ldp_trend(table)

    usable = table[~table["low_stat"] & np.isfinite(table["rel_gap"])]
    if usable.empty:
        gap_check = exp.check("ldp_gap", None, None, "every row is low-statistic")
    else:
        worst = float(usable["rel_gap"].max())
        gap_check = exp.check("ldp_gap", worst, worst <= exp.plan.tolerance("ldp_gap"))
    worsening = int((~trend["improving"]).sum())
    checks = [gap_check, exp.check("ldp_trend", worsening, worsening <= exp.plan.tolerance("ldp_trend"))]
    return {
        "status": "success",
        "message": f"LDP over {len(ns)} sum lengths and {len(rate.epsilons)} thresholds",
        "result": {
            "summary": {"curve": curve.summary(), "theta_plus": rate.theta_plus, "eps0": rate.eps0,
                        "low_stat_rows": int(table["low_stat"].sum())},
            "checks": checks,
            "tables": {"": table, "trend": trend, "rate": rate.to_frame(), "curve": curve.to_frame()},
        },
    }


def _run_clt(exp: _Experiment) -> Dict[str, Any]:
    t0, n = exp.param("t0"), exp.param("n")
    observable = exp.observable(t0, t0 + max(n, exp.param("variance_orbit") + exp.param("j_max")))
    sigma2, estimate = exp.sigma2(observable, t0)
    if not sigma2 > 0:
        raise DegenerateVariance(f"sigma2={sigma2} is not positive; the CLT check is refused")
    batch = birkhoff_samples(exp.family, exp.driving, observable, t0, n, exp.param("count"), exp.seed,
                             start_law=exp.param("start_law"), n_cells=exp.n_cells, workers=exp.workers)
    res = clt_experiment(batch, sigma2)
    rel_var = abs(res.var_emp - sigma2) / sigma2

    sigma = math.sqrt(sigma2)
    z_grid = np.linspace(-4.0 * sigma, 4.0 * sigma, CLT_GRID_POINTS)
    z = np.sort(batch.sums / math.sqrt(n))
    table = pd.DataFrame({
        "z": z_grid,
        "ecdf": np.searchsorted(z, z_grid, side="right") / z.size,
        "gaussian_cdf": stats.norm.cdf(z_grid, loc=0.0, scale=sigma),
    })
    checks = [
        exp.check("clt_ks", res.ks, res.ks <= exp.plan.tolerance("clt_ks")),
        exp.check("clt_variance", rel_var, rel_var <= exp.plan.tolerance("clt_variance")),
    ]
    return {
        "status": "success",
        "message": f"CLT at n={n}: KS {res.ks:.4f}",
        "result": {"summary": {**res._asdict(), "variance_estimate": estimate},
                   "checks": checks, "tables": {"": table}},
    }


def _run_lclt(exp: _Experiment) -> Dict[str, Any]:
    t0, n = exp.param("t0"), exp.param("n")
    n_orbit, n_burn = exp.param("n_orbit"), exp.param("n_burn")
    observable = exp.observable(t0 - n_burn - n_orbit, t0 + max(n, exp.param("variance_orbit") + exp.param("j_max")))
    sigma2, estimate = exp.sigma2(observable, t0)
    if not sigma2 > 0:
        raise DegenerateVariance(f"sigma2={sigma2} is not positive; the LCLT check is refused")
    J = tuple(exp.param("interval"))
    s_grid = exp.param("s_grid")
    if s_grid is None:
        reach = 3.0 * math.sqrt(sigma2 * n)
        s_grid = tuple(np.linspace(-reach, reach, LCLT_GRID_POINTS))

    lattice = lattice_detect(observable, n_symbols=len(exp.family), n_cells=exp.n_cells)
    scan_summary = None
    if lattice is None or lattice[1] == 0:
        if not exp.param("assume_aperiodic"):
            scan = aperiodicity_scan(exp.family, exp.driving, observable, exp.param("t_grid"), n_orbit=n_orbit,
                                     n_burn=n_burn, n_cells=exp.n_cells, decay_steps=exp.param("decay_steps"),
                                     trials=exp.param("trials"), seed=exp.seed, workers=exp.workers, t_end=t0)
            scan_summary = scan.summary()
            if scan.classification != "aperiodic_evidence":
                return {"status": "error",
                        "message": f"aperiodic LCLT refused: aperiodicity scan is {scan.classification}",
                        "result": {"summary": {"aperiodicity": scan_summary}}}

    batch = birkhoff_samples(exp.family, exp.driving, observable, t0, n, exp.param("count"), exp.seed,
                             start_law=exp.param("start_law"), n_cells=exp.n_cells, workers=exp.workers)
    if lattice is not None and lattice[1] > 0:
        eta, span = lattice
        shift = eta_bar(observable, exp.family, exp.driving, t0, n, eta=eta)
        report = lclt_periodic_experiment(batch, sigma2, J, s_grid, shift, span)
    else:
        report = lclt_experiment(batch, sigma2, J, s_grid)

    summary = {
        "periodic": report.periodic,
        "lattice_span": report.lattice_span,
        "eta_bar_n": report.eta_bar_n,
        "off_lattice_mass": report.off_lattice_mass,
        "sup_error": report.sup_error,
        "sigma2": sigma2,
        "total_mass": report.total_mass(),
        "variance_estimate": estimate,
        "aperiodicity": scan_summary,
    }
    checks = [exp.check("lclt_sup_error", report.sup_error,
                        report.sup_error <= exp.plan.tolerance("lclt_sup_error"))]
    return {
        "status": "success",
        "message": f"{'periodic' if report.periodic else 'aperiodic'} LCLT at n={n}: sup error {report.sup_error:.4f}",
        "result": {"summary": summary, "checks": checks, "tables": {"": report.to_frame()}},
    }


def _run_aperiodicity(exp: _Experiment) -> Dict[str, Any]:
    t, n_orbit, n_burn = exp.param("t"), exp.param("n_orbit"), exp.param("n_burn")
    observable = exp.observable(t - n_burn - n_orbit, t)
    tol = exp.plan.tolerance("lambda_it_threshold")
    scan = aperiodicity_scan(exp.family, exp.driving, observable, exp.param("t_grid"), n_orbit=n_orbit,
                             n_burn=n_burn, n_cells=exp.n_cells, threshold=-tol,
                             decay_steps=exp.param("decay_steps"), trials=exp.param("trials"),
                             seed=exp.seed, workers=exp.workers, t_end=t)
    if scan.classification == "periodic_lattice":
        measured = scan.lambda_at_lattice
    else:
        measured = max(scan.lambda_it)
    table = scan.to_frame()
    table["morita_n0"] = pd.array(scan.morita_n0, dtype="Int64")
    checks = [exp.check("lambda_it_threshold", measured, scan.classification != "inconclusive",
                        scan.classification)]
    return {
        "status": "success",
        "message": f"aperiodicity classification: {scan.classification}",
        "result": {"summary": scan.summary(), "checks": checks, "tables": {"": table}},
    }


def _run_validate(exp: _Experiment) -> Dict[str, Any]:
    horizon = exp.param("horizon")
    symbols = symbols_between(exp.family, exp.driving, exp.param("t"), horizon) if horizon else None
    report = validate_family(exp.family, symbols=symbols, resolution=exp.param("resolution"),
                             k_max=exp.param("k_max"))
    axioms = check_variation_axioms(count=AXIOM_PAIRS, n_cells=AXIOM_CELLS, seed=exp.seed)
    ly = lasota_yorke_fit(exp.family, exp.driving, 0.0, None, exp.n_cells, seed=exp.seed)

    failed = [name for name, ok in (("expansion", report.delta > 1.0),
                                    ("regularity", report.min_regularity_length > 0),
                                    ("covering", report.covering_ok)) if not ok]
    table = pd.DataFrame([
        {"index": i, "map": m.name, "branches": m.n_branches, "min_slope": m.min_slope,
         "max_slope": m.max_slope, "full_branch": m.full_branch}
        for i, m in enumerate(exp.family.maps)
    ])
    checks = [
        exp.check("admissible", len(failed), report.admissible_evidence and len(failed) <= exp.plan.tolerance("admissible"),
                  ", ".join(failed)),
        exp.check("variation_axioms", len(axioms.violations),
                  len(axioms.violations) <= exp.plan.tolerance("variation_axioms")),
    ]
    return {
        "status": "success",
        "message": f"admissible_evidence={report.admissible_evidence}",
        "result": {
            "summary": {"admissibility": report.to_dict(), "axioms": axioms.to_dict(),
                        "lasota_yorke": {"alpha": ly.alpha, "beta": ly.beta, "n_steps": ly.n_steps, "note": ly.note,
                                         "samples": ly.samples}},
            "checks": checks,
            "tables": {"": table},
        },
    }


HANDLERS: Dict[str, Callable[[_Experiment], Dict[str, Any]]] = {
    "density": _run_density,
    "lambda": _run_lambda,
    "variance": _run_variance,
    "ldp": _run_ldp,
    "clt": _run_clt,
    "lclt": _run_lclt,
    "aperiodicity": _run_aperiodicity,
    "validate": _run_validate,
}


def _execute(plan: ExperimentPlan) -> Dict[str, Any]:
    try:
        exp = _Experiment(plan)
        return HANDLERS[plan.kind](exp)
    except Exception as e:
        logger.error(f"{plan.kind} experiment failed: {str(e)}")
        return {"status": "error", "message": f"{plan.kind} experiment failed: {str(e)}",
                "error_type": type(e).__name__}


def _complete_checks(plan: ExperimentPlan, checks: List[Check], reason: str) -> List[Check]:
    """One entry per applicable tolerance; anything not evaluated counts as failed."""
    by_name = {c.name: c for c in checks}
    out = []
    for name in DEFAULT_TOLERANCES[plan.kind]:
        if name in by_name:
            out.append(by_name[name])
        else:
            out.append(Check(name=name, measured=None, tolerance=plan.tolerance(name), passed=False, note=reason))
    return out


def _write_artifacts(plan: ExperimentPlan, tables: Dict[str, pd.DataFrame]) -> List[str]:
    name = artifact_name(plan.kind, plan.seed)
    paths = []
    for suffix, table in tables.items():
        path = save_table(table, f"{name}_{suffix}" if suffix else name)
        paths.append(str(path))
        if not suffix and plan.get("output", "plot") and plan.kind in SCHEMAS:
            paths.append(str(emit_plot(path, plan.kind)))
    if plan.get("output", "dump_matrices"):
        family = build_family(plan)
        cache = ulam_cache(family, plan.n_cells)
        for i in range(len(family)):
            target = output_root() / f"ulam_{plan.seed}_{i}.txt"
            paths.append(str(dump_ulam(cache[i], target, i)))
    return paths


def run(plan: ExperimentPlan, out_dir: Optional[str] = None) -> RunSummary:
    """Execute ``plan`` and write its artifacts; see ``RunSummary.exit_code``."""
    select_output(out_dir, plan.get("output", "directory"))
    logger.info(f"Starting {plan.kind} experiment (seed={plan.seed}, workers={plan.workers})")
    started = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        outcome = _execute(plan)
    result = outcome.get("result", {})

    summary = RunSummary(kind=plan.kind, seed=plan.seed, status=outcome["status"], message=outcome["message"],
                         plan=plan.to_dict(), error_type=outcome.get("error_type"),
                         warnings=[f"{w.category.__name__}: {w.message}" for w in caught])
    summary.checks = _complete_checks(plan, result.get("checks", []), outcome["message"])
    summary.result = result.get("summary", {})
    if outcome["status"] == "success":
        try:
            summary.artifacts = _write_artifacts(plan, result.get("tables", {}))
        except Exception as e:
            logger.error(f"Error writing artifacts: {str(e)}")
            summary.status, summary.message, summary.error_type = "error", f"Failed to write artifacts: {str(e)}", type(e).__name__
    summary.wall_time = time.perf_counter() - started

    formats = list(plan.get("output", "formats"))
    saved = save_output(summary.to_dict(), artifact_name(plan.kind, plan.seed), formats=formats)
    summary.artifacts.extend(saved.values())
    logger.info(f"{plan.kind} experiment finished in {summary.wall_time:.2f}s with exit code {summary.exit_code}")
    return summary
