"""Monte-Carlo checks of the quenched LDP, CLT and local CLT.

Birkhoff sums are sampled from counter-based streams in fixed chunks of
sample indices, so a batch depends only on its inputs and seed and never on
the number of workers.
"""
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid

from .bv_calculus import GridFunction, _bv, _variation, random_step_functions
from .errors import (
    DegenerateVariance,
    InvalidDensity,
    LatticeWarning,
    LowStatisticWarning,
    NonConvexCurve,
    NoLattice,
)
from .observables import Observable
from .rds_model import DrivingSystem, MapFamily, symbols_between
from .rng import CHUNK, STREAM_REFRESH, STREAM_START_POINTS, chunk_generator, uniforms
from .spectral import LambdaCurve, equivariant_density, lyapunov_exponent
from .transfer_op import NORM_PROXY_NOTE, FiberOperators

# Configure logging
logger = logging.getLogger(__name__)

START_LAWS = ("mu_omega", "lebesgue")
LOW_STAT_HITS = 50
APERIODIC_THRESHOLD = -1e-3
REFRESH_BITS = 20.0
REFRESH_GRID = 2.0 ** 32
_ONE_MINUS = float(np.nextafter(1.0, 0.0))


@dataclass
class RateFunction:
    epsilons: List[float]
    c_values: List[float]
    theta_star: List[float]
    theta_plus: float
    eps0: float

    def c_at(self, epsilon: float) -> float:
        for e, c in zip(self.epsilons, self.c_values):
            if math.isclose(e, epsilon, rel_tol=0.0, abs_tol=1e-12):
                return c
        raise KeyError(f"epsilon {epsilon} is not on the rate grid")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epsilon": self.epsilons, "c_eps": self.c_values, "theta_star": self.theta_star})


def _refine_max(x: np.ndarray, y: np.ndarray, i: int) -> Tuple[float, float]:
    """Vertex of the parabola through the grid maximum and its neighbours."""
    if i == 0 or i == len(x) - 1:
        return float(x[i]), float(y[i])
    coeffs = np.polyfit(x[i - 1:i + 2], y[i - 1:i + 2], 2)
    a, b, c = coeffs
    if a >= 0:
        return float(x[i]), float(y[i])
    xv = -b / (2.0 * a)
    if not x[i - 1] <= xv <= x[i + 1]:
        return float(x[i]), float(y[i])
    return float(xv), float(np.polyval(coeffs, xv))


def legendre_rate(curve: LambdaCurve, epsilons: Sequence[float],
                  theta_plus: Optional[float] = None) -> RateFunction:
    """``c(eps) = max_{|theta| <= theta_plus} (theta eps - Lambda(theta))`` on the curve grid."""
    if curve.axis != "real":
        raise ValueError("the rate function needs a real-axis curve")
    if curve.convexity_violations:
        logger.error(f"Legendre transform refused: {len(curve.convexity_violations)} convexity violations")
        raise NonConvexCurve(f"curve has {len(curve.convexity_violations)} convexity violations")
    thetas = np.asarray(curve.thetas, dtype=float)
    values = np.asarray(curve.values, dtype=float)
    theta_plus = float(np.max(np.abs(thetas))) if theta_plus is None else float(theta_plus)
    keep = np.abs(thetas) <= theta_plus + 1e-15
    thetas, values = thetas[keep], values[keep]
    eps0 = float((values[-1] - values[-2]) / (thetas[-1] - thetas[-2]))

    c_values, theta_star = [], []
    for eps in epsilons:
        objective = thetas * eps - values
        i = int(np.argmax(objective))
        t_star, c = _refine_max(thetas, objective, i)
        c_values.append(max(c, 0.0))
        theta_star.append(t_star)
        if eps >= eps0:
            logger.warning(f"epsilon={eps} is beyond the fitted eps0={eps0:.4g}; maximizer sits at the grid edge")
    return RateFunction(epsilons=[float(e) for e in epsilons], c_values=c_values,
                        theta_star=theta_star, theta_plus=theta_plus, eps0=eps0)


def sample_start_points(v0: GridFunction, count: int, seed: int, start: int = 0) -> np.ndarray:
    """Points distributed by the piecewise-constant density ``v0``.

    Sample ``i`` is the exact inverse CDF of uniform number ``start + i`` of
    the start-point stream.
    """
    v = np.real(v0.values)
    if v.min() < -1e-12:
        raise InvalidDensity(f"density has a negative cell ({v.min():.3e})")
    v = np.clip(v, 0.0, None)
    if abs(v.mean() - 1.0) > 1e-8:
        raise InvalidDensity(f"density integrates to {v.mean():.12g}, not 1")
    n = v.size
    cdf = np.concatenate(([0.0], np.cumsum(v)))
    cdf = cdf / cdf[-1]
    u = uniforms(seed, STREAM_START_POINTS, start, count)
    idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, n - 1)
    width = cdf[idx + 1] - cdf[idx]
    frac = np.where(width > 0, (u - cdf[idx]) / np.where(width > 0, width, 1.0), 0.0)
    return np.clip((idx + frac) / n, 0.0, _ONE_MINUS)


@dataclass
class SampleBatch:
    t0: int
    n: int
    count: int
    seed: int
    sums: np.ndarray
    start_law: str = "mu_omega"

    def __post_init__(self):
        if len(self.sums) != self.count:
            raise ValueError("sample count does not match the number of sums")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"index": np.arange(self.count), "sum": self.sums})


def _sample_chunk(family: MapFamily, observable: Observable, symbols: np.ndarray,
                  offsets: np.ndarray, x: np.ndarray, seed: int, chunk: int) -> np.ndarray:
    refresh = chunk_generator(seed, STREAM_REFRESH, chunk)
    sums = np.zeros(x.size)
    bits = np.zeros(x.size)
    for k, symbol in enumerate(symbols):
        symbol = int(symbol)
        sums += observable.evaluate(symbol, x) - offsets[k]
        x, slopes = family.maps[symbol].step(x)
        bits += np.log2(slopes)
        stale = bits >= REFRESH_BITS
        if stale.any():
            fresh = refresh.random(x.size)
            x = np.where(stale, np.floor(x * REFRESH_GRID) / REFRESH_GRID + fresh / REFRESH_GRID, x)
            x = np.minimum(x, _ONE_MINUS)
            bits = np.where(stale, 0.0, bits)
    return sums


def birkhoff_samples(
    family: MapFamily,
    driving: DrivingSystem,
    observable: Observable,
    t0: int,
    n: int,
    count: int,
    seed: int,
    start_law: str = "mu_omega",
    n_cells: int = 1024,
    workers: int = 1,
    chunk_size: int = CHUNK,
) -> SampleBatch:
    """``S_n = sum_{i<n} g_{t0+i}(x_i)`` for ``count`` starting points.

    Trajectories refresh their low bits from a counter-based stream once
    their accumulated expansion passes 2^20, so doubling-type maps do not
    collapse onto 0 in double precision.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if start_law not in START_LAWS:
        raise ValueError(f"start_law must be one of {START_LAWS}, got '{start_law}'")
    if not observable.centered and observable.kind != "zero":
        raise ValueError("Birkhoff sums are sampled for fiberwise centered observables")

    symbols = symbols_between(family, driving, t0, n)
    offsets = observable.offsets(t0, n)
    if start_law == "mu_omega":
        v0 = equivariant_density(family, driving, t0, 0.0, None, n_cells).v
    else:
        v0 = GridFunction.constant(n_cells, 1.0)

    bounds = [(lo, min(lo + chunk_size, count)) for lo in range(0, count, chunk_size)]

    def run_chunk(c: int) -> np.ndarray:
        lo, hi = bounds[c]
        x = sample_start_points(v0, hi - lo, seed, start=lo)
        sums = _sample_chunk(family, observable, symbols, offsets, x, seed, c)
        logger.debug(f"sampled chunk {c} ({hi - lo} trajectories of length {n})")
        return sums

    logger.info(f"sampling {count} Birkhoff sums of length {n} from t0={t0} ({start_law}, {workers} workers)")
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, range(len(bounds))))
    else:
        parts = [run_chunk(c) for c in range(len(bounds))]
    sums = np.concatenate(parts) if parts else np.empty(0)
    return SampleBatch(t0=t0, n=n, count=count, seed=seed, sums=sums, start_law=start_law)


def ldp_experiment(batches: Sequence[SampleBatch], rate: RateFunction,
                   epsilons: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Empirical tail rates ``-(1/n) log mu(S_n > n eps)`` against ``c(eps)``."""
    epsilons = rate.epsilons if epsilons is None else list(epsilons)
    rows = []
    for eps in epsilons:
        c = rate.c_at(eps)
        for batch in sorted(batches, key=lambda b: b.n):
            hits = int(np.count_nonzero(batch.sums > batch.n * eps))
            p_hat = hits / batch.count
            rate_hat = -math.log(p_hat) / batch.n if hits else float("inf")
            rel_gap = abs(rate_hat - c) / c if hits and c > 0 else float("nan")
            low_stat = hits < LOW_STAT_HITS
            if low_stat:
                message = f"LDP row eps={eps}, n={batch.n}: only {hits} tail hits"
                logger.warning(message)
                warnings.warn(message, LowStatisticWarning, stacklevel=2)
            rows.append({"epsilon": float(eps), "n": batch.n, "p_hat": p_hat, "rate_hat": rate_hat,
                         "c_eps": c, "rel_gap": rel_gap, "low_stat": low_stat})
    return pd.DataFrame(rows, columns=["epsilon", "n", "p_hat", "rate_hat", "c_eps", "rel_gap", "low_stat"])


def ldp_trend(table: pd.DataFrame) -> pd.DataFrame:
    """Per epsilon, whether the gap at the largest n is no larger than at the smallest."""
    rows = []
    for eps, group in table.groupby("epsilon", sort=True):
        group = group.sort_values("n")
        first, last = group.iloc[0], group.iloc[-1]
        rows.append({"epsilon": eps, "n_small": int(first["n"]), "n_large": int(last["n"]),
                     "gap_small": first["rel_gap"], "gap_large": last["rel_gap"],
                     "improving": bool(last["rel_gap"] <= first["rel_gap"])})
    return pd.DataFrame(rows, columns=["epsilon", "n_small", "n_large", "gap_small", "gap_large", "improving"])


class CltResult(NamedTuple):
    ks: float
    var_emp: float
    p_value: float
    n: int
    count: int
    sigma2: float


def clt_experiment(batch: SampleBatch, sigma2: float) -> CltResult:
    """KS distance of ``S_n / sqrt(n)`` to ``N(0, sigma2)`` and the empirical ``E[S_n^2] / n``."""
    if not sigma2 > 0:
        logger.error(f"CLT refused: sigma2={sigma2}")
        raise DegenerateVariance(f"sigma2={sigma2} is not positive; the CLT check is refused")
    z = batch.sums / math.sqrt(batch.n)
    result = stats.kstest(z, "norm", args=(0.0, math.sqrt(sigma2)))
    var_emp = float(np.mean(batch.sums ** 2) / batch.n)
    logger.info(f"CLT n={batch.n}: ks={result.statistic:.4f}, var_emp={var_emp:.5f} vs {sigma2:.5f}")
    return CltResult(float(result.statistic), var_emp, float(result.pvalue), batch.n, batch.count, float(sigma2))


@dataclass
class LcltReport:
    s_grid: List[float]
    J: Tuple[float, float]
    statistic: List[float]
    target: List[float]
    sup_error: float
    periodic: bool = False
    lattice_span: Optional[float] = None
    eta_bar_n: Optional[float] = None
    off_lattice_mass: Optional[float] = None
    sigma: float = 0.0
    n: int = 0

    def total_mass(self) -> float:
        """Trapezoid of the statistic over ``s_grid`` divided by ``|J| sigma sqrt(n)``."""
        width = self.J[1] - self.J[0]
        area = float(trapezoid(self.statistic, self.s_grid))
        return area / (width * self.sigma * math.sqrt(self.n))

    def to_frame(self) -> pd.DataFrame:
        stat = np.asarray(self.statistic)
        target = np.asarray(self.target)
        return pd.DataFrame({"s": self.s_grid, "statistic": stat, "target": target,
                             "abs_err": np.abs(stat - target)})


def _interval_mass(sorted_sums: np.ndarray, J: Tuple[float, float], s: float) -> float:
    """Fraction of sums with ``s + S in [a, b)``."""
    a, b = J
    lo = np.searchsorted(sorted_sums, a - s, side="left")
    hi = np.searchsorted(sorted_sums, b - s, side="left")
    return (hi - lo) / sorted_sums.size


def _lclt_statistic(batch: SampleBatch, sigma2: float, J: Tuple[float, float],
                    s_grid: Sequence[float]) -> Tuple[np.ndarray, float]:
    if not sigma2 > 0:
        logger.error(f"LCLT refused: sigma2={sigma2}")
        raise DegenerateVariance(f"sigma2={sigma2} is not positive; the LCLT check is refused")
    if not J[1] > J[0]:
        raise ValueError("J must be a non-empty interval [a, b)")
    sigma = math.sqrt(sigma2)
    sorted_sums = np.sort(batch.sums)
    scale = sigma * math.sqrt(batch.n)
    return np.array([scale * _interval_mass(sorted_sums, J, s) for s in s_grid]), sigma


def lclt_experiment(batch: SampleBatch, sigma2: float, J: Tuple[float, float],
                    s_grid: Sequence[float]) -> LcltReport:
    """``sigma sqrt(n) mu(s + S_n in J)`` against ``exp(-s^2 / (2 n sigma2)) |J| / sqrt(2 pi)``."""
    J = (float(J[0]), float(J[1]))
    statistic, sigma = _lclt_statistic(batch, sigma2, J, s_grid)
    s = np.asarray(s_grid, dtype=float)
    target = np.exp(-s ** 2 / (2.0 * batch.n * sigma2)) * (J[1] - J[0]) / math.sqrt(2.0 * math.pi)
    sup_error = float(np.max(np.abs(statistic - target))) if s.size else 0.0
    logger.info(f"LCLT n={batch.n}, J={J}: sup error {sup_error:.4f} over {s.size} points")
    return LcltReport(s_grid=s.tolist(), J=J, statistic=statistic.tolist(), target=target.tolist(),
                      sup_error=sup_error, sigma=sigma, n=batch.n)


def lclt_periodic_experiment(batch: SampleBatch, sigma2: float, J: Tuple[float, float],
                             s_grid: Sequence[float], eta_bar_n: float, span: float) -> LcltReport:
    """Local CLT on the shifted lattice ``eta_bar_n + span * Z``.

    The target is ``span * exp(-s^2 / (2 n sigma2)) / sqrt(2 pi)`` times the
    number of lattice points ``eta_bar_n + s + l * span`` in J, with
    ``|l|`` bounded through the realized sample range.
    """
    if not span or span <= 0:
        raise NoLattice("a positive lattice span is required")
    J = (float(J[0]), float(J[1]))
    statistic, sigma = _lclt_statistic(batch, sigma2, J, s_grid)
    s = np.asarray(s_grid, dtype=float)
    l_max = int(math.ceil(float(np.max(np.abs(batch.sums), initial=0.0)) / span)) + 2
    l_max += int(math.ceil((np.max(np.abs(s), initial=0.0) + abs(eta_bar_n) + max(abs(J[0]), abs(J[1]))) / span))
    lattice = eta_bar_n + span * np.arange(-l_max, l_max + 1)
    counts = np.array([np.count_nonzero((lattice + si >= J[0]) & (lattice + si < J[1])) for si in s])
    target = span * counts * np.exp(-s ** 2 / (2.0 * batch.n * sigma2)) / math.sqrt(2.0 * math.pi)
    offset = (batch.sums - eta_bar_n) / span
    off_mass = float(np.mean(np.abs(offset - np.round(offset)) > 1e-9)) if batch.count else 0.0
    sup_error = float(np.max(np.abs(statistic - target))) if s.size else 0.0
    logger.info(f"periodic LCLT n={batch.n}, span={span}: sup error {sup_error:.4f}, off-lattice mass {off_mass}")
    return LcltReport(s_grid=s.tolist(), J=J, statistic=statistic.tolist(), target=target.tolist(),
                      sup_error=sup_error, periodic=True, lattice_span=float(span),
                      eta_bar_n=float(eta_bar_n), off_lattice_mass=off_mass, sigma=sigma, n=batch.n)


def lattice_detect(observable: Observable, n_symbols: int = 1, n_cells: int = 1024,
                   tol: float = 1e-9) -> Optional[Tuple[Tuple[float, ...], float]]:
    """Decompose the raw observable as ``eta_s + k`` with ``k`` on a lattice ``span * Z``.

    ``eta_s`` is the first-cell value of ``g_s``. Returns ``(eta, span)`` or
    None when some cell is off every integer lattice. Span 0 means every
    ``g_s`` is constant.
    """
    if observable.kind == "table":
        n_symbols = len(observable.tables)
    etas = []
    gaps = []
    for s in range(n_symbols):
        values = observable.raw.grid_values(s, n_cells)
        eta = float(values[0])
        shifted = values - eta
        rounded = np.round(shifted)
        if np.max(np.abs(shifted - rounded)) > tol:
            return None
        etas.append(eta)
        gaps.append(np.abs(rounded).astype(np.int64))
    gaps = np.concatenate(gaps)
    span = int(np.gcd.reduce(gaps)) if gaps.size else 0
    if span == 0:
        message = "observable is constant on every fiber; lattice span reported as 0"
        logger.warning(message)
        warnings.warn(message, LatticeWarning, stacklevel=2)
    return tuple(etas), float(span)


def eta_bar(observable: Observable, family: MapFamily, driving: DrivingSystem,
            t0: int, n: int, eta: Optional[Sequence[float]] = None) -> float:
    """``sum_{i<n} eta_{t0+i}`` where the fiber shift includes the centering offset."""
    if eta is None:
        eta = observable.eta
    if eta is None:
        detected = lattice_detect(observable, n_symbols=len(family))
        if detected is None:
            raise NoLattice("observable has no lattice decomposition")
        eta = detected[0]
    symbols = symbols_between(family, driving, t0, n)
    shifts = np.asarray(eta, dtype=float)[symbols] - observable.offsets(t0, n)
    return float(math.fsum(shifts))


def morita_certificate(family: MapFamily, observable: Observable, t: float,
                       n_cells: int = 1024, n0_max: int = 256) -> Optional[int]:
    """Smallest ``n0`` with ``(2 + n0 var(exp(i t g))) delta^{-n0} < 1``, or None."""
    n_symbols = len(observable.tables) if observable.kind == "table" else len(family)
    var = max(_variation(np.exp(1j * t * observable.raw.grid_values(s, n_cells)))
              for s in range(n_symbols))
    for n0 in range(1, n0_max + 1):
        if (2.0 + n0 * var) < family.delta ** n0:
            return n0
    return None


@dataclass
class AperiodicityReport:
    t_grid: List[float]
    lambda_it: List[float]
    classification: str
    norm_decay_fits: List[Tuple[float, float]]
    morita_n0: List[Optional[int]] = field(default_factory=list)
    span: Optional[float] = None
    eta: Optional[Tuple[float, ...]] = None
    lambda_at_lattice: Optional[float] = None
    threshold: float = APERIODIC_THRESHOLD

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.t_grid, "lambda_it": self.lambda_it,
                             "rho_fit": [rho for _, rho in self.norm_decay_fits]})

    def summary(self) -> Dict[str, Any]:
        return {
            "classification": self.classification,
            "span": self.span,
            "eta": list(self.eta) if self.eta is not None else None,
            "lambda_at_lattice": self.lambda_at_lattice,
            "max_lambda_it": max(self.lambda_it) if self.lambda_it else None,
            "threshold": self.threshold,
            "norm_note": NORM_PROXY_NOTE,
        }


def _norm_decay(family: MapFamily, driving: DrivingSystem, theta: complex, observable: Observable,
                n_cells: int, n_steps: int, trials: int, seed: int, t0: int) -> Tuple[float, float]:
    """``(C, rho)`` fitted to the BV envelope of the unnormalized imaginary-twisted cocycle."""
    ops = FiberOperators(family, driving, n_cells, theta, observable)
    symbols = ops.symbols(t0, n_steps)
    scalars = ops.scalars(t0, n_steps)
    fs = np.column_stack(random_step_functions(n_cells, trials, seed, n_jumps=8)).astype(complex)
    fs = fs / np.array([_bv(fs[:, k]) for k in range(trials)])
    envelope = [1.0]
    for step in range(n_steps):
        fs = ops.forward(symbols[step], scalars[step], fs)
        envelope.append(max(_bv(fs[:, k]) for k in range(trials)))
    envelope = np.asarray(envelope)
    keep = np.nonzero(envelope > 1e-300)[0]
    if keep.size < 2:
        return 1.0, 0.0
    slope, intercept = np.polyfit(keep.astype(float), np.log(envelope[keep]), 1)
    return float(np.exp(intercept)), float(np.exp(slope))


def aperiodicity_scan(
    family: MapFamily,
    driving: DrivingSystem,
    observable: Observable,
    t_grid: Sequence[float],
    n_orbit: int = 20000,
    n_burn: int = 256,
    n_cells: int = 1024,
    threshold: float = APERIODIC_THRESHOLD,
    decay_steps: int = 24,
    trials: int = 8,
    seed: int = 0,
    workers: int = 1,
    t_end: int = 0,
) -> AperiodicityReport:
    """Lambda(it) on ``t_grid`` plus the lattice test.

    The observable is classified periodic when it decomposes on a lattice of
    span ``d > 0`` and ``Lambda(2 pi i / d)`` stays above ``threshold``;
    aperiodic evidence requires every ``Lambda(it)`` at or below it; anything
    else is inconclusive.
    """
    t_grid = [float(t) for t in t_grid]
    if any(abs(t) < 1e-6 for t in t_grid):
        raise ValueError("t_grid must exclude a neighbourhood of 0")

    def exponent(t: float) -> float:
        return lyapunov_exponent(family, driving, 1j * t, observable, n_orbit, n_burn, n_cells, t_end)

    logger.info(f"aperiodicity scan over {len(t_grid)} frequencies")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            lambdas = list(pool.map(exponent, t_grid))
    else:
        lambdas = [exponent(t) for t in t_grid]
    fits = [_norm_decay(family, driving, 1j * t, observable, n_cells, decay_steps, trials, seed, t_end)
            for t in t_grid]
    morita = [morita_certificate(family, observable, t, n_cells) for t in t_grid]

    lattice = lattice_detect(observable, n_symbols=len(family), n_cells=n_cells)
    report = AperiodicityReport(t_grid=t_grid, lambda_it=lambdas, classification="inconclusive",
                                norm_decay_fits=fits, morita_n0=morita, threshold=threshold)
    if lattice is not None:
        report.eta, report.span = lattice
        if report.span == 0:
            report.classification = "periodic_lattice"
            return report
        report.lambda_at_lattice = exponent(2.0 * math.pi / report.span)
        if report.lambda_at_lattice >= threshold:
            report.classification = "periodic_lattice"
            logger.info(f"periodic lattice with span {report.span}: Lambda(2 pi i / span)={report.lambda_at_lattice:.3g}")
            return report
    if all(lam <= threshold for lam in lambdas):
        report.classification = "aperiodic_evidence"
    logger.info(f"aperiodicity classification: {report.classification}")
    return report
