"""Quenched spectral objects of the twisted cocycle.

Equivariant densities v^theta_t and normalizers lambda^theta_t come from
pull-back power iteration: start from the uniform density n steps in the
past, push forward through the twisted operators while dividing by the
integral at every step, and double n until two horizons agree in the
discrete BV norm. The exponent curve Lambda, the variance, dual functionals
and decay-rate fits are built on top of that pass.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .bv_calculus import GridFunction, _bv, coarsen, random_step_functions
from .errors import (
    CenteringError,
    DegenerateVarianceWarning,
    NoConvergence,
    NormalizerCollapse,
)
from .observables import FiberCentering, Observable
from .rds_model import DrivingSystem, MapFamily, OrbitWindow
from .transfer_op import NORM_PROXY_NOTE, FiberOperators, ulam_cache

# Configure logging
logger = logging.getLogger(__name__)

COLLAPSE = 1e-12
DEFAULT_TOL = 1e-10
DEFAULT_N_MAX = 1 << 14
CONVEXITY_TOL = 1e-8
SERIES_CUTOFF = 1e-8
DEGENERATE_SIGMA2 = 1e-6


@dataclass(eq=False)
class FiberSpectralData:
    t: int
    theta: complex
    v: GridFunction
    lam: complex
    phi: Optional[GridFunction] = None
    burn_in_used: int = 0
    residual: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        lam = complex(self.lam)
        return {
            "t": self.t,
            "theta": str(self.theta),
            "lambda_real": lam.real,
            "lambda_imag": lam.imag,
            "burn_in_used": self.burn_in_used,
            "residual": self.residual,
            "v_min": float(np.min(np.real(self.v.values))),
            "v_max": float(np.max(np.real(self.v.values))),
        }


def _pull_back(ops: FiberOperators, t: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Push the uniform density from time ``t - n`` to ``t``.

    Returns the normalized density at ``t`` and the per-step normalizers.
    """
    start = t - n
    symbols = ops.symbols(start, n)
    scalars = ops.scalars(start, n)
    complex_twist = np.iscomplexobj(scalars) or np.iscomplexobj(ops.theta)
    v = np.ones(ops.n_cells, dtype=complex if complex_twist else float)
    lams = np.empty(n, dtype=v.dtype)
    for step in range(n):
        u = ops.forward(symbols[step], scalars[step], v)
        lam = u.mean()
        if not abs(lam) >= COLLAPSE:
            raise NormalizerCollapse(
                f"normalizer |lambda|={abs(lam):.3e} below {COLLAPSE:.0e}",
                time=start + step, theta=ops.theta, step=step,
            )
        v = u / lam
        lams[step] = lam
    return v, lams


def _anchor_normalizer(ops: FiberOperators, t: int, v: np.ndarray) -> complex:
    """``lambda_t = ∫ exp(theta g_t) v_t dm``."""
    if ops.theta == 0:
        return v.mean()
    symbol = int(ops.symbols(t, 1)[0])
    return (ops.twist(symbol) * ops.scalars(t, 1)[0] * v).mean()


def equivariant_density(
    family: MapFamily,
    driving: DrivingSystem,
    t: int,
    theta: complex,
    observable: Optional[Observable],
    n_cells: int,
    tol: float = DEFAULT_TOL,
    n_start: int = 16,
    n_max: int = DEFAULT_N_MAX,
) -> FiberSpectralData:
    """Top equivariant direction ``v^theta_t`` with ``∫ v dm = 1`` and its normalizer."""
    ops = FiberOperators(family, driving, n_cells, theta, observable)
    n = min(n_start, n_max)
    v_prev, _ = _pull_back(ops, t, n)
    while True:
        if 2 * n > n_max:
            logger.error(f"pull-back at t={t}, theta={theta} did not converge by n_max={n_max}")
            raise NoConvergence(f"Cauchy tolerance {tol:.1e} unmet at n_max={n_max}",
                                time=t, theta=theta, step=n)
        v, _ = _pull_back(ops, t, 2 * n)
        distance = _bv(v - v_prev)
        logger.debug(f"pull-back t={t} theta={theta}: horizon {2 * n}, distance {distance:.3e}")
        n *= 2
        if distance <= tol:
            break
        v_prev = v
    lam = _anchor_normalizer(ops, t, v)
    if theta == 0:
        v = np.real(v)
        if v.min() <= 0:
            logger.warning(f"equivariant density at t={t} has min cell {v.min():.3e}")
        lam = float(np.real(lam))
    logger.debug(f"equivariant density t={t} theta={theta} converged with horizon {n}")
    return FiberSpectralData(t=t, theta=theta, v=GridFunction(v), lam=lam,
                             burn_in_used=n, residual=float(distance))


def center_observable(
    raw: Observable,
    family: MapFamily,
    driving: DrivingSystem,
    window: Union[OrbitWindow, Tuple[int, int]],
    n_cells: int = 1024,
    tol: float = DEFAULT_TOL,
    block: int = 1024,
) -> Observable:
    """Fiberwise centered copy of ``raw``.

    Offsets for the fiber times in ``window`` are computed eagerly and checked;
    times outside it are filled in lazily with the same construction.
    """
    if isinstance(window, OrbitWindow):
        start, stop = window.start, window.stop
    else:
        start, stop = int(window[0]), int(window[1])
    centering = FiberCentering(raw, family, driving, n_cells, block=block, tol=tol)
    offsets = centering.offsets(start, stop - start)
    try:
        centering.check(tol)
    except CenteringError as e:
        logger.error(f"centering failed on window [{start}, {stop}): {e}")
        raise
    if stop > start:
        logger.info(f"centered observable on [{start}, {stop}): offsets in "
                    f"[{offsets.min():.6g}, {offsets.max():.6g}]")
    return raw.with_centering(centering)


def normalizer_logs(
    family: MapFamily,
    driving: DrivingSystem,
    theta: complex,
    observable: Optional[Observable],
    n_steps: int,
    n_cells: int,
    t_end: int = 0,
) -> np.ndarray:
    """``log|lambda_hat|`` for every step of one pull-back pass ending at ``t_end``."""
    ops = FiberOperators(family, driving, n_cells, theta, observable)
    _, lams = _pull_back(ops, t_end, n_steps)
    return np.log(np.abs(lams))


def lyapunov_exponent(
    family: MapFamily,
    driving: DrivingSystem,
    theta: complex,
    observable: Optional[Observable],
    n_orbit: int,
    n_burn: int,
    n_cells: int,
    t_end: int = 0,
) -> float:
    """Birkhoff average of ``log|lambda_hat|`` over the last ``n_orbit`` steps."""
    if n_orbit < 1:
        raise ValueError("n_orbit must be at least 1")
    logs = normalizer_logs(family, driving, theta, observable, n_burn + n_orbit, n_cells, t_end)
    value = float(logs[n_burn:].mean())
    if not np.isfinite(value):
        raise NoConvergence("non-finite exponent", time=t_end, theta=theta)
    return value


@dataclass
class LambdaCurve:
    axis: str
    thetas: List[float]
    values: List[float]
    n_orbit: int
    n_burn: int
    n_cells: int
    d1_at_0: float
    d2_at_0: float
    h: float = 1e-2
    convexity_violations: List[Dict[str, float]] = field(default_factory=list)

    @property
    def value_at_0(self) -> float:
        return float(self.values[int(np.argmin(np.abs(np.asarray(self.thetas))))])

    @property
    def usable_radius(self) -> float:
        """Largest grid |theta| strictly inside the first convexity violation."""
        bad = [abs(v["theta"]) for v in self.convexity_violations]
        limit = min(bad) if bad else float("inf")
        inside = [abs(t) for t in self.thetas if abs(t) < limit]
        return float(max(inside)) if inside else 0.0

    @classmethod
    def from_values(cls, thetas: Sequence[float], values: Sequence[float],
                    axis: str = "real") -> "LambdaCurve":
        """Curve from given samples; derivatives from the nearest symmetric neighbours of 0."""
        order = np.argsort(np.asarray(thetas, dtype=float))
        thetas = _snap_grid(thetas)
        values = np.asarray(values, dtype=float)[order]
        _check_grid(thetas)
        i0 = int(np.argmin(np.abs(thetas)))
        step = thetas[i0 + 1] - thetas[i0]
        d1 = (values[i0 + 1] - values[i0 - 1]) / (2.0 * step)
        d2 = (values[i0 + 1] - 2.0 * values[i0] + values[i0 - 1]) / step ** 2
        return cls(axis=axis, thetas=thetas.tolist(), values=values.tolist(), n_orbit=0,
                   n_burn=0, n_cells=0, d1_at_0=float(d1), d2_at_0=float(d2), h=float(step),
                   convexity_violations=convexity_violations(thetas, values) if axis == "real" else [])

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame({"theta": self.thetas, "lambda_value": self.values})

    def summary(self) -> Dict[str, Any]:
        return {
            "axis": self.axis,
            "points": len(self.thetas),
            "n_orbit": self.n_orbit,
            "n_burn": self.n_burn,
            "n_cells": self.n_cells,
            "d1": self.d1_at_0,
            "d2": self.d2_at_0,
            "lambda_at_0": self.value_at_0,
            "convexity_violations": len(self.convexity_violations),
            "usable_radius": self.usable_radius,
        }


def _snap_grid(theta_grid: Sequence[float]) -> np.ndarray:
    grid = np.sort(np.asarray(theta_grid, dtype=float))
    grid[np.abs(grid) < 1e-14] = 0.0
    return grid


def _check_grid(thetas: np.ndarray) -> None:
    if thetas.size < 3 or not np.any(thetas == 0.0):
        raise ValueError("theta grid must contain 0 and points on both sides")
    if not np.allclose(thetas, -thetas[::-1], atol=1e-12):
        raise ValueError("theta grid must be symmetric about 0")


def convexity_violations(thetas: np.ndarray, values: np.ndarray,
                         tol: float = CONVEXITY_TOL) -> List[Dict[str, float]]:
    """Interior grid points lying above the chord of their neighbours by more than ``tol``."""
    out = []
    for i in range(1, len(thetas) - 1):
        x0, x1, x2 = thetas[i - 1], thetas[i], thetas[i + 1]
        w = (x1 - x0) / (x2 - x0)
        chord = (1.0 - w) * values[i - 1] + w * values[i + 1]
        if chord - values[i] < -tol:
            out.append({"theta": float(x1), "excess": float(values[i] - chord)})
    return out


def _richardson(values: Dict[float, float], h: float) -> Tuple[float, float]:
    def d1(s):
        return (values[s] - values[-s]) / (2.0 * s)

    def d2(s):
        return (values[s] - 2.0 * values[0.0] + values[-s]) / s ** 2

    half = h / 2.0
    return (4.0 * d1(half) - d1(h)) / 3.0, (4.0 * d2(half) - d2(h)) / 3.0


def lambda_curve(
    family: MapFamily,
    driving: DrivingSystem,
    observable: Optional[Observable],
    axis: str = "real",
    theta_grid: Sequence[float] = tuple(np.linspace(-0.3, 0.3, 13)),
    n_orbit: int = 20000,
    n_burn: int = 256,
    n_cells: int = 1024,
    h: float = 1e-2,
    workers: int = 1,
    t_end: int = 0,
) -> LambdaCurve:
    """Lambda on a symmetric grid of the real or imaginary axis.

    Every point reuses the same driving realization. Derivatives at 0 come
    from central differences at h and h/2 with one Richardson step.
    """
    if axis not in ("real", "imaginary"):
        raise ValueError(f"axis must be 'real' or 'imaginary', got '{axis}'")
    grid = _snap_grid(theta_grid)
    _check_grid(grid)
    points = sorted(set(grid.tolist()) | {h, -h, h / 2.0, -h / 2.0, 0.0})

    def evaluate(x: float) -> float:
        theta = 1j * x if axis == "imaginary" else x
        if x == 0.0:
            theta = 0.0
        return lyapunov_exponent(family, driving, theta, observable, n_orbit, n_burn, n_cells, t_end)

    logger.info(f"Lambda curve on the {axis} axis: {len(points)} points, n_orbit={n_orbit}, N={n_cells}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, points))
    else:
        results = [evaluate(x) for x in points]
    by_point = dict(zip(points, results))
    values = np.array([by_point[x] for x in grid.tolist()])
    d1, d2 = _richardson(by_point, h)
    violations = convexity_violations(grid, values) if axis == "real" else []
    if violations:
        logger.warning(f"Lambda curve has {len(violations)} convexity violations")
    return LambdaCurve(axis=axis, thetas=grid.tolist(), values=values.tolist(), n_orbit=n_orbit,
                       n_burn=n_burn, n_cells=n_cells, d1_at_0=float(d1), d2_at_0=float(d2), h=h,
                       convexity_violations=violations)


@dataclass
class VarianceEstimate:
    sigma2_series: float
    sigma2_curve: float
    terms: List[float]
    decay_rate: float
    truncation_j: int
    degenerate: bool = False

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame({"j": np.arange(len(self.terms)), "term": self.terms})

    def summary(self) -> Dict[str, Any]:
        return {
            "sigma2_series": self.sigma2_series,
            "sigma2_curve": self.sigma2_curve,
            "decay_rate": self.decay_rate,
            "truncation_j": self.truncation_j,
            "degenerate": self.degenerate,
        }


def _log_linear_fit(values: np.ndarray, floor: float) -> Optional[Tuple[float, float, float, np.ndarray]]:
    """Fit ``log values[k] ~ a + b k`` over entries above ``floor``.

    Returns ``(exp(b), exp(a), rms residual, indices used)`` or None when fewer
    than two entries survive.
    """
    values = np.abs(np.asarray(values, dtype=float))
    keep = np.nonzero(values > floor)[0]
    if keep.size < 2:
        return None
    logs = np.log(values[keep])
    slope, intercept = np.polyfit(keep.astype(float), logs, 1)
    resid = logs - (intercept + slope * keep)
    return float(np.exp(slope)), float(np.exp(intercept)), float(np.sqrt(np.mean(resid ** 2))), keep


def correlation_terms(
    family: MapFamily,
    driving: DrivingSystem,
    observable: Observable,
    j_max: int,
    n_orbit: int,
    n_cells: int,
    t_start: int = 0,
) -> np.ndarray:
    """Time averages over ``n_orbit`` origins of ``∫ g_t · g_{t+j}∘T^(j) dmu_t``, j = 0..j_max.

    Each origin's ``g_t v0_t`` is pushed forward j times and paired with
    ``g_{t+j}`` on the grid.
    """
    matrices = ulam_cache(family, n_cells)
    total = n_orbit + j_max
    ops = FiberOperators(family, driving, n_cells)
    symbols = ops.symbols(t_start, total)
    offsets = observable.offsets(t_start, total)
    grids = {int(s): observable.grid_values(int(s), n_cells) for s in np.unique(symbols)}
    v = np.real(equivariant_density(family, driving, t_start, 0.0, None, n_cells).v.values)
    cols = np.zeros((n_cells, j_max + 1))
    sums = np.zeros(j_max + 1)
    counts = np.zeros(j_max + 1)
    lags = np.arange(j_max + 1)
    for idx in range(total):
        symbol = int(symbols[idx])
        g = grids[symbol] - offsets[idx]
        cols = np.roll(cols, 1, axis=1)
        cols[:, 0] = g * v if idx < n_orbit else 0.0
        pair = (g[:, None] * cols).mean(axis=0)
        origins = idx - lags
        valid = (origins >= 0) & (origins < n_orbit)
        sums[valid] += pair[valid]
        counts[valid] += 1
        matrix = matrices[symbol]
        cols = matrix.push(cols)
        v = matrix.push(v)
        v = v / v.mean()
    return sums / counts


def variance(
    family: MapFamily,
    driving: DrivingSystem,
    observable: Observable,
    j_max: int = 32,
    n_orbit: int = 1000,
    n_cells: int = 1024,
    t_start: int = 0,
    curve: Optional[LambdaCurve] = None,
    n_burn: int = 256,
) -> VarianceEstimate:
    """Sigma^2 by the correlation series, cross-checked against Lambda''(0)."""
    if not observable.centered:
        raise ValueError("variance needs a fiberwise centered observable")
    terms = correlation_terms(family, driving, observable, j_max, n_orbit, n_cells, t_start)
    small = np.nonzero(np.abs(terms[1:]) < SERIES_CUTOFF)[0]
    if small.size:
        # c_J itself is below the cutoff and left out.
        truncation_j = int(small[0]) + 1
        tail = terms[1:truncation_j]
    else:
        truncation_j = j_max
        tail = terms[1:j_max + 1]
    sigma2_series = float(terms[0] + 2.0 * tail.sum())

    fit = _log_linear_fit(terms[1:], 1e-15)
    decay = fit[0] if fit is not None else float(np.finfo(float).eps)

    if curve is None:
        curve = lambda_curve(family, driving, observable, "real", (-1e-2, 0.0, 1e-2),
                             n_orbit=n_orbit, n_burn=n_burn, n_cells=n_cells,
                             t_end=t_start + n_orbit)
    sigma2_curve = float(curve.d2_at_0)

    degenerate = sigma2_series < DEGENERATE_SIGMA2
    if degenerate:
        message = f"sigma2_series={sigma2_series:.3e} below {DEGENERATE_SIGMA2:.0e}; observable may be a coboundary"
        logger.warning(message)
        warnings.warn(message, DegenerateVarianceWarning, stacklevel=2)
    logger.info(f"variance: series {sigma2_series:.6g} (truncated at j={truncation_j}), curve {sigma2_curve:.6g}")
    return VarianceEstimate(sigma2_series=sigma2_series, sigma2_curve=sigma2_curve,
                            terms=terms.tolist(), decay_rate=decay, truncation_j=truncation_j,
                            degenerate=degenerate)


def _pull_adjoint(ops: FiberOperators, t: int, n: int) -> np.ndarray:
    symbols = ops.symbols(t, n)
    scalars = ops.scalars(t, n)
    complex_twist = np.iscomplexobj(scalars) or np.iscomplexobj(ops.theta)
    phi = np.ones(ops.n_cells, dtype=complex if complex_twist else float)
    for step in range(n - 1, -1, -1):
        u = ops.backward(symbols[step], scalars[step], phi)
        c = u.mean()
        if not abs(c) >= COLLAPSE:
            raise NormalizerCollapse(f"adjoint normalizer |c|={abs(c):.3e} below {COLLAPSE:.0e}",
                                     time=t + step, theta=ops.theta, step=n - 1 - step)
        phi = u / c
    return phi


def dual_functional(
    family: MapFamily,
    driving: DrivingSystem,
    t: int,
    theta: complex,
    observable: Optional[Observable],
    n_fwd: int = 16,
    n_cells: int = 1024,
    tol: float = DEFAULT_TOL,
    n_max: int = DEFAULT_N_MAX,
    v: Optional[GridFunction] = None,
) -> GridFunction:
    """``phi^theta_t`` from the adjoint cocycle, scaled so ``<phi, v^theta_t> = 1``."""
    if v is None:
        v = equivariant_density(family, driving, t, theta, observable, n_cells, tol=tol, n_max=n_max).v
    ops = FiberOperators(family, driving, n_cells, theta, observable)

    def scaled(phi):
        return phi / (phi * v.values).mean()

    n = min(n_fwd, n_max)
    prev = scaled(_pull_adjoint(ops, t, n))
    while True:
        if 2 * n > n_max:
            logger.error(f"adjoint pass at t={t}, theta={theta} did not converge by n_max={n_max}")
            raise NoConvergence(f"adjoint Cauchy tolerance {tol:.1e} unmet at n_max={n_max}",
                                time=t, theta=theta, step=n)
        phi = scaled(_pull_adjoint(ops, t, 2 * n))
        distance = float(np.abs(phi - prev).max())
        logger.debug(f"adjoint t={t} theta={theta}: horizon {2 * n}, distance {distance:.3e}")
        n *= 2
        if distance <= tol:
            break
        prev = phi
    if theta == 0:
        phi = np.real(phi)
    return GridFunction(phi)


class DecayFit(NamedTuple):
    r_hat: float
    c_hat: float
    residual: float
    degenerate: bool
    norms: Tuple[float, ...]
    note: str = NORM_PROXY_NOTE


def decay_rate(
    family: MapFamily,
    driving: DrivingSystem,
    theta: complex,
    observable: Optional[Observable],
    n: int = 24,
    n_cells: int = 1024,
    trials: int = 8,
    seed: int = 0,
    t0: int = 0,
    test_functions: Optional[Sequence[np.ndarray]] = None,
) -> DecayFit:
    """Geometric decay of ``f - <phi, f> v`` under the normalized twisted cocycle.

    The BV norm envelope over the test functions is fitted against the step
    count until it drops below ``1e-12`` of its start value.
    """
    data = equivariant_density(family, driving, t0, theta, observable, n_cells)
    phi = dual_functional(family, driving, t0, theta, observable, n_cells=n_cells, v=data.v)
    fs = test_functions if test_functions is not None else random_step_functions(n_cells, trials, seed)
    v = data.v.values
    H = np.column_stack([f - (phi.values * f).mean() * v for f in fs])
    scale = max(_bv(np.asarray(f)) for f in fs)
    envelope = [max(_bv(H[:, k]) for k in range(H.shape[1]))]
    if envelope[0] <= 1e-12 * scale:
        logger.warning("decay_rate: test functions have no component off the top direction")
        return DecayFit(float("nan"), float("nan"), float("nan"), True, tuple(envelope))

    ops = FiberOperators(family, driving, n_cells, theta, observable)
    symbols = ops.symbols(t0, n)
    scalars = ops.scalars(t0, n)
    for step in range(n):
        u = ops.forward(symbols[step], scalars[step], v)
        lam = u.mean()
        if not abs(lam) >= COLLAPSE:
            raise NormalizerCollapse("normalizer collapsed in decay fit", time=t0 + step, theta=theta, step=step)
        v = u / lam
        H = ops.forward(symbols[step], scalars[step], H) / lam
        envelope.append(max(_bv(H[:, k]) for k in range(H.shape[1])))
    envelope = np.asarray(envelope)
    below = np.nonzero(envelope <= 1e-12 * envelope[0])[0]
    stop = int(below[0]) if below.size else envelope.size
    fit = _log_linear_fit(envelope[:stop], 0.0)
    if fit is None:
        return DecayFit(0.0, float(envelope[0]), 0.0, False, tuple(envelope.tolist()))
    r_hat, c_hat, residual, _ = fit
    logger.info(f"decay rate at theta={theta}: r={r_hat:.4f}, C={c_hat:.4g}, residual={residual:.3g}")
    return DecayFit(r_hat, c_hat, residual, False, tuple(envelope.tolist()))


class CorrelationFit(NamedTuple):
    K: float
    rho: float
    residual: float
    correlations: Tuple[float, ...]


def correlation_decay(
    family: MapFamily,
    driving: DrivingSystem,
    n: int = 10,
    n_cells: int = 1024,
    trials: int = 16,
    seed: int = 0,
    t0: int = 0,
) -> CorrelationFit:
    """Fit ``|∫ L^(k)(f v0) h dm - ∫f dmu_t ∫h dmu_{t+k}| <= K rho^k sup|h| bv(f)``.

    ``residual`` is the RMS log misfit relative to the fitted log range.
    """
    matrices = ulam_cache(family, n_cells)
    ops = FiberOperators(family, driving, n_cells)
    symbols = ops.symbols(t0, n)
    v = np.real(equivariant_density(family, driving, t0, 0.0, None, n_cells).v.values)
    fs = np.column_stack(random_step_functions(n_cells, trials, seed, n_jumps=16))
    hs = np.column_stack(random_step_functions(n_cells, trials, seed + 1, n_jumps=16))
    weights = np.array([_bv(fs[:, k]) * np.abs(hs[:, k]).max() for k in range(trials)])
    mu_f = (fs * v[:, None]).mean(axis=0)
    pushed = fs * v[:, None]
    envelope = []
    for k in range(n + 1):
        corr = (pushed * hs).mean(axis=0) - mu_f * (hs * v[:, None]).mean(axis=0)
        envelope.append(float(np.max(np.abs(corr) / weights)))
        if k < n:
            matrix = matrices[int(symbols[k])]
            pushed = matrix.push(pushed)
            v = matrix.push(v)
            v = v / v.mean()
    envelope = np.asarray(envelope)
    fit = _log_linear_fit(envelope, 1e-13)
    if fit is None:
        return CorrelationFit(float(envelope[0]), 0.0, 0.0, tuple(envelope.tolist()))
    rho, K, rms, keep = fit
    span = abs(np.log(rho)) * max(int(keep[-1] - keep[0]), 1)
    residual = rms / span if span > 0 else float("inf")
    logger.info(f"decay of correlations: rho={rho:.4f}, K={K:.4g}, residual={residual:.3g}")
    return CorrelationFit(K, rho, residual, tuple(envelope.tolist()))


def equivariance_residual(
    family: MapFamily,
    driving: DrivingSystem,
    t: int,
    theta: complex,
    observable: Optional[Observable],
    n_cells: int,
    tol: float = DEFAULT_TOL,
) -> float:
    """``bv(L^theta_t v_t - lambda_t v_{t+1})`` with both fibers computed independently."""
    here = equivariant_density(family, driving, t, theta, observable, n_cells, tol=tol)
    there = equivariant_density(family, driving, t + 1, theta, observable, n_cells, tol=tol)
    ops = FiberOperators(family, driving, n_cells, theta, observable)
    symbol = int(ops.symbols(t, 1)[0])
    pushed = ops.forward(symbol, ops.scalars(t, 1)[0], here.v.values)
    return _bv(pushed - here.lam * there.v.values)


@dataclass
class RefinementReport:
    n_coarse: int
    n_fine: int
    theta: float
    lambda_coarse: float
    lambda_fine: float
    lambda_gap: float
    density_l1_gap: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def refinement_study(
    family: MapFamily,
    driving: DrivingSystem,
    raw: Observable,
    theta: float = 0.1,
    n_coarse: int = 2048,
    n_fine: int = 4096,
    n_orbit: int = 2000,
    n_burn: int = 256,
    t_end: int = 0,
) -> RefinementReport:
    """Lambda(theta) and v0 at two resolutions, the fine density averaged down."""
    if n_fine % n_coarse:
        raise ValueError("n_fine must be a multiple of n_coarse")
    window = (t_end - n_orbit - n_burn, t_end)
    lams = []
    densities = []
    for n_cells in (n_coarse, n_fine):
        centered = center_observable(raw, family, driving, window, n_cells=n_cells)
        lams.append(lyapunov_exponent(family, driving, theta, centered, n_orbit, n_burn, n_cells, t_end))
        densities.append(equivariant_density(family, driving, t_end, 0.0, None, n_cells).v)
    fine_down = coarsen(densities[1], n_fine // n_coarse)
    gap = float(np.abs(fine_down.values - densities[0].values).mean())
    report = RefinementReport(n_coarse=n_coarse, n_fine=n_fine, theta=theta,
                              lambda_coarse=lams[0], lambda_fine=lams[1],
                              lambda_gap=abs(lams[0] - lams[1]), density_l1_gap=gap)
    logger.info(f"refinement N={n_coarse} vs {n_fine}: |dLambda|={report.lambda_gap:.3e}, "
                f"L1(v0)={gap:.3e}")
    return report
