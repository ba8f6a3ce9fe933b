"""Bounded-variation calculus on uniform dyadic grids.

A ``GridFunction`` is the piecewise-constant function whose value on cell
``i = [i/N, (i+1)/N)`` is ``values[i]``. Its variation is the adjacent
difference sum, which is the variation of that representative.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import GridMismatch
from .rng import STREAM_TEST_FUNCTIONS, chunk_generator

# Configure logging
logger = logging.getLogger(__name__)

C_VAR = 1.0


def is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def midpoints(n_cells: int) -> np.ndarray:
    return (np.arange(n_cells) + 0.5) / n_cells


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell averages of a (possibly complex) function on [0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values)
        if values.ndim != 1:
            raise ValueError("grid values must be one-dimensional")
        if not is_power_of_two(values.size):
            raise ValueError(f"n_cells={values.size} must be a power of two and at least 2")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if not np.iscomplexobj(values):
            values = values.astype(np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_cells(self) -> int:
        return self.values.size

    @classmethod
    def constant(cls, n_cells: int, value: complex = 1.0) -> "GridFunction":
        return cls(np.full(n_cells, value))

    @classmethod
    def sample(cls, func: Callable[[np.ndarray], np.ndarray], n_cells: int) -> "GridFunction":
        """Sample ``func`` at the cell midpoints."""
        return cls(np.asarray(func(midpoints(n_cells))))

    def integral(self) -> complex:
        return self.values.mean()

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return combine(self, other, "add")

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            return combine(self, other, "multiply")
        return GridFunction(self.values * other)

    __rmul__ = __mul__


@dataclass(frozen=True)
class BvNorms:
    variation: float
    l1: float
    bv: float
    sup: float


def _variation(values: np.ndarray) -> float:
    return float(np.abs(np.diff(values)).sum())


def _bv(values: np.ndarray) -> float:
    return _variation(values) + float(np.abs(values).mean())


def variation(f: GridFunction) -> float:
    """Sum of |f[i+1] - f[i]|; [0, 1] is an interval, so no wrap-around term."""
    return _variation(f.values)


def norms(f: GridFunction) -> BvNorms:
    var = _variation(f.values)
    l1 = float(np.abs(f.values).mean())
    sup = float(np.abs(f.values).max())
    return BvNorms(variation=var, l1=l1, bv=var + l1, sup=sup)


def combine(f: GridFunction, g: GridFunction, op: str) -> GridFunction:
    if f.n_cells != g.n_cells:
        raise GridMismatch(f"cannot combine grids of {f.n_cells} and {g.n_cells} cells")
    if op == "add":
        return GridFunction(f.values + g.values)
    if op == "multiply":
        return GridFunction(f.values * g.values)
    raise ValueError(f"unknown combine op '{op}' (expected 'add' or 'multiply')")


def exp_twist(g: GridFunction, theta: complex) -> GridFunction:
    """Cellwise ``exp(theta * g)``; exactly the constant 1 when theta == 0."""
    if theta == 0:
        return GridFunction.constant(g.n_cells, 1.0)
    return GridFunction(np.exp(theta * g.values))


def coarsen(f: GridFunction, factor: int = 2) -> GridFunction:
    """Average groups of ``factor`` adjacent cells."""
    return GridFunction(f.values.reshape(-1, factor).mean(axis=1))


def refine(f: GridFunction, factor: int = 2) -> GridFunction:
    """Duplicate every cell ``factor`` times; norms are unchanged."""
    return GridFunction(np.repeat(f.values, factor))


def random_step_functions(
    n_cells: int,
    count: int,
    seed: int,
    n_jumps: Optional[int] = None,
    mean_zero: bool = False,
) -> List[np.ndarray]:
    """Seeded real step functions.

    With ``n_jumps`` the functions have that many jumps at random cell
    boundaries; otherwise every cell gets an independent value.
    """
    rng = chunk_generator(seed, STREAM_TEST_FUNCTIONS, n_cells)
    out = []
    for _ in range(count):
        if n_jumps is None:
            values = rng.uniform(-1.0, 1.0, n_cells)
        else:
            cuts = np.sort(rng.choice(np.arange(1, n_cells), size=min(n_jumps, n_cells - 1), replace=False))
            levels = rng.uniform(-1.0, 1.0, cuts.size + 1)
            values = np.repeat(levels, np.diff(np.concatenate(([0], cuts, [n_cells]))))
        if mean_zero:
            values = values - values.mean()
        out.append(values)
    return out


@dataclass
class AxiomReport:
    n_cells: int
    pairs: int
    checked: Dict[str, int] = field(default_factory=dict)
    violations: List[Dict[str, Any]] = field(default_factory=list)
    skipped: List[Dict[str, Any]] = field(default_factory=list)
    excluded: Dict[str, str] = field(default_factory=lambda: {
        "V4": "compactness of BV balls in L1: not a finite inequality",
        "V6": "density of BV in L1: not a finite inequality",
    })

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_cells": self.n_cells,
            "pairs": self.pairs,
            "checked": dict(self.checked),
            "violations": list(self.violations),
            "skipped": list(self.skipped),
            "excluded": dict(self.excluded),
        }


def _record(report: AxiomReport, axiom: str, holds: bool, index: int, **witness) -> None:
    report.checked[axiom] = report.checked.get(axiom, 0) + 1
    if not holds:
        report.violations.append({"axiom": axiom, "pair": index, **witness})


def check_v7(report: AxiomReport, f: np.ndarray, index: int, slack: float = 1e-9) -> None:
    """var(1/f) <= var(f) / (essinf f)^2, only for f with essinf f > 0."""
    essinf = float(np.min(f))
    if essinf <= 0:
        report.skipped.append({"axiom": "V7", "pair": index, "reason": "essinf=0"})
        return
    lhs = _variation(1.0 / f)
    rhs = _variation(f) / essinf ** 2
    _record(report, "V7", lhs <= rhs * (1 + slack) + slack, index, lhs=lhs, rhs=rhs)


def check_variation_axioms(
    count: int = 100,
    n_cells: int = 256,
    seed: int = 0,
    n_jumps: int = 16,
    scalars: Sequence[float] = (-3.0, 0.5, 2.5),
) -> AxiomReport:
    """Check (V1)-(V3), (V5), (V7)-(V9) on seeded pairs of step functions."""
    fs = random_step_functions(n_cells, count, seed, n_jumps=n_jumps)
    gs = random_step_functions(n_cells, count, seed + 1, n_jumps=n_jumps)
    report = AxiomReport(n_cells=n_cells, pairs=count)
    slack = 1e-9

    const = np.ones(n_cells)
    _record(report, "V5", _variation(const) == 0.0, -1, var=_variation(const))

    for i, (f, g) in enumerate(zip(fs, gs)):
        vf, vg = _variation(f), _variation(g)
        sup_f, sup_g = float(np.abs(f).max()), float(np.abs(g).max())

        for t in scalars:
            lhs = _variation(t * f)
            _record(report, "V1", abs(lhs - abs(t) * vf) <= slack * (1 + abs(t) * vf), i, t=t, lhs=lhs)

        lhs = _variation(f + g)
        _record(report, "V2", lhs <= (vf + vg) * (1 + slack), i, lhs=lhs, rhs=vf + vg)

        rhs = C_VAR * (vf + float(np.abs(f).mean()))
        _record(report, "V3", sup_f <= rhs * (1 + slack), i, sup=sup_f, bv=rhs)

        check_v7(report, np.abs(f), i)

        lhs = _variation(f * g)
        rhs = sup_f * vg + sup_g * vf
        _record(report, "V8", lhs <= rhs * (1 + slack) + slack, i, lhs=lhs, rhs=rhs)

        lo, hi = float(f.min()), float(f.max())
        for name, h, dh_sup in (
            ("exp", np.exp, np.exp(hi)),
            ("square", np.square, 2.0 * max(abs(lo), abs(hi))),
        ):
            lhs = _variation(h(f))
            rhs = dh_sup * vf
            _record(report, "V9", lhs <= rhs * (1 + slack) + slack, i, h=name, lhs=lhs, rhs=rhs)

    if report.violations:
        logger.warning(f"variation axioms: {len(report.violations)} violations at N={n_cells}")
    else:
        logger.info(f"variation axioms: {sum(report.checked.values())} checks passed at N={n_cells}")
    return report
