"""Random compositions of piecewise-linear expanding maps of [0, 1).

Maps are lists of affine branches on half-open intervals; the driving
system assigns a map symbol to every integer time, past and future.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NotExpanding, SymbolOutOfRange
from .rng import STREAM_DRIVING, uniforms

# Configure logging
logger = logging.getLogger(__name__)

_TOL = 1e-12
_ONE_MINUS = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class Branch:
    """One affine branch ``x -> slope * x + intercept`` on ``[low, high)``."""

    low: float
    high: float
    slope: float
    intercept: float

    def image(self) -> Tuple[float, float]:
        ends = (self.slope * self.low + self.intercept, self.slope * self.high + self.intercept)
        return min(ends), max(ends)


@dataclass(frozen=True, eq=False)
class PiecewiseLinearMap:
    """Piecewise-linear interval map; branches must partition [0, 1)."""

    branches: Tuple[Branch, ...]
    name: str = "affine"

    def __post_init__(self):
        branches = tuple(sorted(self.branches, key=lambda b: b.low))
        if not branches:
            raise ValueError("a map needs at least one branch")
        if abs(branches[0].low) > _TOL or abs(branches[-1].high - 1.0) > _TOL:
            raise ValueError(f"branches of '{self.name}' must cover [0, 1)")
        for left, right in zip(branches, branches[1:]):
            if abs(left.high - right.low) > _TOL:
                raise ValueError(
                    f"branch domains of '{self.name}' must partition [0, 1): "
                    f"gap or overlap between {left.high} and {right.low}"
                )
        for branch in branches:
            if branch.high <= branch.low:
                raise ValueError(f"empty branch domain [{branch.low}, {branch.high})")
            if branch.slope == 0:
                raise ValueError("branch slopes must be non-zero")
            lo, hi = branch.image()
            if lo < -_TOL or hi > 1.0 + _TOL:
                raise ValueError(
                    f"branch image [{lo}, {hi}) of '{self.name}' leaves [0, 1]"
                )
        object.__setattr__(self, "branches", branches)
        object.__setattr__(self, "_lows", np.array([b.low for b in branches]))
        object.__setattr__(self, "_slopes", np.array([b.slope for b in branches]))
        object.__setattr__(self, "_intercepts", np.array([b.intercept for b in branches]))

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def min_slope(self) -> float:
        return float(np.min(np.abs(self._slopes)))

    @property
    def max_slope(self) -> float:
        return float(np.max(np.abs(self._slopes)))

    @property
    def full_branch(self) -> bool:
        return all(abs(lo) <= _TOL and abs(hi - 1.0) <= _TOL
                   for lo, hi in (b.image() for b in self.branches))

    def branch_index(self, x):
        idx = np.searchsorted(self._lows, x, side="right") - 1
        return np.clip(idx, 0, self.n_branches - 1)

    def __call__(self, x):
        return apply_map(self, x)

    def step(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Images of an array of points together with ``|slope|`` at each point."""
        idx = self.branch_index(x)
        slopes = self._slopes[idx]
        y = np.clip(slopes * x + self._intercepts[idx], 0.0, _ONE_MINUS)
        return y, np.abs(slopes)


def times(k: int) -> PiecewiseLinearMap:
    """Full-branch map ``x -> k x mod 1`` written as k affine branches."""
    if k < 2:
        raise ValueError("times(k) needs k >= 2")
    branches = tuple(Branch(i / k, (i + 1) / k, float(k), float(-i)) for i in range(k))
    return PiecewiseLinearMap(branches, name={2: "doubling", 3: "tripling"}.get(k, f"times{k}"))


def doubling() -> PiecewiseLinearMap:
    return times(2)


def tripling() -> PiecewiseLinearMap:
    return times(3)


def affine(quadruples: Sequence[Tuple[float, float, float, float]], name: str = "affine") -> PiecewiseLinearMap:
    """Map from ``(low, high, slope, intercept)`` quadruples."""
    return PiecewiseLinearMap(tuple(Branch(*map(float, q)) for q in quadruples), name=name)


@dataclass(frozen=True, eq=False)
class MapFamily:
    """Finite family of maps with uniform expansion constants."""

    maps: Tuple[PiecewiseLinearMap, ...]
    delta: float = field(init=False)
    b_max: int = field(init=False)
    iterate_N: int = field(init=False)

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("a map family must contain at least one map")
        delta = min(m.min_slope for m in maps)
        if delta <= 1.0:
            raise NotExpanding(f"uniform expansion delta={delta} must exceed 1")
        n = 1
        while delta ** n <= 2.0:
            n += 1
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "delta", float(delta))
        object.__setattr__(self, "b_max", max(m.n_branches for m in maps))
        object.__setattr__(self, "iterate_N", n)

    @classmethod
    def from_maps(cls, *maps: PiecewiseLinearMap) -> "MapFamily":
        return cls(tuple(maps))

    def __len__(self) -> int:
        return len(self.maps)


@dataclass(frozen=True)
class BernoulliShift:
    """Two-sided i.i.d. symbol sequence; symbol(t) is a pure function of (seed, t)."""

    probabilities: Tuple[float, ...]
    seed: int

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probabilities)
        if not probs or any(p <= 0 for p in probs):
            raise ValueError("Bernoulli probabilities must be positive")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"Bernoulli probabilities sum to {sum(probs)}, not 1")
        object.__setattr__(self, "probabilities", probs)
        cumulative = np.cumsum(probs)
        cumulative[-1] = 1.0
        object.__setattr__(self, "_cumulative", cumulative)

    @property
    def n_symbols(self) -> int:
        return len(self.probabilities)

    def symbols(self, start: int, count: int) -> np.ndarray:
        u = uniforms(self.seed, STREAM_DRIVING, start, count)
        idx = np.searchsorted(self._cumulative, u, side="right")
        return np.minimum(idx, self.n_symbols - 1).astype(np.int64)


@dataclass(frozen=True)
class IrrationalRotation:
    """Symbol of t is the cell containing frac(start_point + t * alpha)."""

    alpha: float = 0.5 * (5 ** 0.5 - 1)
    cell_boundaries: Tuple[float, ...] = (0.0, 0.5)
    start_point: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("rotation number alpha must lie in (0, 1)")
        bounds = tuple(float(b) for b in self.cell_boundaries)
        if not bounds or bounds[0] != 0.0:
            raise ValueError("cell boundaries must start at 0")
        if any(b >= 1.0 for b in bounds) or list(bounds) != sorted(set(bounds)):
            raise ValueError("cell boundaries must be strictly increasing in [0, 1)")
        object.__setattr__(self, "cell_boundaries", bounds)

    @property
    def n_symbols(self) -> int:
        return len(self.cell_boundaries)

    def points(self, start: int, count: int) -> np.ndarray:
        t = np.arange(start, start + count, dtype=np.float64)
        return np.mod(self.start_point + t * self.alpha, 1.0)

    def symbols(self, start: int, count: int) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.cell_boundaries), self.points(start, count), side="right") - 1
        return idx.astype(np.int64)


DrivingSystem = Union[BernoulliShift, IrrationalRotation]


@dataclass(frozen=True)
class OrbitWindow:
    """Materialized symbols for times ``t0 - past .. t0 + future - 1``."""

    t0: int
    past: int
    future: int
    symbols: Tuple[int, ...]

    @property
    def start(self) -> int:
        return self.t0 - self.past

    @property
    def stop(self) -> int:
        return self.t0 + self.future


def orbit_window(driving: DrivingSystem, t0: int, past: int, future: int) -> OrbitWindow:
    if past < 0 or future < 0:
        raise ValueError("past and future must be non-negative")
    symbols = driving.symbols(t0 - past, past + future)
    return OrbitWindow(t0, past, future, tuple(int(s) for s in symbols))


def symbol_at(driving: DrivingSystem, t: int) -> int:
    """Symbol of the fiber at time ``t``."""
    return int(driving.symbols(int(t), 1)[0])


def symbols_between(family: MapFamily, driving: DrivingSystem, start: int, count: int) -> np.ndarray:
    """Symbols for ``start .. start+count-1`` checked against the family size."""
    symbols = driving.symbols(start, count)
    if count and (symbols.max() >= len(family) or symbols.min() < 0):
        bad = int(symbols[(symbols >= len(family)) | (symbols < 0)][0])
        raise SymbolOutOfRange(f"driving emitted symbol {bad} but the family has {len(family)} maps")
    return symbols


def map_at(family: MapFamily, driving: DrivingSystem, t: int) -> PiecewiseLinearMap:
    return family.maps[int(symbols_between(family, driving, int(t), 1)[0])]


def apply_map(pl_map: PiecewiseLinearMap, x):
    """Apply the branch containing x; scalars in, scalar out."""
    arr = np.asarray(x, dtype=np.float64)
    idx = pl_map.branch_index(arr)
    y = pl_map._slopes[idx] * arr + pl_map._intercepts[idx]
    y = np.clip(y, 0.0, _ONE_MINUS)
    if np.ndim(x) == 0:
        return float(y)
    return y


def trajectory(family: MapFamily, driving: DrivingSystem, t0: int, n: int, x: float) -> List[float]:
    """Points ``x, T_{t0} x, T_{t0+1} T_{t0} x, ...`` (n + 1 of them)."""
    if n < 0:
        raise ValueError("trajectory length must be non-negative")
    symbols = symbols_between(family, driving, t0, n)
    points = [float(x)]
    for s in symbols:
        points.append(apply_map(family.maps[int(s)], points[-1]))
    return points


def inverse_branches(pl_map: PiecewiseLinearMap, y: float) -> List[Tuple[float, float]]:
    """Preimages of y, one per branch whose image contains y, with weight 1/|slope|."""
    out = []
    for branch in pl_map.branches:
        x = (y - branch.intercept) / branch.slope
        if branch.low - _TOL <= x < branch.high - _TOL:
            x = min(max(x, branch.low), float(np.nextafter(branch.high, branch.low)))
            out.append((x, 1.0 / abs(branch.slope)))
    return out


@dataclass(frozen=True)
class AffinePiece:
    """Regularity interval of a composition and the affine law on it."""

    low: float
    high: float
    slope: float
    intercept: float

    @property
    def length(self) -> float:
        return self.high - self.low

    @property
    def image_length(self) -> float:
        return abs(self.slope) * self.length


def regularity_partition(maps: Sequence[PiecewiseLinearMap]) -> List[AffinePiece]:
    """Regularity partition of ``maps[-1] o ... o maps[0]``."""
    pieces = [AffinePiece(0.0, 1.0, 1.0, 0.0)]
    for pl_map in maps:
        refined = []
        for piece in pieces:
            y0 = piece.slope * piece.low + piece.intercept
            y1 = piece.slope * piece.high + piece.intercept
            y_lo, y_hi = min(y0, y1), max(y0, y1)
            for branch in pl_map.branches:
                lo, hi = max(y_lo, branch.low), min(y_hi, branch.high)
                if hi - lo <= _TOL:
                    continue
                x_a = (lo - piece.intercept) / piece.slope
                x_b = (hi - piece.intercept) / piece.slope
                refined.append(AffinePiece(
                    min(x_a, x_b), max(x_a, x_b),
                    branch.slope * piece.slope,
                    branch.slope * piece.intercept + branch.intercept,
                ))
        pieces = sorted(refined, key=lambda p: p.low)
    return pieces


def _merge(intervals: List[Tuple[float, float]]) -> Tuple[Tuple[float, float], ...]:
    merged: List[List[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + _TOL:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((round(lo, 12), round(hi, 12)) for lo, hi in merged)


def _image_of(pl_map: PiecewiseLinearMap, intervals) -> Tuple[Tuple[float, float], ...]:
    images = []
    for u, v in intervals:
        for branch in pl_map.branches:
            lo, hi = max(u, branch.low), min(v, branch.high)
            if hi - lo <= _TOL:
                continue
            a, b = branch.slope * lo + branch.intercept, branch.slope * hi + branch.intercept
            images.append((max(min(a, b), 0.0), min(max(a, b), 1.0)))
    return _merge(images)


def _covering_time(family: MapFamily, interval: Tuple[float, float], k_max: int,
                   max_states: int) -> Optional[int]:
    full = ((0.0, 1.0),)
    states = {_merge([interval])}
    for k in range(1, k_max + 1):
        states = {_image_of(m, s) for s in states for m in family.maps}
        if all(s == full for s in states):
            return k
        if len(states) > max_states:
            logger.warning(f"covering propagation exceeded {max_states} distinct images at k={k}")
            return None
    return None


@dataclass
class AdmissibilityReport:
    delta: float
    b_max: int
    iterate_N: int
    min_regularity_length: float
    min_image_length: float
    covering_resolution: float
    covering_k: Optional[int]
    covering_ok: bool
    admissible_evidence: bool
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta": self.delta,
            "b_max": self.b_max,
            "iterate_N": self.iterate_N,
            "min_regularity_length": self.min_regularity_length,
            "min_image_length": self.min_image_length,
            "covering_resolution": self.covering_resolution,
            "covering_k": self.covering_k,
            "covering_ok": self.covering_ok,
            "admissible_evidence": self.admissible_evidence,
            "notes": list(self.notes),
        }


def validate_family(
    family: MapFamily,
    symbols: Optional[Sequence[int]] = None,
    resolution: int = 64,
    k_max: int = 32,
    max_states: int = 4096,
) -> AdmissibilityReport:
    """Evidence for the random Lasota-Yorke and uniform covering hypotheses.

    Args:
        family: the map family.
        symbols: horizon of driving symbols; N-fold compositions are taken
            along every window of it. When omitted every word of length N
            over the family is used.
        resolution: the covering check starts from the dyadic intervals of
            length ``1 / resolution``.
        k_max: longest composition tried by the covering check.
    """
    delta = min(m.min_slope for m in family.maps)
    if delta <= 1.0:
        raise NotExpanding(f"uniform expansion delta={delta} must exceed 1")
    n = family.iterate_N

    if symbols is None:
        words = list(itertools.product(range(len(family)), repeat=n))
    else:
        symbols = list(symbols)
        if any(s < 0 or s >= len(family) for s in symbols):
            raise SymbolOutOfRange("horizon contains a symbol with no map")
        words = [tuple(symbols[i:i + n]) for i in range(len(symbols) - n + 1)]
        if not words:
            raise ValueError(f"horizon shorter than the iterate N={n}")

    min_length = np.inf
    min_image = np.inf
    for word in sorted(set(words)):
        pieces = regularity_partition([family.maps[s] for s in word])
        min_length = min(min_length, min(p.length for p in pieces))
        min_image = min(min_image, min(p.image_length for p in pieces))

    covering_k = 0
    covering_ok = True
    for i in range(resolution):
        k = _covering_time(family, (i / resolution, (i + 1) / resolution), k_max, max_states)
        if k is None:
            covering_ok = False
            covering_k = None
            break
        covering_k = max(covering_k, k)

    notes = [
        f"covering checked only on the dyadic mesh of size 1/{resolution}, not on every subinterval",
        "maps are piecewise linear, so the distortion constant D is 0",
    ]
    admissible = bool(delta > 1.0 and min_length > 0 and covering_ok)
    logger.info(
        f"validated family: delta={delta}, N={n}, min_interval={min_length:.3g}, "
        f"covering_k={covering_k}, admissible_evidence={admissible}"
    )
    return AdmissibilityReport(
        delta=float(delta),
        b_max=family.b_max,
        iterate_N=n,
        min_regularity_length=float(min_length),
        min_image_length=float(min_image),
        covering_resolution=1.0 / resolution,
        covering_k=covering_k,
        covering_ok=covering_ok,
        admissible_evidence=admissible,
        notes=notes,
    )
