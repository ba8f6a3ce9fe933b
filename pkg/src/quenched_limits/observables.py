"""Fiber observables g(omega, x) = g_{symbol(omega)}(x) - offset(omega).

The raw part depends only on the map symbol of the fiber; centering adds a
per-fiber-time offset equal to the mu_omega mean of the raw part.
"""
import dataclasses
import logging
from dataclasses import dataclass
from threading import Lock
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .bv_calculus import midpoints
from .errors import CenteringError

# Configure logging
logger = logging.getLogger(__name__)

KINDS = ("cosine", "indicator", "table", "zero")


@dataclass(frozen=True, eq=False)
class Observable:
    """Per-symbol observable with optional fiberwise centering.

    Kinds:
        cosine: ``sum(amp * cos(2 pi k x))`` over ``harmonics`` pairs (k, amp).
        indicator: ``scale * 1[x >= threshold] + offset``.
        table: per-symbol cell values ``tables[symbol]``.
        zero: identically 0.
    """

    kind: str = "cosine"
    harmonics: Tuple[Tuple[int, float], ...] = ((1, 1.0),)
    threshold: float = 0.5
    scale: float = 1.0
    offset: float = 0.0
    tables: Tuple[np.ndarray, ...] = ()
    centering: Optional["FiberCentering"] = None
    eta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observable kind '{self.kind}' (expected one of {KINDS})")
        if self.kind == "table":
            if not self.tables:
                raise ValueError("a table observable needs one table per symbol")
            tables = tuple(np.asarray(t, dtype=np.float64) for t in self.tables)
            for t in tables:
                t.setflags(write=False)
            object.__setattr__(self, "tables", tables)
        if self.kind == "indicator" and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("indicator threshold must lie in [0, 1]")
        object.__setattr__(self, "harmonics", tuple((int(k), float(a)) for k, a in self.harmonics))

    @property
    def centered(self) -> bool:
        return self.centering is not None

    @property
    def raw(self) -> "Observable":
        return dataclasses.replace(self, centering=None)

    @property
    def M(self) -> float:
        """Sup bound of the raw part over symbols and points."""
        if self.kind == "cosine":
            return float(sum(abs(a) for _, a in self.harmonics))
        if self.kind == "indicator":
            return float(max(abs(self.offset), abs(self.scale + self.offset)))
        if self.kind == "table":
            return float(max(np.abs(t).max() for t in self.tables))
        return 0.0

    def evaluate(self, symbol: int, x) -> np.ndarray:
        """Raw value ``g_symbol(x)``."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "cosine":
            out = np.zeros_like(x)
            for k, amp in self.harmonics:
                out = out + amp * np.cos(2.0 * np.pi * k * x)
            return out
        if self.kind == "indicator":
            return self.scale * (x >= self.threshold) + self.offset
        if self.kind == "table":
            table = self.tables[int(symbol)]
            idx = np.minimum((x * table.size).astype(np.int64), table.size - 1)
            return table[idx]
        return np.zeros_like(x)

    def grid_values(self, symbol: int, n_cells: int) -> np.ndarray:
        """Raw values on the cells (midpoint samples; tables at their own grid)."""
        if self.kind == "table" and self.tables[int(symbol)].size == n_cells:
            return np.array(self.tables[int(symbol)])
        return self.evaluate(symbol, midpoints(n_cells))

    def offsets(self, start: int, count: int) -> np.ndarray:
        """Centering offsets for fiber times ``start .. start+count-1``."""
        if self.centering is None:
            return np.zeros(count)
        return self.centering.offsets(start, count)

    def sup_bound(self, start: int, count: int) -> float:
        return self.M + float(np.abs(self.offsets(start, count)).max(initial=0.0))

    def with_centering(self, centering: Optional["FiberCentering"]) -> "Observable":
        return dataclasses.replace(self, centering=centering)

    def with_eta(self, eta: Optional[Sequence[float]]) -> "Observable":
        return dataclasses.replace(self, eta=None if eta is None else tuple(float(e) for e in eta))


def cosine(k: int = 1, amplitude: float = 1.0) -> Observable:
    return Observable(kind="cosine", harmonics=((k, amplitude),))


def indicator(threshold: float = 0.5, scale: float = 1.0, offset: float = 0.0) -> Observable:
    return Observable(kind="indicator", threshold=threshold, scale=scale, offset=offset)


class FiberCentering:
    """Offsets ``∫ g_t v0_t dm`` computed lazily in blocks of fiber times.

    Each block recomputes v0 at its first time by a pull-back pass and then
    pushes it forward, so an offset depends only on (model, grid, t), never
    on the order in which blocks are requested.
    """

    def __init__(self, raw: Observable, family, driving, n_cells: int,
                 block: int = 1024, tol: float = 1e-10, n_max: int = 1 << 14):
        self.raw = raw.raw
        self.family = family
        self.driving = driving
        self.n_cells = n_cells
        self.block = block
        self.tol = tol
        self.n_max = n_max
        self.max_residual = 0.0
        self._blocks: Dict[int, np.ndarray] = {}
        self._lock = Lock()

    def _compute_block(self, b: int) -> np.ndarray:
        from .spectral import equivariant_density
        from .transfer_op import ulam_cache
        from .rds_model import symbols_between

        start = b * self.block
        data = equivariant_density(self.family, self.driving, start, 0.0, None,
                                   self.n_cells, tol=self.tol, n_max=self.n_max)
        matrices = ulam_cache(self.family, self.n_cells)
        symbols = symbols_between(self.family, self.driving, start, self.block)
        grids = {int(s): self.raw.grid_values(int(s), self.n_cells) for s in np.unique(symbols)}
        v = np.real(data.v.values)
        out = np.empty(self.block)
        for k, s in enumerate(symbols):
            g = grids[int(s)]
            out[k] = float((g * v).mean())
            residual = abs(float(((g - out[k]) * v).mean()))
            self.max_residual = max(self.max_residual, residual)
            v = matrices[int(s)].push(v)
            v = v / v.mean()
        logger.debug(f"centering block {b} (times {start}..{start + self.block - 1}) computed")
        return out

    def offsets(self, start: int, count: int) -> np.ndarray:
        out = np.empty(count)
        if count <= 0:
            return out
        first, last = start // self.block, (start + count - 1) // self.block
        with self._lock:
            for b in range(first, last + 1):
                if b not in self._blocks:
                    self._blocks[b] = self._compute_block(b)
                lo = max(start, b * self.block)
                hi = min(start + count, (b + 1) * self.block)
                out[lo - start:hi - start] = self._blocks[b][lo - b * self.block:hi - b * self.block]
        return out

    def check(self, tol: float = 1e-10) -> None:
        if self.max_residual > tol:
            raise CenteringError(
                f"post-centering integral {self.max_residual:.3e} exceeds {tol:.1e}"
            )
