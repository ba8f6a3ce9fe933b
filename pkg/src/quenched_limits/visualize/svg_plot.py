"""Self-contained SVG plots of experiment CSV artifacts."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from ..errors import SchemaMismatch

# Configure logging
logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 20, "top": 30, "bottom": 55}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "lambda": ("theta", "lambda_value"),
    "ldp": ("epsilon", "n", "rate_hat", "c_eps"),
    "lclt": ("s", "statistic", "target"),
}


class _Canvas:
    """Maps data coordinates onto the plotting rectangle and collects SVG elements."""

    def __init__(self, xs: Sequence[float], ys: Sequence[float], title: str, xlabel: str, ylabel: str):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._range(xs)
        self.y0, self.y1 = self._range(ys)
        self.elements: List[str] = []
        self.legend: List[Tuple[str, str]] = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    @staticmethod
    def _range(values: np.ndarray) -> Tuple[float, float]:
        finite = values[np.isfinite(values)]
        if finite.size == 0:
            return 0.0, 1.0
        lo, hi = float(finite.min()), float(finite.max())
        if hi - lo < 1e-300:
            pad = max(abs(lo), 1.0) * 0.5
            return lo - pad, hi + pad
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def px(self, x: float) -> float:
        inner = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * inner

    def py(self, y: float) -> float:
        inner = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * inner

    def polyline(self, xs, ys, color: str, label: Optional[str] = None, dashed: bool = False) -> None:
        pts = [(x, y) for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y)]
        if not pts:
            return
        points = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in pts)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.elements.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8"{dash} points="{points}"/>')
        if label:
            self.legend.append((label, color))

    def hline(self, y: float, css: str) -> None:
        if self.y0 <= y <= self.y1:
            yy = self.py(y)
            self.elements.append(
                f'<line class="{css}" x1="{self.px(self.x0):.2f}" y1="{yy:.2f}" '
                f'x2="{self.px(self.x1):.2f}" y2="{yy:.2f}" stroke="#888" stroke-width="1"/>'
            )

    def segment(self, p: Tuple[float, float], q: Tuple[float, float], color: str, css: str) -> None:
        self.elements.append(
            f'<line class="{css}" x1="{self.px(p[0]):.2f}" y1="{self.py(p[1]):.2f}" '
            f'x2="{self.px(q[0]):.2f}" y2="{self.py(q[1]):.2f}" stroke="{color}" '
            f'stroke-width="1.2" stroke-dasharray="3,3"/>'
        )

    def text(self, x: float, y: float, label: str, anchor: str = "start") -> None:
        self.elements.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="12" text-anchor="{anchor}">{escape(label)}</text>'
        )

    def _axes(self) -> List[str]:
        left, right = MARGIN["left"], WIDTH - MARGIN["right"]
        top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        out = [
            f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="#000"/>',
        ]
        for i in range(5):
            xv = self.x0 + (self.x1 - self.x0) * i / 4
            yv = self.y0 + (self.y1 - self.y0) * i / 4
            out.append(f'<text x="{self.px(xv):.2f}" y="{bottom + 16}" font-size="10" '
                       f'text-anchor="middle">{xv:.3g}</text>')
            out.append(f'<text x="{left - 6}" y="{self.py(yv) + 3:.2f}" font-size="10" '
                       f'text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{(left + right) / 2:.2f}" y="{HEIGHT - 12}" font-size="13" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text transform="translate(16,{(top + bottom) / 2:.2f}) rotate(-90)" font-size="13" '
                   f'text-anchor="middle">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{(left + right) / 2:.2f}" y="{top - 10}" font-size="14" '
                   f'text-anchor="middle">{escape(self.title)}</text>')
        return out

    def _legend(self) -> List[str]:
        out = []
        x = WIDTH - MARGIN["right"] - 150
        for i, (label, color) in enumerate(self.legend):
            y = MARGIN["top"] + 16 + 16 * i
            out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text class="legend" x="{x + 26}" y="{y}" font-size="12">{escape(label)}</text>')
        return out

    def render(self) -> str:
        body = "\n".join(self._axes() + self.elements + self._legend())
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n'
        )


def _read(csv_path: Path, kind: str) -> pd.DataFrame:
    if kind not in SCHEMAS:
        raise SchemaMismatch(f"no plot for kind '{kind}' (expected one of {sorted(SCHEMAS)})")
    try:
        df = pd.read_csv(csv_path)
    except pd.errors.EmptyDataError:
        raise SchemaMismatch(f"{csv_path} is empty")
    missing = [c for c in SCHEMAS[kind] if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"{csv_path} lacks columns {missing} for a {kind} plot")
    if df.empty:
        raise SchemaMismatch(f"{csv_path} has no rows")
    return df


def _lambda_plot(df: pd.DataFrame) -> _Canvas:
    df = df.sort_values("theta")
    x, y = df["theta"].to_numpy(float), df["lambda_value"].to_numpy(float)
    canvas = _Canvas(x, np.append(y, 0.0), "Lambda(theta)", "theta (dimensionless twist)",
                     "Lambda (nats per step)")
    canvas.hline(0.0, "zero")
    canvas.polyline(x, y, COLORS[0], label="Lambda")
    i0 = int(np.argmin(np.abs(x)))
    if 0 < i0 < len(x) - 1:
        slope = (y[i0 + 1] - y[i0 - 1]) / (x[i0 + 1] - x[i0 - 1])
        span = 0.25 * (x[-1] - x[0])
        p = (x[i0] - span, y[i0] - slope * span)
        q = (x[i0] + span, y[i0] + slope * span)
        canvas.segment(p, q, COLORS[1], "tangent")
        canvas.text(canvas.px(q[0]), canvas.py(q[1]) - 6, f"tangent at 0, slope {slope:.2e}", anchor="end")
    return canvas


def _ldp_plot(df: pd.DataFrame) -> _Canvas:
    rates = df["rate_hat"].to_numpy(float)
    canvas = _Canvas(df["epsilon"], np.concatenate([rates[np.isfinite(rates)], df["c_eps"].to_numpy(float)]),
                     "Large deviation rates", "epsilon (sum per step)", "rate (nats per step)")
    for i, (n, group) in enumerate(df.groupby("n", sort=True)):
        group = group.sort_values("epsilon")
        canvas.polyline(group["epsilon"], group["rate_hat"], COLORS[(i + 1) % len(COLORS)], label=f"empirical n={n}")
    curve = df.drop_duplicates("epsilon").sort_values("epsilon")
    canvas.polyline(curve["epsilon"], curve["c_eps"], COLORS[0], label="c(epsilon)", dashed=True)
    return canvas


def _lclt_plot(df: pd.DataFrame) -> _Canvas:
    df = df.sort_values("s")
    canvas = _Canvas(df["s"], np.concatenate([df["statistic"], df["target"]]), "Local limit statistic",
                     "s (shift, sum units)", "sigma sqrt(n) mu(s + S_n in J)")
    canvas.polyline(df["s"], df["statistic"], COLORS[0], label="empirical")
    canvas.polyline(df["s"], df["target"], COLORS[1], label="gaussian", dashed=True)
    return canvas


_PLOTTERS = {"lambda": _lambda_plot, "ldp": _ldp_plot, "lclt": _lclt_plot}


def emit_plot(csv_path: Union[str, Path], kind: str, out_path: Optional[Union[str, Path]] = None) -> Path:
    """Render the CSV artifact of ``kind`` to an SVG next to it (or at ``out_path``)."""
    csv_path = Path(csv_path)
    df = _read(csv_path, kind)
    svg = _PLOTTERS[kind](df).render()
    out = Path(out_path) if out_path else csv_path.with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    logger.info(f"{kind} plot written to {out}")
    return out
