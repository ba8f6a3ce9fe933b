"""SVG rendering of experiment artifacts."""

from .svg_plot import SCHEMAS, emit_plot

__all__ = ["SCHEMAS", "emit_plot"]
