"""Tests for SVG plots of CSV artifacts."""
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from quenched_limits.errors import SchemaMismatch
from quenched_limits.visualize import emit_plot

SVG = "{http://www.w3.org/2000/svg}"


def write_csv(folder, name, frame):
    path = Path(folder) / name
    frame.to_csv(path, index=False)
    return path


def parse(path):
    return ET.parse(path).getroot()


class TestLambdaPlot:
    """Lambda(theta) with the zero line and tangent."""

    def test_polyline_and_zero_line(self, temp_dir):
        """A 41-point curve renders as one 41-vertex polyline."""
        theta = np.linspace(-0.3, 0.3, 41)
        csv = write_csv(temp_dir, "lambda_1.csv", pd.DataFrame({"theta": theta, "lambda_value": 0.25 * theta ** 2}))
        out = emit_plot(csv, "lambda")
        assert out == csv.with_suffix(".svg")
        root = parse(out)
        polylines = root.findall(f"{SVG}polyline")
        assert len(polylines) == 1
        assert len(polylines[0].get("points").split()) == 41
        assert [line.get("class") for line in root.findall(f"{SVG}line")].count("zero") == 1
        assert any(line.get("class") == "tangent" for line in root.findall(f"{SVG}line"))

    def test_explicit_output_path(self, temp_dir):
        csv = write_csv(temp_dir, "lambda_2.csv", pd.DataFrame({"theta": [-0.1, 0.0, 0.1], "lambda_value": [0.0025, 0.0, 0.0025]}))
        out = emit_plot(csv, "lambda", Path(temp_dir) / "plots" / "curve.svg")
        assert out.exists()
        assert out.parent.name == "plots"


class TestOtherPlots:
    """LDP and LCLT plots."""

    def test_lclt_legends(self, temp_dir):
        s = np.linspace(-3.0, 3.0, 25)
        target = np.exp(-s ** 2 / 2.0) / np.sqrt(2.0 * np.pi)
        csv = write_csv(temp_dir, "lclt_3.csv", pd.DataFrame({"s": s, "statistic": target * 1.01, "target": target}))
        root = parse(emit_plot(csv, "lclt"))
        legends = [t.text for t in root.findall(f"{SVG}text") if t.get("class") == "legend"]
        assert legends == ["empirical", "gaussian"]

    def test_ldp_with_infinite_rates(self, temp_dir):
        table = pd.DataFrame({
            "epsilon": [0.05, 0.05, 0.1, 0.1],
            "n": [200, 400, 200, 400],
            "rate_hat": [0.004, 0.003, 0.012, np.inf],
            "c_eps": [0.0025, 0.0025, 0.01, 0.01],
        })
        root = parse(emit_plot(write_csv(temp_dir, "ldp_4.csv", table), "ldp"))
        legends = [t.text for t in root.findall(f"{SVG}text") if t.get("class") == "legend"]
        assert legends == ["empirical n=200", "empirical n=400", "c(epsilon)"]


class TestSchema:
    """Refusals."""

    def test_missing_columns(self, temp_dir):
        csv = write_csv(temp_dir, "bad.csv", pd.DataFrame({"theta": [0.0]}))
        with pytest.raises(SchemaMismatch):
            emit_plot(csv, "lambda")

    def test_no_rows(self, temp_dir):
        csv = write_csv(temp_dir, "empty.csv", pd.DataFrame({"theta": [], "lambda_value": []}))
        with pytest.raises(SchemaMismatch):
            emit_plot(csv, "lambda")

    def test_empty_file(self, temp_dir):
        csv = Path(temp_dir) / "blank.csv"
        csv.write_text("")
        with pytest.raises(SchemaMismatch):
            emit_plot(csv, "lclt")

    def test_unknown_kind(self, temp_dir):
        csv = write_csv(temp_dir, "clt.csv", pd.DataFrame({"z": [0.0]}))
        with pytest.raises(SchemaMismatch):
            emit_plot(csv, "clt")
