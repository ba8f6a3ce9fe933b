"""Tests for the artifact writer."""
import json
import os

import numpy as np
import pandas as pd
import yaml

from quenched_limits.save_tool import artifact_name, save_output, save_table, to_builtin


class TestToBuiltin:
    """Conversion of numpy and complex values."""

    def test_numpy_values(self):
        data = to_builtin({"a": np.float64(1.5), "b": np.int64(3), "c": np.array([1, 2]), "d": np.bool_(True)})
        assert data == {"a": 1.5, "b": 3, "c": [1, 2], "d": True}
        assert type(data["b"]) is int

    def test_special_floats(self):
        assert to_builtin(float("nan")) is None
        assert to_builtin(float("inf")) == "inf"
        assert to_builtin(-np.inf) == "-inf"

    def test_complex(self):
        assert to_builtin(1 + 2j) == {"real": 1.0, "imag": 2.0}
        assert to_builtin((np.complex128(0.5j),)) == [{"real": 0.0, "imag": 0.5}]


class TestSaveOutput:
    """Summary files."""

    def test_save_json(self, temp_dir):
        """JSON round trip with sorted keys."""
        data = {"status": "success", "seed": 42, "checks": [{"name": "clt_ks", "passed": True}]}
        folder = os.path.join(temp_dir, "out")
        saved = save_output(data, "clt_42", folder=folder)
        assert list(saved) == ["json"]
        with open(saved["json"], "r", encoding="utf-8") as f:
            assert json.load(f) == data

    def test_save_multiple_formats(self, temp_dir):
        data = {"status": "success", "value": np.float64(0.25)}
        saved = save_output(data, "multi", folder=temp_dir, formats=["json", "txt", "yaml"])
        assert set(saved) == {"json", "txt", "yaml"}
        for path in saved.values():
            assert os.path.exists(path)
        with open(saved["yaml"], "r", encoding="utf-8") as f:
            assert yaml.safe_load(f) == {"status": "success", "value": 0.25}
        with open(saved["txt"], "r", encoding="utf-8") as f:
            assert "status: success" in f.read()

    def test_same_bytes_on_rewrite(self, temp_dir):
        data = {"b": 1.0 / 3.0, "a": [1, 2]}
        first = open(save_output(data, "again", folder=temp_dir)["json"], "rb").read()
        second = open(save_output(data, "again", folder=temp_dir)["json"], "rb").read()
        assert first == second


class TestSaveTable:
    """CSV tables."""

    def test_full_precision(self, temp_dir):
        table = pd.DataFrame({"theta": [0.1, 1.0 / 3.0], "lambda_value": [2.5e-3, np.pi]})
        path = save_table(table, "lambda_7", folder=temp_dir)
        assert path.name == "lambda_7.csv"
        loaded = pd.read_csv(path, float_precision="round_trip")
        assert loaded["lambda_value"].tolist() == [2.5e-3, np.pi]
        assert loaded["theta"].tolist() == [0.1, 1.0 / 3.0]

    def test_relative_folder_uses_output_directory(self, temp_dir):
        from quenched_limits.storage_config import select_output

        root = select_output(temp_dir)
        path = save_table(pd.DataFrame({"x": [1]}), "t", folder="nested")
        assert path.parent == root / "nested"


class TestArtifactName:
    def test_kind_and_seed(self):
        assert artifact_name("lclt", 12345) == "lclt_12345"
