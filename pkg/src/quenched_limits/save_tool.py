"""
Artifact writer for quenched-limits.

Tables go to CSV through pandas, summaries to JSON (and optionally YAML or
TXT). File names are deterministic, ``<kind>_<seed>.<ext>``, so re-running a
plan overwrites the same files with the same bytes.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

from .storage_config import artifact_path

# Configure logging
logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays and complex numbers into JSON-safe builtins."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (complex, np.complexfloating)):
        return {"real": float(value.real), "imag": float(value.imag)}
    return value


def artifact_name(kind: str, seed: int) -> str:
    return f"{kind}_{seed}"


def save_table(table: pd.DataFrame, filename: str, folder: str = ".") -> Path:
    """Write a table as CSV with full float precision."""
    folder_path = artifact_path(folder)
    folder_path.mkdir(parents=True, exist_ok=True)
    path = folder_path / f"{filename}.csv"
    table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Table written to {path}")
    return path


def save_output(
    output: Dict[str, Any],
    filename: str,
    folder: str = ".",
    formats: Optional[List[str]] = None,
) -> Dict[str, str]:
    """
    Save a summary dictionary to JSON, YAML or TXT.

    The folder path is resolved relative to the configured output directory.
    If an absolute path is provided, it's used as-is.

    Returns a mapping of format -> saved file path.
    """
    folder_path = artifact_path(folder)
    folder_path.mkdir(parents=True, exist_ok=True)

    if formats is None:
        formats = ["json"]

    data = to_builtin(output)
    saved_files = {}

    if "json" in formats:
        path = folder_path / f"{filename}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=4, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        saved_files["json"] = str(path)

    if "txt" in formats:
        path = folder_path / f"{filename}.txt"
        with open(path, "w", encoding="utf-8") as f:
            for k, v in data.items():
                f.write(f"{k}: {v}\n")
        saved_files["txt"] = str(path)

    if "yaml" in formats:
        path = folder_path / f"{filename}.yaml"
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, allow_unicode=True, sort_keys=True)
        saved_files["yaml"] = str(path)

    for fmt, path in saved_files.items():
        logger.debug(f"Saved {fmt} summary to {path}")
    return saved_files
