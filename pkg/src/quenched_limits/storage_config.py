"""
Output directory for quenched-limits runs.

The CLI ``--out`` flag wins, then the ``QUENCHED_LIMITS_OUTPUT`` environment
variable, then the ``[output] directory`` key of the experiment config, then
``./results``.
"""

import logging
import os
from pathlib import Path
from typing import Optional, Union

# Configure logging
logger = logging.getLogger(__name__)

ENV_OUTPUT = "QUENCHED_LIMITS_OUTPUT"
DEFAULT_DIRECTORY = "results"

# Set by select_output, once per run
_output_root: Optional[Path] = None


def select_output(cli_out: Optional[str] = None, config_directory: Optional[str] = None) -> Path:
    """Resolve the output root by precedence, create it and make it current."""
    global _output_root

    chosen = cli_out or os.getenv(ENV_OUTPUT) or config_directory or DEFAULT_DIRECTORY
    root = Path(chosen).expanduser().resolve()
    root.mkdir(parents=True, exist_ok=True)
    source = "--out" if cli_out else ENV_OUTPUT if os.getenv(ENV_OUTPUT) else "config" if config_directory else "default"
    logger.info(f"Output directory ({source}): {root}")
    _output_root = root
    return root


def output_root() -> Path:
    """Current output root; ``./results`` when no run selected one."""
    return _output_root if _output_root is not None else select_output()


def artifact_path(path: Union[str, Path]) -> Path:
    """Absolute paths pass through; relative ones land under the output root."""
    path = Path(path).expanduser()
    return path.resolve() if path.is_absolute() else (output_root() / path).resolve()
