"""Pytest configuration and shared fixtures."""
import pytest
import sys
import tempfile
from pathlib import Path

# Add src to path for imports (for local testing without installation)
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from quenched_limits import storage_config
from quenched_limits.observables import cosine, indicator
from quenched_limits.rds_model import BernoulliShift, IrrationalRotation, MapFamily, doubling, tripling


MINIMAL_CONFIG = """\
[model]
maps = doubling
seed = 7

[experiment]
kind = lambda
"""


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test outputs."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture(autouse=True)
def reset_storage():
    """Forget the output directory chosen by a previous test."""
    storage_config._output_root = None
    yield
    storage_config._output_root = None


@pytest.fixture
def doubling_family():
    """Single-map family {2x mod 1}."""
    return MapFamily.from_maps(doubling())


@pytest.fixture
def mixed_family():
    """Two-map family {2x mod 1, 3x mod 1}."""
    return MapFamily.from_maps(doubling(), tripling())


@pytest.fixture
def single_driving():
    """Driving for a one-map family: every fiber uses map 0."""
    return BernoulliShift((1.0,), seed=7)


@pytest.fixture
def fair_driving():
    """Fair two-symbol Bernoulli driving."""
    return BernoulliShift((0.5, 0.5), seed=11)


@pytest.fixture
def rotation_driving():
    """Golden-mean rotation with two equal cells."""
    return IrrationalRotation(cell_boundaries=(0.0, 0.5))


@pytest.fixture
def cos_observable():
    """g(x) = cos(2 pi x)."""
    return cosine(1)


@pytest.fixture
def lattice_observable():
    """g(x) = 1[x >= 1/2]."""
    return indicator(0.5)


@pytest.fixture
def minimal_config():
    return MINIMAL_CONFIG


@pytest.fixture
def config_file(temp_dir):
    """Write an INI config into the temp dir and return its path."""

    def write(text: str, name: str = "experiment.ini") -> Path:
        path = Path(temp_dir) / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
