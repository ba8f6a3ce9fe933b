"""Tests for output directory resolution."""
from pathlib import Path

from quenched_limits import storage_config
from quenched_limits.storage_config import (
    ENV_OUTPUT,
    artifact_path,
    output_root,
    select_output,
)


class TestSelectOutput:
    """CLI flag, then environment, then config, then ./results."""

    def test_cli_wins(self, temp_dir, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT, str(Path(temp_dir) / "env"))
        root = select_output(str(Path(temp_dir) / "cli"), str(Path(temp_dir) / "config"))
        assert root == (Path(temp_dir) / "cli").resolve()

    def test_environment_before_config(self, temp_dir, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT, str(Path(temp_dir) / "env"))
        root = select_output(None, str(Path(temp_dir) / "config"))
        assert root == (Path(temp_dir) / "env").resolve()
        assert not (Path(temp_dir) / "config").exists()

    def test_config_then_default(self, temp_dir, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT, raising=False)
        monkeypatch.chdir(temp_dir)
        assert select_output(None, "from_config") == Path(temp_dir).resolve() / "from_config"
        assert select_output(None, None) == Path(temp_dir).resolve() / "results"

    def test_creates_and_remembers(self, temp_dir):
        root = select_output(str(Path(temp_dir) / "a" / "b"))
        assert root.is_dir()
        assert output_root() == root

    def test_default_under_cwd(self, temp_dir, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT, raising=False)
        monkeypatch.chdir(temp_dir)
        assert storage_config._output_root is None
        root = output_root()
        assert root == Path(temp_dir).resolve() / "results"
        assert root.is_dir()


class TestArtifactPath:
    """Relative paths land in the output directory."""

    def test_relative(self, temp_dir):
        root = select_output(temp_dir)
        assert artifact_path("x/y.csv") == root / "x" / "y.csv"

    def test_absolute_kept(self, temp_dir):
        select_output(str(Path(temp_dir) / "out"))
        target = Path(temp_dir).resolve() / "elsewhere.csv"
        assert artifact_path(str(target)) == target
