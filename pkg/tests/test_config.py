"""Tests for experiment configuration parsing."""
import pytest

from quenched_limits.config import (
    DEFAULT_TOLERANCES,
    build_driving,
    build_family,
    build_observable,
    parse_config,
    parse_map_spec,
    serialize_plan,
)
from quenched_limits.errors import MissingRequired, ParseError, UnknownKey
from quenched_limits.rds_model import BernoulliShift, IrrationalRotation


def with_section(base: str, extra: str) -> str:
    return base + "\n" + extra


class TestParseConfig:
    """INI text to ExperimentPlan."""

    def test_minimal_config_gets_defaults(self, minimal_config):
        """Only maps, seed and kind are given."""
        plan = parse_config(minimal_config)
        assert plan.kind == "lambda"
        assert plan.seed == 7
        assert plan.n_cells == 1024
        assert plan.workers == 1
        assert plan.get("observable", "kind") == "cosine"
        assert plan.get("observable", "center") is True
        assert len(plan.get("experiment", "theta_grid")) == 13
        assert plan.get("output", "formats") == ("json",)
        assert plan.tolerance("d1_at_zero") == DEFAULT_TOLERANCES["lambda"]["d1_at_zero"]

    def test_unknown_key_reports_line(self):
        """A typo is an error carrying its line number."""
        text = "[model]\nmaps = doubling\nseed = 7\n\n[discretization]\nn_cell = 64\n\n[experiment]\nkind = lambda\n"
        with pytest.raises(UnknownKey) as info:
            parse_config(text)
        assert info.value.lineno == 6
        assert "n_cell" in str(info.value)

    def test_unknown_section(self, minimal_config):
        with pytest.raises(UnknownKey):
            parse_config(with_section(minimal_config, "[plots]\nwidth = 3\n"))

    def test_lenient_mode_ignores_unknown_keys(self, minimal_config):
        plan = parse_config(with_section(minimal_config, "[discretization]\nn_cell = 64\n"), strict=False)
        assert plan.n_cells == 1024
        assert not plan.strict

    def test_missing_seed(self):
        with pytest.raises(MissingRequired):
            parse_config("[model]\nmaps = doubling\n\n[experiment]\nkind = lambda\n")

    def test_missing_kind(self):
        with pytest.raises(MissingRequired):
            parse_config("[model]\nmaps = doubling\nseed = 1\n")

    def test_kind_from_command(self):
        """The subcommand supplies or replaces the experiment kind."""
        assert parse_config("[model]\nmaps = doubling\nseed = 1\n", kind="clt").kind == "clt"
        assert parse_config(MINIMAL_TEXT, kind="validate").kind == "validate"

    def test_bad_value_reports_line(self):
        text = "[model]\nmaps = doubling\nseed = seven\n\n[experiment]\nkind = lambda\n"
        with pytest.raises(ParseError) as info:
            parse_config(text)
        assert info.value.lineno == 3

    def test_missing_section_header(self):
        with pytest.raises(ParseError):
            parse_config("seed = 1\n")

    def test_n_cells_power_of_two(self, minimal_config):
        with pytest.raises(ParseError):
            parse_config(with_section(minimal_config, "[discretization]\nn_cells = 100\n"))

    def test_unknown_summary_format(self, minimal_config):
        with pytest.raises(ParseError):
            parse_config(with_section(minimal_config, "[output]\nformats = json, csv\n"))

    def test_bad_interval(self, minimal_config):
        text = minimal_config.replace("kind = lambda", "kind = lambda\ninterval = 0.5, -0.5")
        with pytest.raises(ParseError):
            parse_config(text)

    def test_linspace_grid(self, minimal_config):
        text = minimal_config.replace("kind = lambda", "kind = lambda\ntheta_grid = linspace(-0.2, 0.2, 5)")
        plan = parse_config(text)
        assert plan.get("experiment", "theta_grid") == pytest.approx((-0.2, -0.1, 0.0, 0.1, 0.2))


class TestTolerances:
    """The [tolerances] section."""

    def test_override(self, minimal_config):
        plan = parse_config(with_section(minimal_config, "[tolerances]\nd1_at_zero = 1e-2\n"))
        assert plan.tolerance("d1_at_zero") == 1e-2
        assert plan.tolerance("lambda_at_zero") == DEFAULT_TOLERANCES["lambda"]["lambda_at_zero"]

    def test_tolerance_of_other_kind(self, minimal_config):
        with pytest.raises(UnknownKey):
            parse_config(with_section(minimal_config, "[tolerances]\nclt_ks = 0.1\n"))

    def test_every_kind_has_tolerances(self):
        for kind, checks in DEFAULT_TOLERANCES.items():
            assert checks, kind


class TestModelSpecs:
    """Maps, drivings and observables built from a plan."""

    def test_map_specs(self):
        assert parse_map_spec("times:4").n_branches == 4
        assert parse_map_spec("doubling").max_slope == 2.0
        assert parse_map_spec("affine: 0,0.5,2,0; 0.5,1,2,-1").n_branches == 2

    def test_affine_with_gap(self, minimal_config):
        text = minimal_config.replace("maps = doubling", "maps = affine: 0,0.4,2.5,0; 0.5,1,2,-1")
        with pytest.raises(ParseError):
            parse_config(text)

    def test_unknown_map(self):
        with pytest.raises(ValueError):
            parse_map_spec("tent")

    def test_bernoulli_default_is_uniform(self):
        plan = parse_config("[model]\nmaps = doubling | tripling\nseed = 3\n\n[experiment]\nkind = clt\n")
        driving = build_driving(plan)
        assert isinstance(driving, BernoulliShift)
        assert driving.probabilities == (0.5, 0.5)
        assert len(build_family(plan)) == 2

    def test_rotation_driving(self):
        text = "[model]\nmaps = doubling | tripling\ndriving = rotation\nseed = 3\n\n[experiment]\nkind = lambda\n"
        driving = build_driving(parse_config(text))
        assert isinstance(driving, IrrationalRotation)
        assert driving.cell_boundaries == (0.0, 0.5)

    def test_observables(self, minimal_config):
        text = with_section(minimal_config, "[observable]\nkind = indicator\nthreshold = 0.25\n")
        g = build_observable(parse_config(text))
        assert g.kind == "indicator"
        assert g.threshold == 0.25
        text = with_section(minimal_config, "[observable]\nharmonics = 1:1.0, 3:0.5\n")
        assert build_observable(parse_config(text)).harmonics == ((1, 1.0), (3, 0.5))


class TestSerialize:
    """Plans written back to INI."""

    def test_round_trip(self, minimal_config):
        text = with_section(minimal_config, "[observable]\nharmonics = 1:1.0, 2:-0.5\n\n[tolerances]\nconvexity = 1e-6\n")
        plan = parse_config(text)
        again = parse_config(serialize_plan(plan))
        assert again.to_dict() == plan.to_dict()

    def test_overrides(self, minimal_config):
        plan = parse_config(minimal_config).with_overrides(seed=99, workers=4)
        assert plan.seed == 99
        assert plan.workers == 4
        assert parse_config(minimal_config).seed == 7


MINIMAL_TEXT = "[model]\nmaps = doubling\nseed = 7\n\n[experiment]\nkind = lambda\n"
