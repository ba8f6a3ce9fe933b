"""
Experiment configuration: INI text in, ``ExperimentPlan`` out.

Sections are ``[model] [discretization] [observable] [experiment] [output]``
and an optional ``[tolerances]``. Every key is declared in ``KEYS`` with its
type and default; in strict mode anything else is an error reported with
its line number.
"""

import configparser
import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import MissingRequired, ParseError, UnknownKey
from .observables import Observable
from .rds_model import (
    BernoulliShift,
    DrivingSystem,
    IrrationalRotation,
    MapFamily,
    PiecewiseLinearMap,
    affine,
    times,
)

# Configure logging
logger = logging.getLogger(__name__)

KINDS = ("density", "lambda", "variance", "ldp", "clt", "lclt", "aperiodicity", "validate")
SUMMARY_FORMATS = ("json", "yaml", "txt")

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_OPTION_RE = re.compile(r"^([^\s#;=:][^=:]*?)\s*[=:]")
_LINSPACE_RE = re.compile(r"^linspace\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)$")


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _grid(text: str) -> Tuple[float, ...]:
    """Comma list or ``linspace(a, b, count)``."""
    match = _LINSPACE_RE.match(text.strip())
    if match:
        a, b, count = float(match.group(1)), float(match.group(2)), int(match.group(3))
        return tuple(float(x) for x in np.linspace(a, b, count))
    return _floats(text)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "yes", "true", "on"):
        return True
    if lowered in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _harmonics(text: str) -> Tuple[Tuple[int, float], ...]:
    """``"k:amp, k:amp"`` pairs."""
    pairs = []
    for item in text.split(","):
        if not item.strip():
            continue
        k, _, amp = item.partition(":")
        pairs.append((int(k), float(amp) if amp.strip() else 1.0))
    if not pairs:
        raise ValueError("harmonics list is empty")
    return tuple(pairs)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in allowed:
            raise ValueError(f"'{text}' is not one of {allowed}")
        return value
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str
    required: bool = False


KEYS: Dict[str, Dict[str, Key]] = {
    "model": {
        "maps": Key(str, "doubling", "'|'-separated map specs: doubling, tripling, times:K, 'affine: a,b,s,c; ...'"),
        "driving": Key(_choice("bernoulli", "rotation"), "bernoulli", "driving system"),
        "probabilities": Key(_floats, None, "Bernoulli symbol probabilities (default uniform)"),
        "alpha": Key(float, 0.5 * (math.sqrt(5.0) - 1.0), "rotation number"),
        "boundaries": Key(_floats, None, "rotation cell boundaries (default equal cells)"),
        "start_point": Key(float, 0.0, "rotation start point"),
        "seed": Key(int, None, "seed for the driving and every sampling stream", required=True),
    },
    "discretization": {
        "n_cells": Key(int, 1024, "Ulam grid size, a power of two"),
        "tol": Key(float, 1e-10, "Cauchy tolerance of pull-back passes"),
        "n_max": Key(int, 1 << 14, "longest pull-back horizon"),
    },
    "observable": {
        "kind": Key(_choice("cosine", "indicator", "zero"), "cosine", "observable family"),
        "harmonics": Key(_harmonics, ((1, 1.0),), "cosine harmonics 'k:amp, ...'"),
        "threshold": Key(float, 0.5, "indicator threshold"),
        "scale": Key(float, 1.0, "indicator height"),
        "offset": Key(float, 0.0, "constant added to the indicator"),
        "center": Key(_bool, True, "center fiberwise before the experiment"),
    },
    "experiment": {
        "kind": Key(_choice(*KINDS), None, "experiment to run", required=True),
        "workers": Key(int, 1, "worker threads"),
        "theta": Key(float, 0.1, "twist for the density experiment"),
        "t": Key(int, 0, "anchor fiber time"),
        "axis": Key(_choice("real", "imaginary"), "real", "axis of the Lambda curve"),
        "theta_grid": Key(_grid, _grid("linspace(-0.3, 0.3, 13)"), "symmetric theta grid"),
        "h": Key(float, 1e-2, "finite-difference step at 0"),
        "n_orbit": Key(int, 20000, "orbit length of Lambda estimates"),
        "n_burn": Key(int, 256, "burn-in steps of Lambda estimates"),
        "j_max": Key(int, 32, "longest correlation lag"),
        "variance_orbit": Key(int, 1000, "origins averaged by the correlation series"),
        "epsilons": Key(_floats, (0.05, 0.1), "LDP thresholds"),
        "ns": Key(_ints, (200, 400), "LDP sum lengths"),
        "n": Key(int, 2000, "Birkhoff sum length"),
        "count": Key(int, 100000, "number of samples"),
        "t0": Key(int, 0, "first fiber time of the sums"),
        "start_law": Key(_choice("mu_omega", "lebesgue"), "mu_omega", "law of starting points"),
        "interval": Key(_floats, (-0.25, 0.25), "LCLT interval J = [a, b)"),
        "s_grid": Key(_grid, None, "LCLT shifts (default 25 points in +-3 sigma sqrt(n))"),
        "t_grid": Key(_grid, _grid("linspace(0.5, 3.141592653589793, 20)"), "aperiodicity frequencies"),
        "sigma2": Key(float, None, "force sigma^2 instead of estimating it"),
        "assume_aperiodic": Key(_bool, False, "skip the aperiodicity scan before the LCLT"),
        "trials": Key(int, 8, "test functions of decay fits"),
        "decay_steps": Key(int, 24, "steps of decay fits"),
        "resolution": Key(int, 64, "covering-check mesh"),
        "k_max": Key(int, 32, "longest covering composition"),
        "horizon": Key(int, 0, "driving horizon for validation (0: all words)"),
    },
    "output": {
        "directory": Key(str, "results", "artifact directory"),
        "plot": Key(_bool, False, "emit an SVG next to the CSV"),
        "dump_matrices": Key(_bool, False, "write Ulam matrix triplets"),
        "formats": Key(lambda s: tuple(x.strip() for x in s.split(",") if x.strip()), ("json",),
                       "summary formats (json, yaml, txt)"),
    },
}

DEFAULT_TOLERANCES: Dict[str, Dict[str, float]] = {
    "density": {"lambda_zero": 1e-12, "lambda_consistency": 1e-10, "equivariance": 1e-9},
    "lambda": {"lambda_at_zero": 1e-10, "d1_at_zero": 1e-3, "convexity": 0.0},
    "variance": {"sigma2_agreement": 0.05, "sigma2_nonnegative": 1e-8},
    "ldp": {"ldp_gap": 0.25, "ldp_trend": 0.0},
    "clt": {"clt_ks": 0.02, "clt_variance": 0.03},
    "lclt": {"lclt_sup_error": 0.05},
    "aperiodicity": {"lambda_it_threshold": 1e-3},
    "validate": {"admissible": 0.0, "variation_axioms": 0.0},
}


@dataclass(frozen=True)
class ExperimentPlan:
    sections: Dict[str, Dict[str, Any]]
    tolerances: Dict[str, float] = field(default_factory=dict)
    strict: bool = True

    def get(self, section: str, key: str) -> Any:
        return self.sections[section][key]

    @property
    def kind(self) -> str:
        return self.get("experiment", "kind")

    @property
    def seed(self) -> int:
        return self.get("model", "seed")

    @property
    def n_cells(self) -> int:
        return self.get("discretization", "n_cells")

    @property
    def workers(self) -> int:
        return self.get("experiment", "workers")

    def tolerance(self, check: str) -> float:
        return self.tolerances.get(check, DEFAULT_TOLERANCES[self.kind][check])

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None,
                       kind: Optional[str] = None) -> "ExperimentPlan":
        sections = {name: dict(values) for name, values in self.sections.items()}
        if seed is not None:
            sections["model"]["seed"] = int(seed)
        if workers is not None:
            sections["experiment"]["workers"] = int(workers)
        if kind is not None:
            sections["experiment"]["kind"] = _choice(*KINDS)(kind)
        return replace(self, sections=sections)

    def to_dict(self) -> Dict[str, Any]:
        return {"sections": {k: dict(v) for k, v in self.sections.items()},
                "tolerances": dict(self.tolerances), "strict": self.strict}


def _line_index(text: str) -> Dict[Tuple[Optional[str], Optional[str]], int]:
    """``(section, key) -> line number``; ``(section, None)`` for headers."""
    index: Dict[Tuple[Optional[str], Optional[str]], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            index.setdefault((section, None), lineno)
            continue
        if line[:1].isspace():
            continue
        match = _OPTION_RE.match(line)
        if match:
            index.setdefault((section, match.group(1).strip()), lineno)
    return index


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'" and text[0] not in text[1:-1]:
        return text[1:-1]
    return text


def parse_map_spec(spec: str) -> PiecewiseLinearMap:
    """``doubling``, ``tripling``, ``times:K`` or ``affine: a,b,s,c; a,b,s,c``."""
    spec = _unquote(spec)
    name, _, rest = spec.partition(":")
    name = name.strip().lower()
    if name == "doubling" and not rest:
        return times(2)
    if name == "tripling" and not rest:
        return times(3)
    if name == "times":
        return times(int(rest))
    if name == "affine":
        quads = []
        for chunk in rest.split(";"):
            if not chunk.strip():
                continue
            values = [float(x) for x in chunk.split(",")]
            if len(values) != 4:
                raise ValueError(f"affine branch '{chunk.strip()}' needs 4 numbers (a, b, slope, intercept)")
            quads.append(tuple(values))
        return affine(quads, name=spec)
    raise ValueError(f"unknown map spec '{spec}'")


def parse_config(text: str, strict: bool = True, kind: Optional[str] = None) -> ExperimentPlan:
    """Parse INI text into an ``ExperimentPlan`` with every default filled in.

    ``kind`` (the CLI subcommand) replaces ``[experiment] kind`` when given.
    """
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError(f"missing section header: {e.line.strip()!r}", e.lineno)
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise ParseError(f"cannot parse {line.strip()!r}", lineno)
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ParseError(str(e).splitlines()[0], e.lineno)

    lines = _line_index(text)
    sections: Dict[str, Dict[str, Any]] = {}
    tolerances: Dict[str, float] = {}

    def fail_unknown(message: str, lineno: Optional[int]) -> None:
        if strict:
            raise UnknownKey(message, lineno)
        logger.warning(f"{message} (line {lineno}); ignored in lenient mode")

    for section in parser.sections():
        if section not in KEYS and section != "tolerances":
            fail_unknown(f"unknown section [{section}]", lines.get((section, None)))

    for section, keys in KEYS.items():
        values = {}
        present = parser[section] if parser.has_section(section) else {}
        for key in present:
            lineno = lines.get((section, key))
            if not _KEY_RE.match(key):
                raise ParseError(f"key '{key}' is not lowercase snake-case", lineno)
            if key not in keys:
                fail_unknown(f"unknown key '{key}' in [{section}]", lineno)
        for key, spec in keys.items():
            if key in present:
                raw = _unquote(present[key])
                try:
                    values[key] = spec.parse(raw)
                except (TypeError, ValueError) as e:
                    raise ParseError(f"[{section}] {key}: {e}", lines.get((section, key)))
            elif section == "experiment" and key == "kind" and kind is not None:
                values[key] = None
            elif spec.required:
                raise MissingRequired(f"[{section}] {key} is required", lines.get((section, None)))
            else:
                values[key] = spec.default
        sections[section] = values

    if kind is not None:
        sections["experiment"]["kind"] = _choice(*KINDS)(kind)
    kind = sections["experiment"]["kind"]
    if parser.has_section("tolerances"):
        for key in parser["tolerances"]:
            lineno = lines.get(("tolerances", key))
            if key not in DEFAULT_TOLERANCES[kind]:
                fail_unknown(f"tolerance '{key}' does not apply to kind '{kind}'", lineno)
                continue
            try:
                tolerances[key] = float(parser["tolerances"][key])
            except ValueError as e:
                raise ParseError(f"[tolerances] {key}: {e}", lineno)

    plan = ExperimentPlan(sections=sections, tolerances=tolerances, strict=strict)
    _validate(plan, lines)
    logger.debug(f"parsed plan for kind '{kind}' with seed {plan.seed}")
    return plan


def _validate(plan: ExperimentPlan, lines: Dict) -> None:
    n_cells = plan.n_cells
    if n_cells < 2 or n_cells & (n_cells - 1):
        raise ParseError(f"n_cells={n_cells} must be a power of two", lines.get(("discretization", "n_cells")))
    try:
        build_family(plan)
    except (TypeError, ValueError) as e:
        raise ParseError(f"[model] maps: {e}", lines.get(("model", "maps")))
    try:
        build_driving(plan)
    except (TypeError, ValueError) as e:
        raise ParseError(f"[model] driving: {e}", lines.get(("model", "driving")))
    interval = plan.get("experiment", "interval")
    if len(interval) != 2 or not interval[1] > interval[0]:
        raise ParseError("interval must be 'a, b' with a < b", lines.get(("experiment", "interval")))
    unknown = sorted(set(plan.get("output", "formats")) - set(SUMMARY_FORMATS))
    if unknown:
        raise ParseError(f"unknown summary formats {unknown} (expected {SUMMARY_FORMATS})",
                         lines.get(("output", "formats")))


def build_family(plan: ExperimentPlan) -> MapFamily:
    specs = [s for s in _unquote(plan.get("model", "maps")).split("|") if s.strip()]
    return MapFamily.from_maps(*[parse_map_spec(s) for s in specs])


def build_driving(plan: ExperimentPlan) -> DrivingSystem:
    model = plan.sections["model"]
    k = len([s for s in _unquote(model["maps"]).split("|") if s.strip()])
    if model["driving"] == "bernoulli":
        probabilities = model["probabilities"] or tuple([1.0 / k] * k)
        return BernoulliShift(tuple(probabilities), model["seed"])
    boundaries = model["boundaries"] or tuple(i / k for i in range(k))
    return IrrationalRotation(model["alpha"], tuple(boundaries), model["start_point"])


def build_observable(plan: ExperimentPlan) -> Observable:
    obs = plan.sections["observable"]
    if obs["kind"] == "cosine":
        return Observable(kind="cosine", harmonics=obs["harmonics"])
    if obs["kind"] == "indicator":
        return Observable(kind="indicator", threshold=obs["threshold"], scale=obs["scale"], offset=obs["offset"])
    return Observable(kind="zero")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{k}:{a!r}" for k, a in value)
        return ", ".join(_format(v) for v in value)
    return str(value)


def serialize_plan(plan: ExperimentPlan) -> str:
    """INI text that parses back to an equal plan."""
    out: List[str] = []
    for section, keys in KEYS.items():
        out.append(f"[{section}]")
        for key in keys:
            value = plan.sections[section][key]
            if value is None:
                continue
            out.append(f"{key} = {_format(value)}")
        out.append("")
    if plan.tolerances:
        out.append("[tolerances]")
        for key in sorted(plan.tolerances):
            out.append(f"{key} = {plan.tolerances[key]!r}")
        out.append("")
    return "\n".join(out)
