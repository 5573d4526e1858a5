import dataclasses
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union, get_args, get_origin, get_type_hints

import toml

from app.errors import ConfigError
from app.models.config_models import (
    ALGORITHMS,
    DELTA_RULES,
    PLACEMENTS,
    ExperimentConfig,
    OutputConfig,
    ScenarioConfig,
    TrainConfig,
)
from app.models.data_models import AMPLITUDE_MODES
from app.physics.geometry import DEPLOYMENT_KINDS, normalize_kind

logger = logging.getLogger(__name__)

SECTIONS = {"scenario": ScenarioConfig, "train": TrainConfig, "output": OutputConfig}

REQUIRED_KEYS = {
    "scenario": (
        "num_users",
        "num_targets",
        "area_m",
        "height_m",
        "n_antennas",
        "carrier_freq_hz",
        "noise_power_dbm",
        "gamma_min_db",
        "per_antenna_power_w",
    ),
}

_SECTION_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")


class _LineIndex:
    """Line numbers of section headers and keys in the raw TOML text."""

    def __init__(self, text: str):
        self.sections: Dict[str, int] = {}
        self.keys: Dict[Tuple[str, str], int] = {}
        section = ""
        for number, line in enumerate(text.splitlines(), start=1):
            header = _SECTION_RE.match(line)
            if header:
                section = header.group(1)
                self.sections.setdefault(section, number)
                continue
            key = _KEY_RE.match(line)
            if key:
                self.keys.setdefault((section, key.group(1)), number)

    def where(self, section: str, key: Optional[str] = None) -> str:
        line = self.keys.get((section, key)) if key else self.sections.get(section)
        if line is None and key:
            line = self.sections.get(section)
        return f" (line {line})" if line else ""


def _unit_hint(key: str, known: Sequence[str]) -> str:
    stem = key.rsplit("_", 1)[0]
    for candidate in known:
        if candidate != key and candidate.rsplit("_", 1)[0] == stem:
            return f"; wrong unit? expected '{candidate}'"
    return ""


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value, hint, label: str):
    """Check a TOML value against a dataclass field annotation and convert it."""
    origin = get_origin(hint)
    if origin is Union:
        inner = [a for a in get_args(hint) if a is not type(None)]
        return _coerce(value, inner[0], label)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{label} must be true or false, got {value!r}")
        return value
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{label} must be an integer, got {value!r}")
        return value
    if hint is float:
        if not _is_number(value):
            raise ConfigError(f"{label} must be a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{label} must be a string, got {value!r}")
        return value
    if origin in (tuple, Tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{label} must be a list, got {value!r}")
        args = get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{label}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{label} must have {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{label}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    raise ConfigError(f"{label} has an unsupported type")


def _check_choice(value: str, choices: Sequence[str], label: str):
    if value not in choices:
        raise ConfigError(f"{label} must be one of {list(choices)}, got {value!r}")


def _validate_scenario(scenario: ScenarioConfig, lines: _LineIndex):
    def fail(key: str, message: str):
        raise ConfigError(f"scenario.{key}{lines.where('scenario', key)}: {message}")

    if scenario.deployment.upper() not in DEPLOYMENT_KINDS:
        fail("deployment", f"must be one of {list(DEPLOYMENT_KINDS)}")
    for key in ("num_users", "n_antennas", "slots"):
        if getattr(scenario, key) < 1:
            fail(key, "must be at least 1")
    if scenario.num_targets < 0:
        fail("num_targets", "must not be negative")
    for key in ("area_m", "height_m", "carrier_freq_hz", "n_eff", "per_antenna_power_w", "total_power_w"):
        if not getattr(scenario, key) > 0:
            fail(key, "must be strictly positive")
    for key in ("waveguide_length_m", "delta_m", "p_max_w", "energy_budget", "step_max_m", "position_scale_m"):
        value = getattr(scenario, key)
        if value is not None and not value > 0:
            fail(key, "must be strictly positive")
    if scenario.delta_m is None:
        if scenario.delta_rule is None:
            fail("delta_rule", "either delta_rule or delta_m is required")
        _check_choice(scenario.delta_rule, DELTA_RULES, f"scenario.delta_rule{lines.where('scenario', 'delta_rule')}")
    _check_choice(scenario.snr_amplitude_mode, AMPLITUDE_MODES,
                  f"scenario.snr_amplitude_mode{lines.where('scenario', 'snr_amplitude_mode')}")
    _check_choice(scenario.placement, PLACEMENTS, f"scenario.placement{lines.where('scenario', 'placement')}")
    if scenario.placement == "fixed":
        if scenario.user_positions is None or len(scenario.user_positions) != scenario.num_users:
            fail("user_positions", f"fixed placement needs {scenario.num_users} [x, y] pairs")
        if scenario.target_positions is None or len(scenario.target_positions) != scenario.num_targets:
            fail("target_positions", f"fixed placement needs {scenario.num_targets} [x, y] pairs")
    if not 0.0 <= scenario.planar_line_y_m <= scenario.area_m:
        fail("planar_line_y_m", "must lie within [0, area_m]")
    if scenario.ring_width_m < 0 or scenario.ring_radius_m - scenario.ring_width_m / 2.0 <= 0:
        fail("ring_radius_m", "ring must have a positive inner radius")
    if any(not p > 0 for p in scenario.compare_power_levels_w):
        fail("compare_power_levels_w", "power levels must be strictly positive")


def _build_section(name: str, table: Dict[str, Any], lines: _LineIndex):
    cls = SECTIONS[name]
    hints = get_type_hints(cls)
    known = [f.name for f in dataclasses.fields(cls)]
    values = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'{lines.where(name, key)}{_unit_hint(key, known)}")
        values[key] = _coerce(value, hints[key], f"{name}.{key}{lines.where(name, key)}")
    for key in REQUIRED_KEYS.get(name, ()):
        if key not in values:
            raise ConfigError(f"missing required key '{name}.{key}'{lines.where(name)}")
    try:
        return cls(**values)
    except ValueError as e:
        raise ConfigError(f"[{name}]{lines.where(name)}: {e}") from e


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """
    Parse and validate an experiment configuration document.

    Args:
        text: TOML text with [scenario], [train] and [output] sections
        source: Name used in error messages

    Returns:
        ExperimentConfig: Resolved configuration with defaults filled in
    """
    if not text.strip():
        raise ConfigError(f"{source}: configuration is empty")
    try:
        document = toml.loads(text)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"{source}: invalid TOML at line {e.lineno}: {e.msg}") from e

    lines = _LineIndex(text)
    for name, table in document.items():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]{lines.where(name)}")
        if not isinstance(table, dict):
            raise ConfigError(f"{source}: '{name}' must be a section, not a value{lines.where('', name)}")
    if "scenario" not in document:
        raise ConfigError(f"{source}: missing required section [scenario]")

    try:
        scenario = _build_section("scenario", document["scenario"], lines)
        train = _build_section("train", document.get("train", {}), lines)
        output = _build_section("output", document.get("output", {}), lines)
        _validate_scenario(scenario, lines)
        _check_choice(train.algorithm, ALGORITHMS, f"train.algorithm{lines.where('train', 'algorithm')}")
        if not train.seeds:
            raise ConfigError(f"train.seeds{lines.where('train', 'seeds')}: at least one seed is required")
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e

    scenario = dataclasses.replace(scenario, deployment=normalize_kind(scenario.deployment))
    return ExperimentConfig(scenario=scenario, train=train, output=output)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment configuration from a TOML file.

    Args:
        path: Path to the configuration file

    Returns:
        ExperimentConfig: Resolved configuration
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    config = parse_config(text, source=str(path))
    logger.debug("Loaded configuration from %s (scenario %s)", path, config.scenario_hash())
    return config


def dump_config(config: ExperimentConfig) -> str:
    """Fully resolved configuration as TOML text."""
    return toml.dumps(config.to_dict())


def config_from_dict(document: Dict[str, Any], source: str = "<dict>") -> ExperimentConfig:
    """Rebuild a configuration from a resolved document such as the one embedded in a checkpoint."""
    return parse_config(toml.dumps(document), source=source)


def write_resolved_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(config), encoding="utf-8")
    return path


def apply_overrides(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
                    deployment: Optional[str] = None, algorithm: Optional[str] = None,
                    episodes: Optional[int] = None, per_antenna_power: Optional[float] = None,
                    out: Optional[str] = None) -> ExperimentConfig:
    """Return a copy of the configuration with command-line overrides applied."""
    scenario, train, output = config.scenario, config.train, config.output
    if deployment is not None:
        scenario = dataclasses.replace(scenario, deployment=normalize_kind(deployment))
    if per_antenna_power is not None:
        if not per_antenna_power > 0:
            raise ConfigError("per-antenna power must be strictly positive")
        scenario = dataclasses.replace(scenario, per_antenna_power_w=float(per_antenna_power))
    train_changes: Dict[str, Any] = {}
    if seeds:
        train_changes["seeds"] = tuple(int(s) for s in seeds)
    if algorithm is not None:
        _check_choice(algorithm, ALGORITHMS, "algorithm")
        train_changes["algorithm"] = algorithm
    if episodes is not None:
        train_changes["episodes"] = int(episodes)
    if train_changes:
        try:
            train = dataclasses.replace(train, **train_changes)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    if out is not None:
        output = dataclasses.replace(output, dir=str(out))
    return ExperimentConfig(scenario=scenario, train=train, output=output)
