import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from app.models.data_models import AMPLITUDE_CONSISTENT, SPEED_OF_LIGHT
from app.utils.units import db_to_linear, dbm_to_watts

ALGORITHMS = ("hgrl", "grl", "mlp_a2c", "random")
PLACEMENTS = ("ring", "fixed")
DELTA_RULES = ("half_wavelength", "wavelength")


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario block of an experiment, in the units the config file uses."""
    deployment: str = "3D"
    num_users: int = 6
    num_targets: int = 1
    area_m: float = 50.0
    height_m: float = 10.0
    n_antennas: int = 6
    planar_line_y_m: float = 0.0
    waveguide_length_m: Optional[float] = None
    carrier_freq_hz: float = 28e9
    n_eff: float = 1.4
    delta_rule: Optional[str] = "half_wavelength"
    delta_m: Optional[float] = None
    noise_power_dbm: float = -90.0
    gamma_min_db: float = 5.0
    per_antenna_power_w: float = 0.1
    p_max_w: Optional[float] = None
    total_power_w: float = 100.0
    energy_budget: Optional[float] = None
    slots: int = 20
    snr_amplitude_mode: str = AMPLITUDE_CONSISTENT
    placement: str = "ring"
    ring_radius_m: float = 12.0
    ring_width_m: float = 4.0
    target_jitter_m: float = 2.0
    user_positions: Optional[Tuple[Tuple[float, float], ...]] = None
    target_positions: Optional[Tuple[Tuple[float, float], ...]] = None
    lambda_sensing: float = 1.0
    lambda_phys: float = 1.0
    lambda_energy: float = 10.0
    step_max_m: Optional[float] = None
    context_features: bool = False
    position_scale_m: Optional[float] = None
    compare_power_levels_w: Tuple[float, ...] = (0.1, 0.02)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def delta(self) -> float:
        if self.delta_m is not None:
            return float(self.delta_m)
        if self.delta_rule == "wavelength":
            return self.wavelength
        return self.wavelength / 2.0

    @property
    def noise_power(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    @property
    def gamma_min(self) -> float:
        return db_to_linear(self.gamma_min_db)

    @property
    def p_max(self) -> float:
        if self.p_max_w is not None:
            return float(self.p_max_w)
        return self.per_antenna_power_w * self.n_antennas

    @property
    def energy_budget_value(self) -> float:
        if self.energy_budget is not None:
            return float(self.energy_budget)
        return self.total_power_w * self.slots * 1.0

    @property
    def step_max(self) -> float:
        return self.wavelength if self.step_max_m is None else float(self.step_max_m)

    @property
    def position_scale(self) -> float:
        return self.area_m if self.position_scale_m is None else float(self.position_scale_m)

    @property
    def waveguide_length(self) -> float:
        return self.area_m if self.waveguide_length_m is None else float(self.waveguide_length_m)


@dataclass(frozen=True)
class TrainConfig:
    """Training and evaluation hyperparameters."""
    algorithm: str = "hgrl"
    episodes: int = 2000
    seeds: Tuple[int, ...] = (0, 1, 2)
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_weight: float = 0.01
    value_weight: float = 0.5
    grad_clip: float = 1.0
    hidden_dim: int = 64
    gnn_layers: int = 2
    log_std_init: float = math.log(0.5)
    log_std_min: float = -5.0
    log_std_max: float = 1.0
    eval_episodes: int = 100
    final_window: int = 100
    random_action_scale: float = 1.0
    log_every: int = 100
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    plots: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment configuration."""
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Resolved document with every key that has a value (None keys are omitted)."""
        return {
            "scenario": _section_dict(self.scenario),
            "train": _section_dict(self.train),
            "output": _section_dict(self.output),
        }

    def scenario_hash(self) -> str:
        """Hash of the scenario block without the deployment choice."""
        section = _section_dict(self.scenario)
        section.pop("deployment", None)
        payload = json.dumps(section, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _section_dict(section) -> Dict[str, Any]:
    result = {}
    for f in fields(section):
        value = getattr(section, f.name)
        if value is None:
            continue
        result[f.name] = _plain(value)
    return result
