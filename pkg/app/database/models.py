from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional


@dataclass
class RunRow:
    run_id: str
    algorithm: str
    deployment: str
    per_antenna_power_w: float
    seed: int
    scenario_hash: str
    status: str = "ok"
    error: Optional[str] = None
    episodes: int = 0
    parameter_count: int = 0
    final_reward: Optional[float] = None
    checkpoint: Optional[str] = None
    curve_csv: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunRow':
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EvaluationRow:
    run_id: str
    episodes: int
    avg_reward: float
    avg_rate_bps_hz: float
    avg_user_rate: float
    avg_sensing_snr_db: float
    avg_sensing_snr_db_alt: float
    max_sensing_snr_db: float
    feasible_fraction: float

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvaluationRow':
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SummaryRow:
    """Aggregated results of one (algorithm, deployment, power cap) group."""
    algorithm: str
    deployment: str
    per_antenna_power_w: float
    seeds: int
    final_reward_mean: Optional[float] = None
    final_reward_std: Optional[float] = None
    avg_rate_bps_hz: Optional[float] = None
    avg_user_rate: Optional[float] = None
    avg_sensing_snr_db: Optional[float] = None
    avg_sensing_snr_db_alt: Optional[float] = None
    max_sensing_snr_db: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SummaryRow':
        return cls(**data)
