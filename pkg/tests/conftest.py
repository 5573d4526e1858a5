from pathlib import Path

import numpy as np
import pytest

from app.models.config_models import ExperimentConfig, OutputConfig, ScenarioConfig, TrainConfig
from app.models.data_models import RfConstants, Scenario
from app.physics.geometry import make_deployment
from app.utils.config import load_config

ROOT = Path(__file__).resolve().parent.parent
REFERENCE_CONFIG = ROOT / "configs" / "reference.toml"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def reference_config() -> ExperimentConfig:
    return load_config(REFERENCE_CONFIG)


@pytest.fixture
def small_scenario_config() -> ScenarioConfig:
    """Two users, one target, three antennas and three slots."""
    return ScenarioConfig(
        num_users=2,
        num_targets=1,
        n_antennas=3,
        slots=3,
        ring_radius_m=8.0,
        ring_width_m=2.0,
    )


@pytest.fixture
def small_config(small_scenario_config, tmp_path) -> ExperimentConfig:
    return ExperimentConfig(
        scenario=small_scenario_config,
        train=TrainConfig(
            episodes=3,
            seeds=(0,),
            hidden_dim=8,
            gnn_layers=1,
            eval_episodes=2,
            final_window=2,
            log_every=0,
        ),
        output=OutputConfig(dir=str(tmp_path / "results"), plots=True),
    )


@pytest.fixture
def rf() -> RfConstants:
    return RfConstants.from_carrier(28e9, 1.4)


@pytest.fixture
def scenario_3d(rf):
    """Reference-sized 3D scenario with fixed terminals; returns (scenario, layout)."""
    delta = rf.wavelength / 2.0
    waveguides, layout = make_deployment("3D", 6, 50.0, 10.0, delta)
    users = np.array([[25.0 + 12.0 * np.cos(a), 25.0 + 12.0 * np.sin(a), 0.0]
                      for a in np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)])
    scenario = Scenario(
        users=users,
        targets=np.array([[25.0, 25.0, 0.0]]),
        waveguides=tuple(waveguides),
        rf=rf,
        delta=delta,
        p_max=0.6,
        energy_budget=2000.0,
        noise_power=1e-12,
        gamma_min=10 ** 0.5,
        slots=20,
    )
    return scenario, layout
