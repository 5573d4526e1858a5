import re
from pathlib import Path

import pytest
import toml

from app.errors import ConfigError
from app.models.config_models import ScenarioConfig
from app.utils.config import apply_overrides, config_from_dict, dump_config, load_config, parse_config
from app.utils.units import db_to_linear, dbm_to_watts, linear_to_db

MINIMAL = """
[scenario]
num_users = 2
num_targets = 1
area_m = 20.0
height_m = 5.0
n_antennas = 3
carrier_freq_hz = 28e9
noise_power_dbm = -90.0
gamma_min_db = 5.0
per_antenna_power_w = 0.1
"""


def test_reference_config(reference_config):
    scenario = reference_config.scenario
    assert scenario.num_users == 6
    assert scenario.n_antennas == 6
    assert scenario.deployment == "3D"
    assert scenario.delta == pytest.approx(5.357e-3, rel=1e-3)
    assert scenario.noise_power == pytest.approx(1e-12)
    assert scenario.p_max == pytest.approx(0.6)
    assert scenario.energy_budget_value == pytest.approx(2000.0)
    assert scenario.step_max == pytest.approx(0.25)
    assert scenario.planar_line_y_m == 5.0
    assert reference_config.train.seeds == (0, 1, 2)


def test_unit_conversions():
    assert dbm_to_watts(-90.0) == pytest.approx(1e-12)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert linear_to_db(100.0) == pytest.approx(20.0)


def test_minimal_config_fills_defaults():
    config = parse_config(MINIMAL)
    assert config.scenario.slots == ScenarioConfig().slots
    assert config.train.algorithm == "hgrl"
    assert config.output.dir == "results"


def test_empty_config_is_rejected():
    with pytest.raises(ConfigError, match="empty"):
        parse_config("   \n")


def test_unknown_key_reports_line_and_unit_hint():
    text = MINIMAL + "per_antenna_power_mw = 100.0\n"
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text, source="run.toml")
    message = str(excinfo.value)
    assert "run.toml" in message
    assert "scenario.per_antenna_power_mw" in message
    assert f"line {len(text.splitlines())}" in message
    assert "per_antenna_power_w" in message.split("expected")[-1]


def test_missing_required_key():
    text = MINIMAL.replace("num_users = 2\n", "")
    with pytest.raises(ConfigError, match="scenario.num_users"):
        parse_config(text)


def test_missing_scenario_section():
    with pytest.raises(ConfigError, match=r"\[scenario\]"):
        parse_config("[train]\nepisodes = 3\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match=r"\[plotting\]"):
        parse_config(MINIMAL + "[plotting]\nwidth = 3\n")


def test_wrong_value_type():
    with pytest.raises(ConfigError, match="must be an integer"):
        parse_config(MINIMAL.replace("num_users = 2", "num_users = 2.5"))
    with pytest.raises(ConfigError, match="true or false"):
        parse_config(MINIMAL + "[output]\nplots = 1\n")


def test_invalid_values():
    with pytest.raises(ConfigError, match="strictly positive"):
        parse_config(MINIMAL.replace("area_m = 20.0", "area_m = 0.0"))
    with pytest.raises(ConfigError, match="deployment"):
        parse_config(MINIMAL + 'deployment = "4D"\n')
    with pytest.raises(ConfigError, match="clip_epsilon"):
        parse_config(MINIMAL + "[train]\nclip_epsilon = 1.5\n")
    with pytest.raises(ConfigError, match="algorithm"):
        parse_config(MINIMAL + '[train]\nalgorithm = "ppo"\n')


def test_fixed_placement_needs_positions():
    with pytest.raises(ConfigError, match="user_positions"):
        parse_config(MINIMAL + 'placement = "fixed"\n')
    config = parse_config(MINIMAL + 'placement = "fixed"\n'
                          "user_positions = [[1.0, 2.0], [3.0, 4.0]]\n"
                          "target_positions = [[10.0, 10.0]]\n")
    assert config.scenario.user_positions == ((1.0, 2.0), (3.0, 4.0))


def test_invalid_toml_reports_line():
    with pytest.raises(ConfigError, match="line"):
        parse_config("[scenario]\nnum_users = \n")


def test_deployment_is_normalised():
    assert parse_config(MINIMAL + 'deployment = "2d"\n').scenario.deployment == "2D"


def test_dump_round_trip(reference_config):
    text = dump_config(reference_config)
    assert parse_config(text) == reference_config
    assert config_from_dict(toml.loads(text)) == reference_config


def test_scenario_hash_ignores_deployment(reference_config):
    other = apply_overrides(reference_config, deployment="1d")
    assert other.scenario.deployment == "1D"
    assert other.scenario_hash() == reference_config.scenario_hash()
    powered = apply_overrides(reference_config, per_antenna_power=0.02)
    assert powered.scenario_hash() != reference_config.scenario_hash()


def test_apply_overrides(reference_config):
    config = apply_overrides(reference_config, seeds=[4, 5], algorithm="grl", episodes=10,
                             per_antenna_power=0.02, out="elsewhere")
    assert config.train.seeds == (4, 5)
    assert config.train.algorithm == "grl"
    assert config.train.episodes == 10
    assert config.scenario.p_max == pytest.approx(0.12)
    assert config.output.dir == "elsewhere"
    assert apply_overrides(reference_config) == reference_config


def test_override_errors(reference_config):
    with pytest.raises(ConfigError):
        apply_overrides(reference_config, algorithm="ppo")
    with pytest.raises(ConfigError):
        apply_overrides(reference_config, per_antenna_power=0.0)
    with pytest.raises(ConfigError):
        apply_overrides(reference_config, episodes=-1)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.toml")


def test_planar_line_outside_area_is_rejected():
    with pytest.raises(ConfigError, match="planar_line_y_m"):
        parse_config(MINIMAL + "planar_line_y_m = 25.0\n")


def test_requirements_list_direct_dependencies_only():
    root = Path(__file__).resolve().parent.parent
    pinned = {line.split("==")[0] for line in (root / "requirements.txt").read_text().splitlines() if line.strip()}
    sources = "\n".join(p.read_text() for p in [*root.glob("app/**/*.py"), *root.glob("tests/*.py"), root / "run.py"])
    imported = {name for name in pinned if re.search(rf"^\s*(import|from) {name}\b", sources, re.MULTILINE)}
    # pyarrow backs polars' to_pandas and is never imported by name
    assert pinned - imported == {"pyarrow"}
