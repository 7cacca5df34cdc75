import numpy as np
from pydantic import ValidationError
import pytest

from qbcsim.config import ProtocolConfig, config_hash, config_keys, load_config
from qbcsim.errors import ConfigError, ConfigGuard, InvalidParams


def test_defaults_are_valid_and_derive_the_schedule():
    cfg = ProtocolConfig()
    t0, t1, commit_end, unveil = cfg.timeline
    assert t0 == pytest.approx(0.023319, rel=1e-4)
    assert t1 == pytest.approx(2 * t0, rel=1e-12)
    assert commit_end == cfg.tau == unveil
    cfg.check_timing_guard()


def test_default_grid_covers_envelope():
    cfg = ProtocolConfig()
    grid = cfg.grid()
    assert grid.n_points == 16384
    assert grid.x_max >= 16 * cfg.wavelength * cfg.screen_distance / cfg.slit_width * 0.99
    assert ProtocolConfig(grid_half_width=1e-3).grid().x_max == pytest.approx(1e-3, rel=1e-3)


@pytest.mark.parametrize("overrides", [
    {"n_trials": 0},
    {"slit_separation": 1e-5},
    {"p_both": 1.5},
    {"epsilon_v": 0.0},
    {"grid_points": 1000},
    {"commit_end": 0.01},
    {"detection_efficiency": 0.0},
])
def test_invalid_values_are_rejected(overrides):
    with pytest.raises(InvalidParams):
        ProtocolConfig(**overrides)


def test_unknown_keyword_is_rejected():
    with pytest.raises(ValidationError):
        ProtocolConfig(not_a_key=1)


def test_timing_guard():
    with pytest.raises(ConfigGuard):
        ProtocolConfig(tau=1.0).check_timing_guard()
    ProtocolConfig(tau=1.0, t1_guard_ratio=0.5).check_timing_guard()


def test_slit_probabilities_sum_to_one():
    probs = ProtocolConfig(p_both=0.4).slit_probabilities()
    assert sum(probs.values()) == pytest.approx(1.0)
    assert len(set(list(probs.values())[1:])) == 1


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# small run\nn_trials = 50\nscreen_distance=10\nannounce_at_detection=true\n")
    cfg = load_config(path)
    assert cfg.n_trials == 50
    assert cfg.screen_distance == 10.0
    assert cfg.announce_at_detection is True


def test_load_config_overrides_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_trials = 50\n")
    assert load_config(path, n_trials=7, p_both=None).n_trials == 7


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")

    bad_key = tmp_path / "bad.cfg"
    bad_key.write_text("n_trails = 10\n")
    with pytest.raises(ConfigError, match="n_trails"):
        load_config(bad_key)

    bad_value = tmp_path / "value.cfg"
    bad_value.write_text("n_trials = many\n")
    with pytest.raises(ConfigError):
        load_config(bad_value)

    out_of_range = tmp_path / "range.cfg"
    out_of_range.write_text("n_trials = 0\n")
    with pytest.raises(InvalidParams):
        load_config(out_of_range)


def test_config_hash_tracks_values():
    a = ProtocolConfig()
    assert config_hash(a) == config_hash(ProtocolConfig())
    assert config_hash(a) != config_hash(a.with_overrides(n_trials=201))
    assert len(config_hash(a)) == 64


def test_config_keys_lists_defaults():
    keys = config_keys()
    assert keys["n_trials"] == 200
    assert keys["epsilon_v"] == 0.001
    assert np.isclose(keys["tau"], 885.7)
