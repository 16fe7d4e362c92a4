"""Config parsing, validation, and canonical serialization."""

import numpy as np
import pytest

from pumpreadout.config import (RunConfig, config_text, load_config,
                                parse_config, validate_config)
from pumpreadout.errors import ConfigError


def test_defaults_are_valid():
    cfg = RunConfig()
    validate_config(cfg)
    assert cfg.scan_start == 15.8 and cfg.scan_stop == 18.3
    assert cfg.protocol_spreads == (0.02, 0.028, 0.042)
    assert cfg.n_cycles == 10


def test_parse_overrides_and_comments():
    cfg = parse_config("""
# comment
[dot]
dot_points = 128  # inline comment
[scan]
scan_start = 16.0
scan_stop = 16.4
scan_step = 0.2
[protocol]
protocol_spreads = 0.05, 0.06
rederive_each_cycle = true
""")
    assert cfg.dot_points == 128
    assert cfg.protocol_spreads == (0.05, 0.06)
    assert cfg.rederive_each_cycle is True
    assert np.allclose(cfg.scan_energies(), [16.0, 16.2, 16.4])


@pytest.mark.parametrize("text,fragment", [
    ("[nope]\n", "unknown section"),
    ("[dot]\nbogus = 1\n", "unknown key"),
    ("dot_points = 64\n", "before any"),
    ("[dot]\ndot_points\n", "expected"),
    ("[dot]\ndot_points = x\n", "cannot parse"),
    ("[dot]\ndot_points = 64\ndot_points = 128\n", "duplicate"),
    ("[protocol]\nprotocol_spreads = ,\n", "cannot parse"),
    ("[protocol]\nrederive_each_cycle = yes\n", "cannot parse"),
])
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert fragment in str(err.value)
    assert "line" in str(err.value)


@pytest.mark.parametrize("text", [
    "[dot]\ndot_points = 100\n",           # not a power of two
    "[dot]\ndot_points = 8\n",             # too small
    "[dot]\ndot_half_extent = 200\n",      # clips the oscillator tails
    "[dot]\nn_channels = 1\n",
    "[grid]\ndx = 0\n",
    "[scan]\nscan_step = -0.1\n",
    "[scan]\nscan_start = 17.0\nscan_stop = 16.0\n",
    "[scan]\nscan_delta_e = 0.5\n",        # spread out of range
    "[scan]\nscan_start = 15.0\n",         # below the confinement offset
    "[protocol]\nn_cycles = 0\n",
    "[protocol]\nn_cycles = 13\n",
    "[stepper]\nstall_fraction = 1.5\n",
    "[stepper]\nstall_ceiling = 0.5\n",    # >= interaction_norm
])
def test_validation_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_longitudinal_mapping():
    cfg = RunConfig()
    assert cfg.longitudinal(16.4) == pytest.approx(16.4 - 15.019)
    assert cfg.longitudinal(17.6) == pytest.approx(17.6 - 15.019)
    with pytest.raises(ConfigError):
        cfg.longitudinal(15.019)


def test_scan_energies_endpoints_inclusive():
    cfg = RunConfig()
    energies = cfg.scan_energies()
    assert energies.size == 51
    assert energies[0] == pytest.approx(15.8)
    assert energies[-1] == pytest.approx(18.3)
    assert 16.4 == pytest.approx(energies[12])


def test_protocol_blocks():
    cfg = RunConfig()
    blocks = cfg.protocol_blocks()
    assert blocks == ((16.4, 0.02), (16.4, 0.028), (16.4, 0.042),
                      (17.6, 0.02))


def test_round_trip(tmp_path):
    cfg = parse_config("[dot]\ndot_points = 128\n"
                       "[protocol]\nprotocol_spreads = 0.05, 0.06\n")
    text = config_text(cfg)
    again = parse_config(text)
    assert again == cfg
    assert config_text(again) == text
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    assert load_config(path) == cfg


def test_stepper_and_wavepacket_pass_through():
    cfg = parse_config("[stepper]\nalpha_target = 30\nmax_steps = 10\n")
    st = cfg.stepper()
    assert st.alpha_target == 30.0 and st.max_steps == 10
    spec = cfg.wavepacket(16.4, 0.02)
    assert spec.mean_energy == pytest.approx(1.381)
    assert spec.energy_spread == 0.02
