import math

import pytest

from synqkd.detector import JitterModel
from synqkd.harness.config import ConfigError, SimConfig, dump_config, load_config, parse_config
from synqkd.photonics import ProtocolKind


def test_defaults():
    c = SimConfig()
    assert c.protocol is ProtocolKind.B92
    assert c.budget.background_rate_hz == 1.0e3
    assert c.duration_s == 1.0 and c.cadence == 64 and c.transport == "in_process"


def test_create_selects_background_from_daylight():
    assert SimConfig.create(daylight=True).budget.background_rate_hz == 2.0e6
    assert SimConfig.create(daylight=True, background_rate_hz=5.0).budget.background_rate_hz == 5.0
    assert SimConfig.create(mu=0.3).budget.mu == 0.3


def test_parse_flat_keys():
    c = parse_config(
        """
        # comment
        mu = 0.2
        path_loss_db = 6.5   # trailing comment
        protocol = bb84
        tail_fraction = 0.1
        queue_depth = 8
        capacity_enabled = false
        seed = 0x10
        extinction_ratio = inf
        """
    )
    assert c.budget.mu == 0.2 and c.budget.path_loss_db == 6.5
    assert c.protocol is ProtocolKind.BB84
    assert c.jitter.tail_fraction == 0.1
    assert c.capacity.queue_depth == 8 and c.capacity.enabled is False
    assert c.seed == 16 and math.isinf(c.budget.extinction_ratio)


def test_daylight_key_sets_background_unless_explicit():
    assert parse_config("daylight = true").budget.background_rate_hz == 2.0e6
    assert parse_config("daylight = yes\nbackground_rate_hz = 10").budget.background_rate_hz == 10.0


@pytest.mark.parametrize("text", ["bogus = 1", "mu 0.1", "mu = -1", "duration_s = 0", "daylight = maybe",
                                  "cadence = 0", "transport = somewhere", "tail_fraction = 1.5"])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_and_load_round_trip(tmp_path):
    c = SimConfig.create(mu=0.25, daylight=True, seed=99, entropy_file=None,
                         jitter=JitterModel(200.0, 0.2, 500.0, 700.0))
    path = tmp_path / "sim.cfg"
    path.write_text(dump_config(c))
    assert load_config(path) == c


def test_report_rate_none_round_trips():
    c = parse_config("report_rate_hz = none")
    assert c.capacity.report_rate_hz is None
    assert parse_config(dump_config(c)) == c
