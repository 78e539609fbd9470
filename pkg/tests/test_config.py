"""Run configuration: strict parsing and generator spec resolution."""

import json

import pytest

from varigan.config import RunConfig, load_config, resolve_generator_spec
from varigan.errors import ConfigError
from varigan.losses import LossWeights
from varigan.synthesis import DESK_CHANNELS, FULL_CHANNELS


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.output_resolution == 256
    assert cfg.channel_profile == "desk"
    assert cfg.noise == "zero"
    assert cfg.sr_factors == [8]


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"output_resolution": 64, "mystery": 1}))
    with pytest.raises(ConfigError, match="mystery"):
        load_config(path)


@pytest.mark.parametrize("field,value", [
    ("output_resolution", 48),
    ("output_resolution", 16),
    ("channel_profile", "gpu"),
    ("noise", "sometimes"),
    ("task", "segmentation"),
    ("image_size", 50),
    ("truncation", 1.5),
    ("iterations", -1),
])
def test_bad_values_rejected(field, value):
    with pytest.raises(ConfigError):
        RunConfig(**{field: value})


def test_loss_weight_overrides_checked():
    with pytest.raises(ConfigError, match="loss weight"):
        RunConfig(loss_weights={"lambda_nine": 1.0})
    cfg = RunConfig(loss_weights={"adversarial": 0.5})
    w = cfg.weights_for("inversion")
    assert w.adversarial == 0.5
    assert w.latent_reg == LossWeights.for_task("inversion").latent_reg


def test_round_trip(tmp_path):
    cfg = RunConfig(output_resolution=64, seed=7, task="sketch")
    path = cfg.write(tmp_path / "cfg.json")
    assert load_config(path) == cfg


def test_merged_overrides_skip_none():
    cfg = RunConfig(seed=1, out_dir="a")
    m = cfg.merged(seed=2, out_dir=None)
    assert m.seed == 2 and m.out_dir == "a"
    assert cfg.seed == 1  # original untouched


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="no such"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        load_config(arr)


def test_resolve_generator_spec_profiles():
    desk = resolve_generator_spec(RunConfig(output_resolution=64))
    assert desk.output_resolution == 64
    assert desk.channel_schedule == {k: v for k, v in DESK_CHANNELS.items() if k <= 64}
    full = resolve_generator_spec(RunConfig(output_resolution=256,
                                            channel_profile="full"))
    assert full.channel_schedule == {k: v for k, v in FULL_CHANNELS.items() if k <= 256}
