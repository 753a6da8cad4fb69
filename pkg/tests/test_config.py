import pytest

from viewfill.config import (
    PipelineConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    save_config,
)
from viewfill.errors import ConfigError

from .conftest import tiny_config


class TestSchema:
    def test_defaults_valid(self):
        config = PipelineConfig()
        assert config.n_coarse == config.generator.n_generated + config.generator.keep

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="mystery"):
            config_from_dict({"mystery": {}})

    def test_unknown_field_path(self):
        with pytest.raises(ConfigError, match="generator.braches"):
            config_from_dict({"generator": {"braches": 2}})

    def test_type_error_path(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            config_from_dict({"train": {"epochs": "many"}})

    def test_cross_field_image_divisibility(self):
        with pytest.raises(ConfigError):
            config_from_dict(
                {
                    "encoder": {
                        "stage_channels": [8, 16, 16],
                        "heads_per_stage": [0, 0, 0],
                    },
                    "data": {"image_size": 20},
                }
            )

    def test_keep_exceeding_points(self):
        with pytest.raises(ConfigError, match="generator.keep"):
            config_from_dict(
                {
                    "generator": {"n_branches": 1, "points_per_branch": 4, "keep": 99},
                    "data": {"n_points": 48},
                }
            )

    def test_invalid_jitter(self):
        with pytest.raises(ConfigError, match="data.jitter"):
            config_from_dict({"data": {"jitter": 0.5}})


class TestRoundTrip:
    def test_dict_round_trip(self):
        config = tiny_config()
        rebuilt = config_from_dict(config_to_dict(config))
        assert rebuilt == config

    def test_yaml_round_trip(self, tmp_path):
        config = tiny_config()
        path = tmp_path / "config.yaml"
        save_config(path, config)
        assert load_config(path) == config

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("train: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestHash:
    def test_stable(self):
        assert config_hash(tiny_config()) == config_hash(tiny_config())

    def test_sensitive_to_values(self):
        import dataclasses

        a = tiny_config()
        b = dataclasses.replace(
            a, train=dataclasses.replace(a.train, seed=a.train.seed + 1)
        )
        assert config_hash(a) != config_hash(b)
