import pytest

from metricboost.config import (
    SYNTH_KEYS,
    TRAIN_KEYS,
    build_synth_spec,
    build_train_config,
    describe_keys,
    parse_config_file,
)
from metricboost.errors import FormatError, InvalidArgument


class TestParse:
    def test_basic(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# a comment\nlr = 0.01\n\nseed=3  # trailing comment\n")
        assert parse_config_file(path) == {"lr": "0.01", "seed": "3"}

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("iterations 100\n")
        with pytest.raises(FormatError, match="line 1"):
            parse_config_file(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("lr = 0.1\nlr = 0.2\n")
        with pytest.raises(FormatError, match="duplicate"):
            parse_config_file(path)


class TestBuildTrainConfig:
    def test_defaults(self):
        cfg, extras = build_train_config()
        assert cfg.loss == "binomial_deviance"
        assert cfg.cost_neg == 25.0
        assert extras == {"init_lr": 1e-3, "init_iterations": 5000}

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidArgument, match="unknown config key"):
            build_train_config({"learning_rate": "0.1"})

    def test_type_coercion(self):
        cfg, _ = build_train_config({
            "lr": "0.5",
            "iterations": "7",
            "use_boosting": "false",
            "group_sizes": "4, 4, 8",
            "lambda_div": "none",
        })
        assert cfg.lr == 0.5
        assert cfg.iterations == 7
        assert cfg.use_boosting is False
        assert cfg.group_sizes == (4, 4, 8)
        assert cfg.lambda_div is None

    def test_bad_bool(self):
        with pytest.raises(InvalidArgument, match="boolean"):
            build_train_config({"use_boosting": "maybe"})

    def test_overrides_win(self):
        cfg, _ = build_train_config({"lr": "0.5"}, {"lr": "0.25"})
        assert cfg.lr == 0.25

    def test_init_extras_configurable(self):
        _, extras = build_train_config({"init_lr": "0.02", "init_iterations": "99"})
        assert extras == {"init_lr": 0.02, "init_iterations": 99}


class TestBuildSynthSpec:
    def test_roundtrip(self):
        spec = build_synth_spec({"classes": "5", "per_class": "4", "feature_dim": "8",
                                 "noise": "0.2", "seed": "3"})
        assert spec.classes == 5 and spec.noise == 0.2

    def test_unknown_key(self):
        with pytest.raises(InvalidArgument):
            build_synth_spec({"nclasses": "5"})


def test_describe_covers_every_key():
    text = describe_keys(TRAIN_KEYS)
    for key in TRAIN_KEYS:
        assert key in text
    assert all(k in describe_keys(SYNTH_KEYS) for k in SYNTH_KEYS)
