#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""配置管理器测试"""

import pytest

from hatl_lab.core.config_manager import ConfigManager, default_config_path, load_config
from hatl_lab.core.controller import ControllerConfig
from hatl_lab.data.synthetic import DatasetSpec
from hatl_lab.training.losses import LossWeights
from hatl_lab.training.optim import OptimizerConfig
from hatl_lab.utils.errors import ConfigError


class TestValues:
    def test_defaults(self):
        manager = ConfigManager()
        assert manager.get_config_value("run", "regime") == "hatl"
        assert manager.get_config_value("controller", "patience") == 4
        assert manager.get_config_value("decode", "lm_weight") == 0.7
        assert manager.get_config_value("nope", "key", default=5) == 5
        assert manager.get_config_value("run", "nope") is None

    def test_coercion(self):
        manager = ConfigManager()
        manager.apply_lines(["run.seed = 12", "loss.w_enc = 1", "run.single_thread = off",
                             "optimizer.eps = 1e-6", "run.regime = full  # 注释"])
        assert manager.get_config_value("run", "seed") == 12
        assert manager.get_config_value("loss", "w_enc") == 1.0
        assert isinstance(manager.get_config_value("loss", "w_enc"), float)
        assert manager.get_config_value("run", "single_thread") is False
        assert manager.get_config_value("optimizer", "eps") == 1e-6
        assert manager.get_config_value("run", "regime") == "full"

    @pytest.mark.parametrize("line", ["run.seed = x", "run.single_thread = maybe",
                                      "loss.w_ce = heavy", "run.seed = 1.5"])
    def test_bad_values(self, line):
        with pytest.raises(ConfigError):
            ConfigManager().apply_lines([line])

    def test_set_bool_as_int_rejected(self):
        with pytest.raises(ConfigError):
            ConfigManager().set_config_value("run", "seed", True)

    def test_unknown_key_reports_line(self):
        lines = ["# 注释", "", "run.seed = 3", "run.sede = 4"]
        with pytest.raises(ConfigError, match=r"test\.conf:4"):
            ConfigManager().apply_lines(lines, source="test.conf")

    @pytest.mark.parametrize("line", ["run.seed 3", "seed = 3", "nogroup.key = 1"])
    def test_malformed_lines(self, line):
        with pytest.raises(ConfigError):
            ConfigManager().apply_lines([line])

    def test_text_round_trip(self, tmp_path):
        manager = ConfigManager()
        manager.apply_lines(["run.seed = 9", "optimizer.lr_scale = 12.5", "controller.criterion2 = smoothed",
                             "metrics.monitor_smoothing = true"])
        path = str(tmp_path / "saved.conf")
        manager.save_file(path)
        loaded = ConfigManager(path)
        assert loaded.summary() == manager.summary()
        assert loaded.loaded_files == [path]

    def test_copy_is_independent(self):
        manager = ConfigManager()
        clone = manager.copy()
        clone.set_config_value("run", "seed", 77)
        assert manager.get_config_value("run", "seed") == 1


class TestSetValue:
    def test_reports_change(self):
        manager = ConfigManager()
        assert manager.set_config_value("run", "seed", "5") is True
        assert manager.set_config_value("run", "seed", 5) is False
        assert manager.get_config_value("run", "seed") == 5

    @pytest.mark.parametrize("group, key", [("nope", "seed"), ("run", "nope")])
    def test_unknown_key(self, group, key):
        with pytest.raises(ConfigError):
            ConfigManager().set_config_value(group, key, 1)


class TestFiles:
    def test_shipped_files_load(self):
        manager = load_config([default_config_path(), default_config_path("benchmark.conf")])
        assert manager.get_config_value("run", "max_epochs") == 40
        assert manager.get_config_value("optimizer", "lr_scale") == 20.0
        manager.validate()
        spec = DatasetSpec.from_config(load_config([default_config_path("dataset_default.spec")]))
        assert spec == DatasetSpec()

    def test_default_file_matches_builtin_defaults(self):
        assert load_config([default_config_path()]).summary() == ConfigManager().summary()

    def test_overrides_apply_last(self):
        manager = load_config([default_config_path()], ["run.seed=4", "run.task = s2t"])
        assert manager.get_config_value("run", "seed") == 4
        assert manager.get_config_value("run", "task") == "s2t"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config([str(tmp_path / "missing.conf")])


class TestValidate:
    def test_s2t_forces_no_ctc(self):
        manager = ConfigManager()
        manager.set_config_value("run", "task", "s2t")
        manager.validate()
        assert manager.get_config_value("loss", "w_ctc") == 0.0
        assert ControllerConfig.from_config(manager).monitored == ("bleu4",)
        assert LossWeights.from_config(manager).w_ctc == 0.0

    def test_s2g2t_monitors_both(self):
        assert ControllerConfig.from_config(ConfigManager()).monitored == ("ctc", "bleu4")

    @pytest.mark.parametrize("line", [
        "run.regime = partial", "run.task = g2t", "run.max_epochs = 0", "decode.beam_width = 0",
        "decode.temperature = 0", "decode.max_len = 32", "pretrain.dev_fraction = 1.0",
    ])
    def test_invalid_combinations(self, line):
        manager = ConfigManager()
        manager.apply_lines([line])
        with pytest.raises(ConfigError):
            manager.validate()

    def test_component_configs(self):
        manager = ConfigManager()
        manager.apply_lines(["optimizer.lr_scale = 3.0", "controller.criterion2 = smoothed"])
        assert OptimizerConfig.from_config(manager).lr_scale == 3.0
        controller = ControllerConfig.from_config(manager)
        assert controller.criterion2 == "smoothed"
        assert controller.deltas == {"bleu4": 0.002, "ctc": 0.003}

    def test_invalid_controller_values(self):
        manager = ConfigManager()
        manager.apply_lines(["controller.criterion2 = median"])
        with pytest.raises(ConfigError):
            ControllerConfig.from_config(manager)
