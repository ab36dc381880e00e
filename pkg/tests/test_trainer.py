#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""训练编排测试：三种方案的冻结行为、可复现性、输出文件与评估"""

import json
import os

import numpy as np
import pytest

from hatl_lab.core.checkpoint import load_checkpoint
from hatl_lab.core.event_manager import read_events
from hatl_lab.core.regimes import available_regimes, get_regime
from hatl_lab.core.trainer import (
    METRICS_HEADER, ComparisonRow, evaluate, evaluate_model, model_config_for, pretrain_backbone,
    run_training,
)
from hatl_lab.evaluation.metrics import REPORT_KEYS
from hatl_lab.model.layered_model import build_model
from hatl_lab.utils.errors import ConfigError

# 无预热、耐心为1、阈值极大：第2轮即安排解冻 L3，第3轮生效
EAGER_RELEASE = [
    "controller.warmup_epochs = 0",
    "controller.patience = 1",
    "controller.delta_bleu4 = 10.0",
    "controller.delta_ctc = 10.0",
    "controller.tau_bleu4 = 10.0",
    "controller.tau_ctc = 10.0",
]


def _train(config, dataset, out_dir, regime="hatl", lines=()):
    config.set_config_value("run", "regime", regime)
    config.apply_lines(list(lines))
    return run_training(config, dataset, out_dir=out_dir)


def _initial_params(config, dataset):
    model = build_model(model_config_for(config, dataset), config.get_config_value("run", "seed"))
    return {name: p.detach().numpy() for name, p in model.named_parameters()}


def _changed_groups(config, dataset, checkpoint_path):
    initial = _initial_params(config, dataset)
    params = load_checkpoint(checkpoint_path).params
    model = build_model(model_config_for(config, dataset), 0)
    changed = set()
    for group, members in model.parameter_groups().items():
        if any(not np.array_equal(params[name], initial[name]) for name, _ in members):
            changed.add(group)
    return changed


class TestRegimes:
    def test_registry(self):
        assert available_regimes() == ["classical", "full", "hatl"]
        with pytest.raises(ConfigError):
            get_regime("partial")

    def test_initial_trainable(self, tiny_model):
        assert get_regime("classical").initial_trainable(tiny_model) == frozenset({"t"})
        assert get_regime("hatl").initial_trainable(tiny_model) == frozenset({"t"})
        assert get_regime("full").initial_trainable(tiny_model) == frozenset({"L1", "L2", "L3", "t"})

    def test_classical_keeps_backbone(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, "classical")
        assert report.unfrozen_layers == [0, 0, 0]
        assert _changed_groups(tiny_config, tiny_dataset, os.path.join(out_dir, "best.ckpt")) == {"t"}

    def test_full_trains_everything(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, "full")
        assert report.unfrozen_layers == [3, 3, 3]
        changed = _changed_groups(tiny_config, tiny_dataset, os.path.join(out_dir, "best.ckpt"))
        assert changed == {"L1", "L2", "L3", "t"}

    def test_hatl_without_plateau_stays_frozen(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, "hatl")
        assert report.unfrozen_layers == [0, 0, 0]
        assert [e.phase for e in report.epochs] == ["warmup", "warmup", "monitoring"]

    def test_hatl_releases_top_layer(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, "hatl",
                        EAGER_RELEASE + ["run.max_epochs = 4"])
        assert report.unfrozen_layers == [0, 0, 1, 1]
        assert report.epochs[2].trainable == ["L3", "t"]
        assert [e.decision for e in report.epochs] == ["continue", "release", "continue", "continue"]
        events = [tuple(e) for e in report.events]
        assert (1, "warmup_end", "") in events
        assert (2, "release_scheduled", "L3") in events
        assert (3, "release_applied", "L3") in events
        assert [e.phase for e in report.epochs][2:] == ["cooldown", "cooldown"]
        changed = _changed_groups(tiny_config, tiny_dataset, os.path.join(out_dir, "best.ckpt"))
        assert not changed & {"L1", "L2"}

    def test_classical_ignores_plateaus(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, "classical",
                        EAGER_RELEASE + ["run.max_epochs = 4"])
        assert report.unfrozen_layers == [0, 0, 0, 0]
        assert all(e[1] not in ("release_scheduled", "release_applied") for e in report.events)


class TestOutputs:
    def test_files_and_report(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir)
        for name in ("metrics.csv", "losses.csv", "timing.csv", "events.tsv", "report.json",
                     "best.ckpt", "config.echo", "train.log", "hyp.txt", "ref.txt",
                     "dev_hyp.txt", "dev_ref.txt"):
            assert os.path.exists(os.path.join(out_dir, name)), name

        with open(os.path.join(out_dir, "metrics.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[0].split(",") == METRICS_HEADER
        assert len(lines) == 1 + 3

        with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as f:
            data = json.load(f)
        assert data["version"] == 1
        assert data["regime"] == "hatl" and data["task"] == "s2g2t"
        assert data["epochs_run"] == 3
        assert data["best_epoch"] == report.best_epoch
        assert 1 <= data["best_epoch"] <= 3
        assert set(data["final"]) == {"dev", "test"}
        assert set(REPORT_KEYS) <= set(data["final"]["test"])
        assert "gloss_wer" in data["final"]["test"]
        assert len(data["timing"]["epoch_seconds"]) == 3

        with open(os.path.join(out_dir, "ref.txt"), encoding="utf-8") as f:
            refs = [tuple(int(t) for t in line.split()) for line in f.read().splitlines()]
        assert refs == [r.text for r in tiny_dataset["test"]]

        events = read_events(os.path.join(out_dir, "events.tsv"))
        assert [[e.epoch, e.event, e.detail] for e in events] == data["events"]
        assert events[0].event == "new_best"

    def test_without_out_dir(self, tiny_config, tiny_dataset, tmp_path):
        cwd = os.getcwd()
        os.chdir(tmp_path)
        try:
            report = run_training(tiny_config, tiny_dataset, out_dir="")
        finally:
            os.chdir(cwd)
        assert os.listdir(tmp_path) == []
        assert len(report.epochs) == 3

    def test_s2t(self, tiny_config, tiny_dataset, out_dir):
        report = _train(tiny_config, tiny_dataset, out_dir, lines=["run.task = s2t"])
        assert all(e.losses["loss_ctc"] == 0.0 for e in report.epochs)
        assert "gloss_wer" not in report.final["test"]
        assert all("ctc" not in e.dev for e in report.epochs)

    def test_deterministic(self, tiny_config, tiny_dataset, tmp_path):
        first_dir, second_dir = str(tmp_path / "a"), str(tmp_path / "b")
        first = _train(tiny_config, tiny_dataset, first_dir)
        second = _train(tiny_config.copy(), tiny_dataset, second_dir)
        assert first.to_dict(include_timing=False) == second.to_dict(include_timing=False)
        for name in ("metrics.csv", "losses.csv", "events.tsv", "hyp.txt", "report.json"):
            with open(os.path.join(first_dir, name), "rb") as a, open(os.path.join(second_dir, name), "rb") as b:
                if name == "report.json":
                    left, right = json.load(a), json.load(b)
                    left.pop("timing"), right.pop("timing")
                    assert left == right
                else:
                    assert a.read() == b.read(), name


class TestEvaluation:
    def test_references_as_hypotheses(self, tiny_config, tiny_dataset, tiny_model):
        records = tiny_dataset["test"]
        report = evaluate_model(tiny_model, records, tiny_config, reference_as_hypothesis=True)
        assert report["bleu1"] == 1.0
        assert report["rouge_l"] == pytest.approx(1.0)
        expected = 1.0 if any(len(r.text) >= 4 for r in records) else 0.0
        assert report["bleu4"] == pytest.approx(expected)

    def test_unknown_decoder(self, tiny_config, tiny_dataset, tiny_model):
        with pytest.raises(ConfigError):
            evaluate_model(tiny_model, tiny_dataset["dev"], tiny_config, decoder="sampling")

    def test_checkpoint_matches_training(self, tiny_config, tiny_dataset, out_dir, tmp_path):
        report = _train(tiny_config, tiny_dataset, out_dir)
        eval_dir = str(tmp_path / "eval")
        result = evaluate(os.path.join(out_dir, "best.ckpt"), "test", tiny_config, tiny_dataset, eval_dir)
        for key, value in report.final["test"].items():
            assert result[key] == pytest.approx(value, abs=1e-12), key
        with open(os.path.join(eval_dir, "hyp.txt"), encoding="utf-8") as a, \
                open(os.path.join(out_dir, "hyp.txt"), encoding="utf-8") as b:
            assert a.read() == b.read()

    def test_evaluate_unknown_split(self, tiny_config, tiny_dataset, out_dir):
        _train(tiny_config, tiny_dataset, out_dir, "classical")
        with pytest.raises(ConfigError):
            evaluate(os.path.join(out_dir, "best.ckpt"), "holdout", tiny_config, tiny_dataset)

    def test_parallel_decoding_matches_serial(self, tiny_config, tiny_dataset, tiny_model):
        serial = evaluate_model(tiny_model, tiny_dataset["dev"], tiny_config)
        tiny_config.apply_lines(["run.single_thread = false", "run.workers = 3"])
        parallel = evaluate_model(tiny_model, tiny_dataset["dev"], tiny_config)
        assert serial == pytest.approx(parallel)


class TestPretrain:
    def test_deterministic_backbone(self, tiny_config, tiny_dataset, tmp_path):
        path = str(tmp_path / "backbone.ckpt")
        first, report = pretrain_backbone(tiny_config, tiny_dataset, out_path=path, out_dir=str(tmp_path))
        second, _ = pretrain_backbone(tiny_config, tiny_dataset)
        assert list(first.params) == list(second.params)
        assert all(name.startswith("backbone.") for name in first.params)
        for name, value in first.params.items():
            assert np.array_equal(value, second.params[name]), name
        assert 1 <= report.best_epoch <= 2
        assert 0.0 <= report.dev_accuracy <= 1.0
        assert os.path.exists(path)
        assert os.path.exists(os.path.join(str(tmp_path), "pretrain.csv"))

    def test_pretrained_backbone_is_loaded(self, tiny_config, tiny_dataset, out_dir):
        backbone, _ = pretrain_backbone(tiny_config, tiny_dataset)
        tiny_config.set_config_value("run", "regime", "classical")
        run_training(tiny_config, tiny_dataset, pretrained=backbone, out_dir=out_dir)
        params = load_checkpoint(os.path.join(out_dir, "best.ckpt")).params
        for name, value in backbone.params.items():
            assert np.array_equal(params[name], value), name

    def test_pretraining_learns(self, tiny_config, tiny_dataset):
        tiny_config.apply_lines(["pretrain.epochs = 6", "pretrain.patience = 6"])
        _, report = pretrain_backbone(tiny_config, tiny_dataset)
        losses = [e["loss_bb"] for e in report.epochs]
        assert losses[-1] < losses[0]


def test_comparison_row():
    row = ComparisonRow("hatl", "s2t", [0.1, 0.2, 0.3])
    assert row.mean == pytest.approx(0.2)
    assert row.std == pytest.approx(0.1)
    assert ComparisonRow("full", "s2t", [0.5]).std == 0.0
