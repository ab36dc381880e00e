#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""AdamW + 分层学习率衰减 + 线性预热测试"""

import dataclasses

import pytest
import torch

from hatl_lab.data.batching import make_batch
from hatl_lab.model.layered_model import build_model
from hatl_lab.training.optim import (
    OptimizerConfig, build_optimizer, group_learning_rates, layer_learning_rate,
    warmup_multiplier, warmup_steps,
)
from hatl_lab.utils.errors import ConfigError, NumericError


def _loss(model, batch):
    out = model(batch.frames, batch.text_in, batch.frame_pad, batch.text_pad)
    return out["text_logits"].pow(2).mean() + out["bb_frame_logits"].pow(2).mean()


class TestSchedule:
    def test_layer_rates_for_ten_layers(self):
        rates = group_learning_rates(10, OptimizerConfig())
        for m in range(1, 11):
            depth = 10 - m
            assert rates[f"L{m}"] == pytest.approx(1e-5 * 0.5 ** depth, rel=1e-15)
        assert rates["t.encoder"] == 5e-5
        assert rates["t.decoder"] == 1e-4

    def test_lr_scale(self):
        rates = group_learning_rates(3, OptimizerConfig(lr_scale=10.0))
        assert rates["L3"] == pytest.approx(1e-4)
        assert rates["t.decoder"] == pytest.approx(1e-3)

    def test_layer_learning_rate(self):
        assert layer_learning_rate(10, 10, 1e-5, 0.5) == 1e-5
        assert layer_learning_rate(8, 10, 1e-5, 0.5) == pytest.approx(2.5e-6)

    def test_warmup(self):
        assert warmup_steps(1000) == 200
        assert warmup_steps(20000) == 400
        assert warmup_multiplier(1, 200) == pytest.approx(0.005)
        assert warmup_multiplier(200, 200) == 1.0
        assert warmup_multiplier(500, 200) == 1.0
        with pytest.raises(ConfigError):
            warmup_multiplier(0, 200)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(llrd_alpha=0.0)
        with pytest.raises(ConfigError):
            OptimizerConfig(lr_backbone=-1.0)


class TestLLRDOptimizer:
    def test_group_rates_by_inspection(self, tiny_model_config):
        model = build_model(dataclasses.replace(tiny_model_config, layers=10), seed=0)
        optimizer = build_optimizer(model, model.group_names(), OptimizerConfig(), total_steps=100)
        rates = optimizer.learning_rates
        assert set(rates) == {f"L{m}" for m in range(1, 11)} | {"t.encoder", "t.decoder"}
        assert rates["L1"] == pytest.approx(1e-5 / 512, rel=1e-15)
        assert rates["L10"] == 1e-5
        assert rates["t.encoder"] == 5e-5
        assert rates["t.decoder"] == 1e-4

    def test_frozen_groups_untouched(self, tiny_model, tiny_dataset):
        tiny_model.set_trainable({"t", "L3"})
        before = {n: p.detach().clone() for n, p in tiny_model.named_parameters()}
        optimizer = build_optimizer(tiny_model, tiny_model.trainable_groups,
                                    OptimizerConfig(lr_scale=100.0, warmup_min_steps=1), total_steps=10)
        batch = make_batch(tiny_dataset["train"][:4])
        for _ in range(3):
            optimizer.zero_grad()
            _loss(tiny_model, batch).backward()
            optimizer.step()
        for name, p in tiny_model.named_parameters():
            if name.startswith(("backbone.layers.0.", "backbone.layers.1.")):
                assert torch.equal(p, before[name]), name
        assert not torch.equal(tiny_model.backbone.layers[2].affine.weight, before["backbone.layers.2.affine.weight"])
        assert not torch.equal(tiny_model.text_head.weight, before["text_head.weight"])

    def test_warmup_continues_after_rebuild(self, tiny_model, tiny_dataset):
        config = OptimizerConfig(warmup_min_steps=10)
        optimizer = build_optimizer(tiny_model, {"t"}, config, total_steps=100, start_step=4)
        assert optimizer.step_count == 4
        optimizer.zero_grad()
        _loss(tiny_model, make_batch(tiny_dataset["train"][:2])).backward()
        optimizer.step()
        assert optimizer.step_count == 5
        lrs = {g["name"]: g["lr"] for g in optimizer.optimizer.param_groups}
        assert lrs["t.decoder"] == pytest.approx(1e-4 * 5 / 10)

    def test_nan_gradient(self, tiny_model, tiny_dataset):
        optimizer = build_optimizer(tiny_model, {"t"}, OptimizerConfig(), total_steps=10)
        optimizer.zero_grad()
        _loss(tiny_model, make_batch(tiny_dataset["train"][:2])).backward()
        tiny_model.text_head.bias.grad[0] = float("nan")
        with pytest.raises(NumericError):
            optimizer.step()

    def test_unknown_group(self, tiny_model):
        with pytest.raises(ConfigError):
            build_optimizer(tiny_model, {"t", "L9"}, OptimizerConfig(), total_steps=10)

    def test_state_round_trip(self, tiny_model_config, tiny_dataset):
        batch = make_batch(tiny_dataset["train"][:4])
        config = OptimizerConfig(warmup_min_steps=1)

        def run(model, optimizer, steps):
            for _ in range(steps):
                optimizer.zero_grad()
                _loss(model, batch).backward()
                optimizer.step()

        reference = build_model(tiny_model_config, seed=1)
        ref_opt = build_optimizer(reference, reference.group_names(), config, total_steps=10)
        run(reference, ref_opt, 3)

        model = build_model(tiny_model_config, seed=1)
        opt = build_optimizer(model, model.group_names(), config, total_steps=10)
        run(model, opt, 2)
        arrays, meta = opt.state_arrays()
        resumed = build_optimizer(model, model.group_names(), config, total_steps=10)
        resumed.load_state_arrays(arrays, meta)
        run(model, resumed, 1)

        for (name, a), (_, b) in zip(reference.named_parameters(), model.named_parameters()):
            assert torch.equal(a, b), name
