#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""分层模型测试：参数分组、冻结、前向形状与快照"""

import dataclasses

import pytest
import torch

from hatl_lab.data.batching import make_batch
from hatl_lab.model.layered_model import ModelConfig, build_model, layer_tag
from hatl_lab.utils.errors import ArgumentError, CheckpointError, ConfigError


class TestGroups:
    def test_layer_tag(self):
        assert layer_tag("backbone.layers.0.affine.weight") == "L1"
        assert layer_tag("backbone.layers.9.temporal.weight") == "L10"
        assert layer_tag("decoder.layers.0.linear1.bias") == "t"
        assert layer_tag("bb_head.weight") == "t"
        with pytest.raises(ConfigError):
            layer_tag("backbone.extra")

    def test_group_names(self, tiny_model):
        assert tiny_model.group_names() == ["L1", "L2", "L3", "t"]
        groups = tiny_model.parameter_groups()
        assert [name for name, _ in groups["L1"]] == [
            "backbone.layers.0.affine.weight", "backbone.layers.0.affine.bias",
            "backbone.layers.0.temporal.weight",
        ]
        assert all(name.startswith("backbone.layers.2.") for name, _ in groups["L3"])
        assert sum(len(v) for v in groups.values()) == len(list(tiny_model.parameters()))

    def test_count_parameters(self, tiny_model):
        cfg = tiny_model.config
        first = cfg.input_dim * cfg.backbone_dim * 2 + cfg.backbone_dim
        assert tiny_model.count_parameters(["L1"]) == first
        inner = cfg.backbone_dim * cfg.backbone_dim * 2 + cfg.backbone_dim
        assert tiny_model.count_parameters(["L2"]) == inner
        total = sum(p.numel() for p in tiny_model.parameters())
        assert tiny_model.count_parameters() == total
        assert tiny_model.count_parameters(["t"]) == total - first - 2 * inner

    def test_set_trainable_requires_t(self, tiny_model):
        with pytest.raises(ConfigError):
            tiny_model.set_trainable(["L1", "L2"])
        with pytest.raises(ConfigError):
            tiny_model.set_trainable(["t", "L7"])

    def test_frozen_groups_get_no_gradient(self, tiny_model, tiny_dataset):
        tiny_model.set_trainable(["L3", "t"])
        assert tiny_model.trainable_groups == frozenset({"L3", "t"})
        batch = make_batch(tiny_dataset["train"][:4])
        out = tiny_model(batch.frames, batch.text_in, batch.frame_pad, batch.text_pad)
        (out["text_logits"].sum() + out["bb_frame_logits"].sum() + out["enc_gloss_logits"].sum()).backward()
        for group, params in tiny_model.parameter_groups().items():
            for name, param in params:
                if group in ("L1", "L2"):
                    assert not param.requires_grad
                    assert param.grad is None, name
                else:
                    assert param.requires_grad
                    assert param.grad is not None, name


class TestForward:
    def test_batch_shapes(self, tiny_model, tiny_dataset):
        cfg = tiny_model.config
        batch = make_batch(tiny_dataset["train"][:3])
        out = tiny_model(batch.frames, batch.text_in, batch.frame_pad, batch.text_pad)
        b, g = batch.frames.shape[:2]
        assert out["bb_frame_logits"].shape == (b, g, cfg.gloss_classes)
        assert out["enc_gloss_logits"].shape == (b, g, cfg.gloss_classes)
        assert out["text_logits"].shape == (b, batch.text_in.shape[1], cfg.text_vocab)
        assert out["text_logits"].dtype == torch.float64

    def test_single_sample(self, tiny_model, tiny_dataset):
        tiny_model.eval()
        record = tiny_dataset["dev"][0]
        frames = torch.as_tensor(record.frames, dtype=torch.float64)
        text_in = torch.tensor([1] + list(record.text), dtype=torch.long)
        single = tiny_model(frames, text_in)
        batched = tiny_model(frames.unsqueeze(0), text_in.unsqueeze(0))
        assert single["text_logits"].shape == (len(text_in), tiny_model.config.text_vocab)
        assert torch.allclose(single["text_logits"], batched["text_logits"][0])

    def test_constant_input_gives_constant_backbone_output(self, tiny_model):
        frames = torch.ones(1, 5, tiny_model.config.input_dim, dtype=torch.float64)
        features = tiny_model.backbone(frames)
        assert torch.allclose(features, features[:, :1].expand_as(features))

    def test_empty_frames(self, tiny_model):
        with pytest.raises(ArgumentError):
            tiny_model.encode(torch.zeros(1, 0, tiny_model.config.input_dim, dtype=torch.float64))

    def test_text_too_long(self, tiny_model):
        memory, _, _ = tiny_model.encode(torch.zeros(1, 3, tiny_model.config.input_dim,
                                                     dtype=torch.float64))
        text_in = torch.ones(1, tiny_model.config.max_text_len + 1, dtype=torch.long)
        with pytest.raises(ArgumentError):
            tiny_model.decode_step(memory, text_in)


class TestSnapshot:
    def test_restore_is_bitwise(self, tiny_model):
        snap = tiny_model.snapshot(epoch=4, metric=0.25)
        assert snap.epoch == 4 and snap.metric == 0.25
        with torch.no_grad():
            for p in tiny_model.parameters():
                p.add_(0.5)
        tiny_model.restore(snap)
        for name, p in tiny_model.named_parameters():
            assert torch.equal(p, snap.params[name])

    def test_snapshot_is_a_copy(self, tiny_model):
        snap = tiny_model.snapshot()
        with torch.no_grad():
            next(tiny_model.parameters()).add_(1.0)
        name, param = next(iter(tiny_model.named_parameters()))
        assert not torch.equal(param, snap.params[name])

    def test_build_is_deterministic(self, tiny_model_config):
        a = build_model(tiny_model_config, seed=5)
        b = build_model(tiny_model_config, seed=5)
        c = build_model(tiny_model_config, seed=6)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name
        assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))

    def test_build_does_not_touch_global_rng(self, tiny_model_config):
        torch.manual_seed(11)
        expected = torch.rand(3)
        torch.manual_seed(11)
        build_model(tiny_model_config, seed=1)
        assert torch.equal(torch.rand(3), expected)

    def test_load_arrays_mismatch(self, tiny_model, tiny_model_config):
        arrays = dict(tiny_model.snapshot().params)
        arrays.pop("text_head.bias")
        with pytest.raises(CheckpointError):
            tiny_model.load_arrays(arrays)
        wider = build_model(dataclasses.replace(tiny_model_config, backbone_dim=12), seed=0)
        with pytest.raises(CheckpointError):
            tiny_model.load_arrays(wider.snapshot().params)

    def test_load_arrays_with_prefix(self, tiny_model, tiny_model_config):
        other = build_model(tiny_model_config, seed=9)
        backbone = {n: p for n, p in other.snapshot().params.items() if n.startswith("backbone.")}
        before = tiny_model.text_head.weight.detach().clone()
        tiny_model.load_arrays(backbone, prefix="backbone.")
        assert torch.equal(tiny_model.backbone.layers[0].affine.weight, other.backbone.layers[0].affine.weight)
        assert torch.equal(tiny_model.text_head.weight, before)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(layers=1)
    with pytest.raises(ConfigError):
        ModelConfig(hidden=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(text_vocab=3)
    assert ModelConfig(gloss_vocab=7).gloss_classes == 8
