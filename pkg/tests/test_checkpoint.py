#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""检查点二进制格式测试"""

import dataclasses
import json
import os
import struct
from collections import OrderedDict

import numpy as np
import pytest
import torch

from hatl_lab.core.checkpoint import (
    MAGIC, Checkpoint, decode_arrays, encode_arrays, load_checkpoint, load_model, model_checkpoint,
    restore_rng_state, rng_state, save_checkpoint,
)
from hatl_lab.core.controller import ControllerConfig, HATLController
from hatl_lab.data.batching import make_batch
from hatl_lab.model.layered_model import build_model
from hatl_lab.training.optim import OptimizerConfig, build_optimizer
from hatl_lab.utils.errors import CheckpointError


def _trained_optimizer(model, dataset):
    optimizer = build_optimizer(model, ["L3", "t"], OptimizerConfig(lr_scale=100.0), total_steps=10)
    batch = make_batch(dataset["train"][:4])
    for _ in range(2):
        optimizer.zero_grad()
        out = model(batch.frames, batch.text_in, batch.frame_pad, batch.text_pad)
        out["text_logits"].pow(2).mean().backward()
        optimizer.step()
    return optimizer


class TestArrays:
    def test_encode_decode(self):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "empty": np.zeros((0, 4))}
        decoded = decode_arrays(encode_arrays(arrays))
        assert list(decoded) == ["a", "empty"]
        assert np.array_equal(decoded["a"], arrays["a"])
        assert decoded["empty"].shape == (0, 4)

    def test_tensor_input(self):
        tensor = torch.tensor([[1.0, -0.0], [float("1e-300"), 3.0]], dtype=torch.float64)
        decoded = decode_arrays(encode_arrays({"t": tensor}))
        assert decoded["t"].tobytes() == tensor.numpy().tobytes()


class TestFile:
    def test_round_trip_full(self, tiny_model, tiny_dataset, tmp_path):
        optimizer = _trained_optimizer(tiny_model, tiny_dataset)
        controller = HATLController(ControllerConfig(), 3)
        controller.observe_epoch({"ctc": 0.2, "bleu4": 0.1})
        path = str(tmp_path / "model.ckpt")
        original = model_checkpoint(tiny_model, optimizer=optimizer, controller=controller,
                                    meta={"epoch": 2})
        save_checkpoint(path, original)
        loaded = load_checkpoint(path)

        assert list(loaded.params) == [n for n, _ in tiny_model.named_parameters()]
        for name, value in original.params.items():
            assert loaded.params[name].tobytes() == value.tobytes()
        assert set(loaded.optimizer) == set(original.optimizer)
        assert loaded.optimizer_meta == json.loads(json.dumps(original.optimizer_meta))
        assert loaded.controller == json.loads(json.dumps(original.controller))
        assert loaded.meta["epoch"] == 2
        assert loaded.model_config == tiny_model.config
        assert loaded.rng == original.rng

    def test_load_model_is_bitwise(self, tiny_model, tmp_path):
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model_checkpoint(tiny_model))
        model = load_model(load_checkpoint(path), tiny_model.config)
        for (name, a), (_, b) in zip(tiny_model.named_parameters(), model.named_parameters()):
            assert torch.equal(a, b), name

    def test_optimizer_state_restores(self, tiny_model, tiny_dataset, tmp_path):
        optimizer = _trained_optimizer(tiny_model, tiny_dataset)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model_checkpoint(tiny_model, optimizer=optimizer))
        loaded = load_checkpoint(path)
        fresh = build_optimizer(tiny_model, ["L3", "t"], OptimizerConfig(lr_scale=100.0), total_steps=10)
        fresh.load_state_arrays({k: torch.from_numpy(v) for k, v in loaded.optimizer.items()},
                                loaded.optimizer_meta)
        assert fresh.step_count == 2
        arrays, _ = optimizer.state_arrays()
        restored, _ = fresh.state_arrays()
        for key, value in arrays.items():
            assert torch.equal(value, restored[key]), key

    def test_backbone_only_checkpoint(self, tiny_model, tiny_model_config, tmp_path):
        path = str(tmp_path / "backbone.ckpt")
        save_checkpoint(path, model_checkpoint(tiny_model, prefix="backbone.", include_rng=False))
        loaded = load_checkpoint(path)
        assert all(name.startswith("backbone.") for name in loaded.params)
        assert loaded.rng is None
        with pytest.raises(CheckpointError):
            load_model(loaded)
        other = build_model(tiny_model_config, seed=3)
        other.load_arrays({k: torch.from_numpy(v) for k, v in loaded.params.items()}, prefix="backbone.")
        assert torch.equal(other.backbone.layers[1].affine.weight, tiny_model.backbone.layers[1].affine.weight)

    def test_config_mismatch(self, tiny_model, tmp_path):
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model_checkpoint(tiny_model))
        with pytest.raises(CheckpointError):
            load_model(load_checkpoint(path), dataclasses.replace(tiny_model.config, layers=4))

    def test_missing_model_config(self):
        with pytest.raises(CheckpointError):
            Checkpoint().model_config


class TestCorruption:
    @pytest.fixture
    def saved(self, tiny_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), model_checkpoint(tiny_model))
        return path

    def test_bad_magic(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(b"NOTACKPT" + data[len(MAGIC):])
        with pytest.raises(CheckpointError):
            load_checkpoint(str(saved))

    def test_bad_version(self, saved):
        data = bytearray(saved.read_bytes())
        data[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", 99)
        saved.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(str(saved))

    @pytest.mark.parametrize("keep", [4, 12, 40, 500, -1])
    def test_truncated(self, saved, keep):
        data = saved.read_bytes()
        saved.write_bytes(data[:keep] if keep > 0 else data[:-1])
        with pytest.raises(CheckpointError):
            load_checkpoint(str(saved))

    def test_trailing_data(self, saved):
        saved.write_bytes(saved.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(saved))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nope.ckpt"))


def test_rng_state_round_trip():
    torch.manual_seed(5)
    state = json.loads(json.dumps(rng_state()))
    expected = torch.rand(4)
    torch.manual_seed(123)
    restore_rng_state(state)
    assert torch.equal(torch.rand(4), expected)


GOLDEN_CKPT = os.path.join(os.path.dirname(__file__), "fixtures", "golden.ckpt")


class TestGoldenFile:
    def test_decodes_known_values(self):
        loaded = load_checkpoint(GOLDEN_CKPT)
        assert list(loaded.params) == ["a", "b.w"]
        assert loaded.params["a"].shape == (2,)
        assert loaded.params["a"].tolist() == [1.0, -0.5]
        assert loaded.params["b.w"].tolist() == [[2.0, 0.25], [3.0, -1.5]]
        assert loaded.meta == {"epoch": 3, "kind": "pretrain"}
        assert not loaded.optimizer
        assert loaded.optimizer_meta is None and loaded.controller is None and loaded.rng is None

    def test_writer_emits_same_bytes(self, tmp_path):
        path = str(tmp_path / "again.ckpt")
        checkpoint = Checkpoint(
            params=OrderedDict([("a", np.array([1.0, -0.5])), ("b.w", np.array([[2.0, 0.25], [3.0, -1.5]]))]),
            meta={"kind": "pretrain", "epoch": 3},
        )
        save_checkpoint(path, checkpoint)
        with open(path, "rb") as a, open(GOLDEN_CKPT, "rb") as b:
            assert a.read() == b.read()
