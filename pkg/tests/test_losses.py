#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""多目标损失测试：各分量的定义、权重与有限差分梯度"""

import math

import numpy as np
import pytest
import torch

from hatl_lab.core.config_manager import ConfigManager
from hatl_lab.core.trainer import compute_losses
from hatl_lab.data.batching import make_batch
from hatl_lab.training.losses import LossWeights, composite_loss, cross_entropy_text, framewise_ce
from hatl_lab.utils.errors import ArgumentError, ConfigError, NumericError


class TestParts:
    def test_cross_entropy_ignores_padding(self):
        logits = torch.randn(2, 3, 5, dtype=torch.float64)
        targets = torch.tensor([[1, 2, 0], [3, 4, 2]])
        pad = torch.tensor([[False, False, True], [False, False, False]])
        log_probs = torch.log_softmax(logits, dim=-1)
        expected = -(log_probs[0, 0, 1] + log_probs[0, 1, 2] + log_probs[1, 0, 3]
                     + log_probs[1, 1, 4] + log_probs[1, 2, 2]) / 5
        assert float(cross_entropy_text(logits, targets, pad)) == pytest.approx(float(expected), abs=1e-12)

    def test_cross_entropy_all_padding(self):
        with pytest.raises(ArgumentError):
            cross_entropy_text(torch.zeros(1, 2, 3, dtype=torch.float64), torch.zeros(1, 2, dtype=torch.long),
                               torch.ones(1, 2, dtype=torch.bool))

    def test_framewise_uses_mask(self):
        logits = torch.log(torch.tensor([[[0.5, 0.5], [0.9, 0.1], [0.2, 0.8]]], dtype=torch.float64))
        labels = torch.tensor([[1, 0, 1]])
        mask = torch.tensor([[True, False, True]])
        expected = -(math.log(0.5) + math.log(0.8)) / 2
        assert float(framewise_ce(logits, labels, mask)) == pytest.approx(expected, abs=1e-12)

    def test_framewise_empty_mask(self):
        with pytest.raises(ConfigError):
            framewise_ce(torch.zeros(1, 2, 3, dtype=torch.float64), torch.zeros(1, 2, dtype=torch.long),
                         torch.zeros(1, 2, dtype=torch.bool))


class TestComposite:
    def test_weighted_sum(self):
        parts = {"ctc": torch.tensor(2.0), "ce": torch.tensor(3.0), "enc": torch.tensor(4.0), "bb": torch.tensor(5.0)}
        total, report = composite_loss(parts, LossWeights(1.0, 1.0, 0.5, 0.5))
        assert float(total) == pytest.approx(2.0 + 3.0 + 2.0 + 2.5)
        assert report.as_row() == {"loss_total": 9.5, "loss_ctc": 2.0, "loss_ce": 3.0,
                                   "loss_enc": 4.0, "loss_bb": 5.0}

    def test_zero_weight_drops_part(self):
        total, report = composite_loss({"ctc": torch.tensor(7.0), "ce": torch.tensor(1.0)},
                                       LossWeights(w_ctc=0.0, w_ce=1.0, w_enc=0.0, w_bb=0.0))
        assert float(total) == 1.0
        assert report.ctc == 7.0

    def test_non_finite(self):
        with pytest.raises(NumericError):
            composite_loss({"ce": torch.tensor(float("nan"))}, LossWeights())

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LossWeights(w_bb=-1.0)

    def test_s2t_forces_ctc_weight(self):
        manager = ConfigManager()
        manager.set_config_value("run", "task", "s2t")
        assert LossWeights.from_config(manager).w_ctc == 0.0


class TestTrainingLosses:
    def test_ctc_skipped_when_weight_zero(self, tiny_model, tiny_dataset, monkeypatch):
        import hatl_lab.core.trainer as trainer

        calls = []
        original = trainer.batch_ctc_loss

        def counting(*args):
            calls.append(1)
            return original(*args)

        monkeypatch.setattr(trainer, "batch_ctc_loss", counting)
        batch = make_batch(tiny_dataset["train"][:3])
        compute_losses(tiny_model, batch, LossWeights(w_ctc=0.0))
        assert calls == []
        compute_losses(tiny_model, batch, LossWeights(w_ctc=1.0))
        assert calls == [1]

    def test_padding_does_not_change_loss(self, tiny_model, tiny_dataset):
        records = tiny_dataset["train"][:3]
        tiny_model.train()
        a, _ = compute_losses(tiny_model, make_batch(records), LossWeights())
        b, _ = compute_losses(tiny_model, make_batch(records, extra_frame_pad=3, extra_text_pad=2), LossWeights())
        assert float(a) == pytest.approx(float(b), abs=1e-10)

    def test_gradients_match_finite_differences(self, tiny_model, tiny_dataset):
        batch = make_batch(tiny_dataset["train"][:3])
        weights = LossWeights(w_ctc=1.0, w_ce=1.0, w_enc=0.5, w_bb=0.5)
        tiny_model.train()
        tiny_model.zero_grad()
        total, _ = compute_losses(tiny_model, batch, weights)
        total.backward()

        rng = np.random.default_rng(0)
        step = 1e-6
        checked = 0
        for name, param in tiny_model.named_parameters():
            flat = param.data.view(-1)
            grad = param.grad.view(-1)
            for index in rng.choice(flat.numel(), size=min(8, flat.numel()), replace=False):
                index = int(index)
                original = float(flat[index])
                with torch.no_grad():
                    flat[index] = original + step
                    plus = float(compute_losses(tiny_model, batch, weights)[0])
                    flat[index] = original - step
                    minus = float(compute_losses(tiny_model, batch, weights)[0])
                    flat[index] = original
                numeric = (plus - minus) / (2 * step)
                assert float(grad[index]) == pytest.approx(numeric, rel=1e-5, abs=1e-8), (name, index)
                checked += 1
        assert checked >= 200
