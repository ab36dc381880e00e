#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""共享的测试夹具：极小的配置、数据集与模型"""

import os

import pytest
import torch

from hatl_lab.core.config_manager import ConfigManager
from hatl_lab.data.synthetic import DatasetSpec, generate_dataset
from hatl_lab.model.layered_model import ModelConfig, build_model

TINY_LINES = [
    "run.max_epochs = 3",
    "run.batch_size = 8",
    "data.gloss_vocab = 5",
    "data.function_words = 1",
    "data.pretrain_samples = 40",
    "data.train_samples = 24",
    "data.dev_samples = 8",
    "data.test_samples = 8",
    "data.min_gloss_len = 2",
    "data.max_gloss_len = 3",
    "data.min_duration = 2",
    "data.max_duration = 3",
    "data.feature_dim = 6",
    "data.noise = 0.05",
    "data.remap_fraction = 0.2",
    "data.seed = 3",
    "model.layers = 3",
    "model.backbone_dim = 8",
    "model.hidden = 8",
    "model.encoder_layers = 1",
    "model.decoder_layers = 1",
    "model.heads = 2",
    "model.ff_dim = 16",
    "model.dropout = 0.0",
    "model.max_text_len = 12",
    "optimizer.lr_scale = 100.0",
    "optimizer.warmup_min_steps = 1",
    "decode.beam_width = 2",
    "decode.max_len = 8",
    "pretrain.epochs = 2",
    "pretrain.batch_size = 16",
    "pretrain.dev_fraction = 0.25",
]


def tiny_config_manager() -> ConfigManager:
    manager = ConfigManager()
    manager.apply_lines(TINY_LINES, source="tiny")
    return manager


@pytest.fixture(autouse=True)
def single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    return tiny_config_manager()


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(DatasetSpec.from_config(tiny_config_manager()))


@pytest.fixture
def tiny_model_config(tiny_dataset):
    return ModelConfig.from_config(tiny_config_manager(), tiny_dataset.gloss_vocab,
                                   tiny_dataset.text_vocab, tiny_dataset.feature_dim)


@pytest.fixture
def tiny_model(tiny_model_config):
    return build_model(tiny_model_config, seed=0)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "run"
    return str(path)


def slow_enabled() -> bool:
    return os.environ.get("HATL_RUN_SLOW") == "1"
