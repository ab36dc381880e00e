#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
批处理模块
按轮次确定性打乱样本，并把变长的帧序列与文本序列填充成批
"""

from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import torch

from hatl_lab.data.synthetic import SampleRecord
from hatl_lab.model.layered_model import BOS_ID, EOS_ID, PAD_ID
from hatl_lab.utils.errors import ArgumentError


@dataclass
class Batch:
    """
    一个填充后的批次

    frame_pad / text_pad 中 True 表示填充位置；label_mask 中 True 表示有效帧
    """

    ids: List[str]
    frames: torch.Tensor          # B × G_max × d_in
    frame_pad: torch.Tensor       # B × G_max
    frame_lengths: List[int]
    frame_labels: torch.Tensor    # B × G_max
    label_mask: torch.Tensor      # B × G_max
    glosses: List[Tuple[int, ...]]
    text_in: torch.Tensor         # B × (S_max+1)，BOS 开头
    text_out: torch.Tensor        # B × (S_max+1)，EOS 结尾
    text_pad: torch.Tensor        # B × (S_max+1)
    texts: List[Tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.ids)


def make_batch(records: Sequence[SampleRecord], extra_frame_pad: int = 0, extra_text_pad: int = 0) -> Batch:
    """
    把若干样本填充成一个批次

    参数:
        records: 样本列表
        extra_frame_pad: 额外追加的填充帧数（用于验证填充不影响损失）
        extra_text_pad: 额外追加的文本填充数

    返回:
        Batch
    """
    if not records:
        raise ArgumentError("批次不能为空")
    size = len(records)
    dim = records[0].frames.shape[1]
    max_frames = max(r.num_frames for r in records) + extra_frame_pad
    max_text = max(len(r.text) for r in records) + 1 + extra_text_pad

    frames = np.zeros((size, max_frames, dim), dtype=np.float64)
    frame_pad = np.ones((size, max_frames), dtype=bool)
    labels = np.zeros((size, max_frames), dtype=np.int64)
    text_in = np.full((size, max_text), PAD_ID, dtype=np.int64)
    text_out = np.full((size, max_text), PAD_ID, dtype=np.int64)
    text_pad = np.ones((size, max_text), dtype=bool)

    for i, record in enumerate(records):
        g = record.num_frames
        frames[i, :g] = record.frames
        frame_pad[i, :g] = False
        labels[i, :g] = record.frame_labels
        s = len(record.text) + 1
        text_in[i, :s] = (BOS_ID,) + tuple(record.text)
        text_out[i, :s] = tuple(record.text) + (EOS_ID,)
        text_pad[i, :s] = False

    frame_pad_t = torch.from_numpy(frame_pad)
    return Batch(
        ids=[r.id for r in records],
        frames=torch.from_numpy(frames),
        frame_pad=frame_pad_t,
        frame_lengths=[r.num_frames for r in records],
        frame_labels=torch.from_numpy(labels),
        label_mask=~frame_pad_t,
        glosses=[tuple(r.gloss) for r in records],
        text_in=torch.from_numpy(text_in),
        text_out=torch.from_numpy(text_out),
        text_pad=torch.from_numpy(text_pad),
        texts=[tuple(r.text) for r in records],
    )


def epoch_order(size: int, seed: int, epoch: int) -> np.ndarray:
    """某一轮的样本顺序，只由 (seed, epoch) 决定"""
    return np.random.default_rng([seed, epoch]).permutation(size)


def batch_iter(split: Sequence[SampleRecord], batch_size: int, seed: int, epoch: int = 0,
               shuffle: bool = True) -> Iterator[Batch]:
    """
    生成填充后的批次，所有样本恰好出现一次

    参数:
        split: 样本列表
        batch_size: 批大小，最后一批可以更小
        seed: 打乱种子
        epoch: 轮次，不同轮次得到不同但确定的顺序
        shuffle: 为False时保持原顺序

    返回:
        Iterator[Batch]
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size 至少为1: {batch_size}")
    order = epoch_order(len(split), seed, epoch) if shuffle else np.arange(len(split))
    for start in range(0, len(order), batch_size):
        yield make_batch([split[int(i)] for i in order[start:start + batch_size]])
