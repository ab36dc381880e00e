#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
CTC对齐损失模块
在对数空间中用前向-后向递推精确计算CTC负对数似然及其对logits的梯度
"""

from typing import Sequence, Tuple, List

import numpy as np
import torch

from hatl_lab.utils.errors import ArgumentError, InfeasibleTargetError

BLANK = 0
NEG_INF = -np.inf


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """按行计算log-softmax（最大值平移）"""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def target_with_blank(target: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    在目标序列两侧及之间插入空白符

    参数:
        target: gloss序列 y_1..y_U（不含空白）

    返回:
        ext: 长度 2U+1 的扩展序列
        skip: skip[s] 为True表示状态s可以从 s-2 直接跳转
    """
    ext = [BLANK]
    skip = [False]
    for i, item in enumerate(target):
        ext.append(item)
        skip.append(i > 0 and target[i] != target[i - 1])
        ext.append(BLANK)
        skip.append(False)
    return np.asarray(ext, dtype=np.int64), np.asarray(skip, dtype=bool)


def min_frames(target: Sequence[int]) -> int:
    """对齐目标所需的最少帧数：U + 相邻重复对数"""
    repeats = sum(1 for a, b in zip(target[:-1], target[1:]) if a == b)
    return len(target) + repeats


def _check(lp: np.ndarray, target: Sequence[int]) -> None:
    if lp.ndim != 2:
        raise ArgumentError(f"帧概率矩阵必须是二维: shape={lp.shape}")
    if len(target) == 0:
        raise ArgumentError("gloss目标不能为空")
    n_symbols = lp.shape[1]
    for y in target:
        if not 1 <= int(y) < n_symbols:
            raise ArgumentError(f"gloss编号越界: {y}，合法范围 [1, {n_symbols - 1}]")
    required = min_frames(target)
    if lp.shape[0] < required:
        raise InfeasibleTargetError(lp.shape[0], required)


def ctc_forward(lp: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """
    前向递推

    参数:
        lp: G × (V+1) 对数概率
        target: gloss目标

    返回:
        np.ndarray: log_alpha，形状 G × (2U+1)，包含当前帧的发射概率
    """
    ext, skip = target_with_blank(target)
    frames, states = lp.shape[0], len(ext)
    log_alpha = np.full((frames, states), NEG_INF)
    log_alpha[0, 0] = lp[0, ext[0]]
    log_alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, frames):
        prev = log_alpha[t - 1]
        one = np.concatenate(([NEG_INF], prev[:-1]))
        two = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        two = np.where(skip, two, NEG_INF)
        log_alpha[t] = np.logaddexp(np.logaddexp(prev, one), two) + lp[t, ext]
    return log_alpha


def ctc_backward(lp: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """
    后向递推

    返回:
        np.ndarray: log_beta，形状 G × (2U+1)，不包含当前帧的发射概率，
        因此对任意帧t有 logsumexp(log_alpha[t] + log_beta[t]) = log P
    """
    ext, skip = target_with_blank(target)
    frames, states = lp.shape[0], len(ext)
    log_beta = np.full((frames, states), NEG_INF)
    log_beta[-1, -1] = 0.0
    log_beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        emit = log_beta[t + 1] + lp[t + 1, ext]
        one = np.concatenate((emit[1:], [NEG_INF]))
        two = np.concatenate((emit[2:], [NEG_INF, NEG_INF]))
        two = np.where(np.concatenate((skip[2:], [False, False])), two, NEG_INF)
        log_beta[t] = np.logaddexp(np.logaddexp(emit, one), two)
    return log_beta


def ctc_log_likelihood(lp: np.ndarray, target: Sequence[int]) -> float:
    """log P(Y|x)，对所有能折叠为目标的路径求和"""
    lp = log_softmax(lp)
    _check(lp, target)
    log_alpha = ctc_forward(lp, target)
    return float(np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2]))


def ctc_loss(lp: np.ndarray, target: Sequence[int]) -> float:
    """
    CTC负对数似然

    参数:
        lp: G × (V+1) 矩阵，第0列为空白符；传入logits或对数概率均可，
            内部先做log-softmax（对已归一化的输入是恒等变换）
        target: gloss目标 y_1..y_U

    返回:
        float: 非负有限的损失值
    """
    return -ctc_log_likelihood(lp, target)


def ctc_grad(logits: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """
    CTC损失对softmax前logits的梯度

    参数:
        logits: G × (V+1) 矩阵
        target: gloss目标

    返回:
        np.ndarray: 与logits同形状，softmax(z) - 后验占用率
    """
    lp = log_softmax(logits)
    _check(lp, target)
    ext, _ = target_with_blank(target)
    log_alpha = ctc_forward(lp, target)
    log_beta = ctc_backward(lp, target)
    log_p = np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2])

    occupancy = np.zeros_like(lp)
    state_post = np.exp(log_alpha + log_beta - log_p)
    for s, symbol in enumerate(ext):
        occupancy[:, symbol] += state_post[:, s]
    return np.exp(lp) - occupancy


class CTCLossFunction(torch.autograd.Function):
    """把numpy实现的前向-后向算法接入torch自动求导"""

    @staticmethod
    def forward(ctx, logits: torch.Tensor, target: Tuple[int, ...]) -> torch.Tensor:
        array = logits.detach().cpu().to(torch.float64).numpy()
        loss = ctc_loss(array, target)
        grad = ctc_grad(array, target)
        ctx.save_for_backward(torch.from_numpy(grad).to(dtype=logits.dtype, device=logits.device))
        return logits.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        grad, = ctx.saved_tensors
        return grad_output * grad, None


def ctc_loss_torch(logits: torch.Tensor, target: Sequence[int]) -> torch.Tensor:
    """单个样本的可微CTC损失，logits形状 G × (V+1)"""
    return CTCLossFunction.apply(logits, tuple(int(y) for y in target))


def batch_ctc_loss(gloss_logits: torch.Tensor, frame_lengths: Sequence[int],
                   targets: List[Sequence[int]]) -> torch.Tensor:
    """
    一个批次的平均CTC损失

    参数:
        gloss_logits: B × G_max × (V+1)
        frame_lengths: 每个样本的有效帧数，填充帧不参与
        targets: 每个样本的gloss目标
    """
    losses = [
        ctc_loss_torch(gloss_logits[i, :int(length)], target)
        for i, (length, target) in enumerate(zip(frame_lengths, targets))
    ]
    return torch.stack(losses).mean()
