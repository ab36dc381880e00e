#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
训练损失模块
加权多目标损失：CTC + 自回归交叉熵 + 编码器/骨干网络逐帧监督
"""

import math
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Union

import torch
import torch.nn.functional as F

from hatl_lab.utils.errors import ArgumentError, ConfigError, NumericError

LOSS_PARTS = ("ctc", "ce", "enc", "bb")

Scalar = Union[float, torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    """四个损失分量的权重"""

    w_ctc: float = 1.0
    w_ce: float = 1.0
    w_enc: float = 0.5
    w_bb: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0 or math.isnan(value):
                raise ConfigError(f"损失权重不能为负数: {name}={value}")

    @classmethod
    def from_config(cls, config_manager) -> "LossWeights":
        """从配置管理器读取权重，s2t任务强制 w_ctc = 0"""
        task = config_manager.get_config_value("run", "task")
        return cls(
            w_ctc=0.0 if task == "s2t" else config_manager.get_config_value("loss", "w_ctc"),
            w_ce=config_manager.get_config_value("loss", "w_ce"),
            w_enc=config_manager.get_config_value("loss", "w_enc"),
            w_bb=config_manager.get_config_value("loss", "w_bb"),
        )

    def weight(self, part: str) -> float:
        return getattr(self, f"w_{part}")


@dataclass
class LossReport:
    """加权总损失与各分量（未加权）的数值，用于日志"""

    total: float
    ctc: float = 0.0
    ce: float = 0.0
    enc: float = 0.0
    bb: float = 0.0

    def as_row(self) -> Dict[str, float]:
        return {"loss_total": self.total, "loss_ctc": self.ctc, "loss_ce": self.ce,
                "loss_enc": self.enc, "loss_bb": self.bb}


def cross_entropy_text(logits: torch.Tensor, targets: torch.Tensor,
                       pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    文本解码器的自回归交叉熵（教师强制）

    参数:
        logits: N × S × V_text
        targets: N × S 目标词编号
        pad_mask: N × S，True 表示填充位置，不计入求和与归一化

    返回:
        torch.Tensor: 对有效词元取平均的损失
    """
    if logits.shape[:2] != targets.shape:
        raise ArgumentError(f"logits与目标形状不一致: {tuple(logits.shape)} vs {tuple(targets.shape)}")
    valid = torch.ones_like(targets, dtype=torch.bool) if pad_mask is None else ~pad_mask
    count = int(valid.sum())
    if count == 0:
        raise ArgumentError("批次中全部为填充位置")
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return -(picked * valid).sum() / count


def framewise_ce(frame_logits: torch.Tensor, labels: torch.Tensor,
                 mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    逐帧交叉熵，编码器监督(L_enc)与骨干监督(L_bb)共用

    参数:
        frame_logits: ... × G × V 帧级logits
        labels: ... × G 帧级gloss标签
        mask: ... × G，True 表示属于对齐帧集合 M

    返回:
        torch.Tensor: M 上的平均负对数似然
    """
    selected = torch.ones_like(labels, dtype=torch.bool) if mask is None else mask
    count = int(selected.sum())
    if count == 0:
        raise ConfigError("对齐帧集合为空，无法计算逐帧监督损失")
    log_probs = F.log_softmax(frame_logits, dim=-1)
    picked = log_probs.gather(-1, labels.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return -(picked * selected).sum() / count


def composite_loss(parts: Dict[str, Scalar], weights: LossWeights):
    """
    加权多目标损失

    参数:
        parts: {ctc, ce, enc, bb} 中已计算的分量，缺失分量按0处理
        weights: 损失权重

    返回:
        (total, LossReport): 总损失（保持可微）与分量报告
    """
    total: Scalar = 0.0
    values = {}
    for name in LOSS_PARTS:
        part = parts.get(name)
        if part is None:
            values[name] = 0.0
            continue
        value = float(part.detach()) if isinstance(part, torch.Tensor) else float(part)
        if not math.isfinite(value):
            raise NumericError(f"损失分量不是有限值: {name}={value}")
        values[name] = value
        weight = weights.weight(name)
        if weight != 0.0:
            total = total + weight * part
    total_value = float(total.detach()) if isinstance(total, torch.Tensor) else float(total)
    return total, LossReport(total=total_value, **values)
