#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
优化器模块
AdamW（解耦权重衰减）+ 分层学习率衰减(LLRD) + 按步数的线性预热
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import torch

from hatl_lab.model.layered_model import LayeredModel, TRANSLATION_GROUP
from hatl_lab.utils.errors import ConfigError, NumericError
from hatl_lab.utils.logger import get_logger

logger = get_logger("Optimizer", module="training.optim")

# 翻译模型内部按编码器侧/解码器侧分配学习率
_DECODER_PREFIXES = ("text_embedding.", "text_position.", "decoder.", "text_head.")


@dataclass(frozen=True)
class OptimizerConfig:
    """优化器超参数"""

    lr_encoder: float = 5e-5
    lr_decoder: float = 1e-4
    lr_backbone: float = 1e-5
    llrd_alpha: float = 0.5
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_min_steps: int = 200
    warmup_fraction: float = 0.02
    clip_norm: float = 0.0

    def __post_init__(self):
        for name in ("lr_encoder", "lr_decoder", "lr_backbone", "lr_scale", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} 必须为正数: {getattr(self, name)}")
        if not 0.0 < self.llrd_alpha <= 1.0:
            raise ConfigError(f"llrd_alpha 必须在 (0, 1] 内: {self.llrd_alpha}")
        if self.weight_decay < 0 or self.clip_norm < 0 or self.warmup_min_steps < 1:
            raise ConfigError("weight_decay/clip_norm 不能为负，warmup_min_steps 至少为1")

    @classmethod
    def from_config(cls, config_manager) -> "OptimizerConfig":
        values = {key: config_manager.get_config_value("optimizer", key)
                  for key in cls.__dataclass_fields__}
        return cls(**values)


def warmup_steps(total_steps: int, min_steps: int = 200, fraction: float = 0.02) -> int:
    """预热步数 max(min_steps, ⌈fraction × 总训练步数⌉)"""
    return max(int(min_steps), int(math.ceil(fraction * total_steps - 1e-9)))


def warmup_multiplier(step_index: int, warmup: int) -> float:
    """
    线性预热系数

    参数:
        step_index: 第几次优化步（从1开始）
        warmup: 预热步数

    返回:
        float: step_index / warmup，封顶为1
    """
    if step_index < 1:
        raise ConfigError(f"step_index 从1开始计数: {step_index}")
    return min(1.0, step_index / float(warmup))


def layer_learning_rate(m: int, n: int, base_lr: float, alpha: float) -> float:
    """骨干第m层学习率：base_lr · α^(n−m)，距翻译模型越远越小"""
    return base_lr * alpha ** (n - m)


def group_learning_rates(n_layers: int, config: OptimizerConfig) -> Dict[str, float]:
    """所有优化器分组的基础学习率（未乘预热系数）"""
    rates = {
        f"L{m}": layer_learning_rate(m, n_layers, config.lr_backbone, config.llrd_alpha) * config.lr_scale
        for m in range(1, n_layers + 1)
    }
    rates["t.encoder"] = config.lr_encoder * config.lr_scale
    rates["t.decoder"] = config.lr_decoder * config.lr_scale
    return rates


def _split_translation(params: List[Tuple[str, torch.nn.Parameter]]):
    encoder_side = [(n, p) for n, p in params if not n.startswith(_DECODER_PREFIXES)]
    decoder_side = [(n, p) for n, p in params if n.startswith(_DECODER_PREFIXES)]
    return encoder_side, decoder_side


class LLRDOptimizer:
    """
    包装 torch.optim.AdamW：只为可训练集合中的参数建立状态，
    每一步按全局步数设置预热后的学习率
    """

    def __init__(self, model: LayeredModel, trainable: Iterable[str], config: OptimizerConfig,
                 warmup: int, start_step: int = 0):
        """
        参数:
            model: 分层模型
            trainable: 可训练组集合 U
            config: 优化器配置
            warmup: 预热步数
            start_step: 已完成的全局步数（重建优化器时延续预热进度）
        """
        self.config = config
        self.warmup = warmup
        self.step_count = start_step
        self.trainable = frozenset(trainable)

        groups = model.parameter_groups()
        unknown = self.trainable - set(groups)
        if unknown:
            raise ConfigError(f"未知的参数组: {sorted(unknown)}")
        rates = group_learning_rates(model.config.layers, config)

        param_groups = []
        self._name_of: Dict[int, str] = {}
        for group_name, params in groups.items():
            if group_name not in self.trainable:
                continue
            if group_name == TRANSLATION_GROUP:
                encoder_side, decoder_side = _split_translation(params)
                parts = [("t.encoder", encoder_side), ("t.decoder", decoder_side)]
            else:
                parts = [(group_name, params)]
            for part_name, part_params in parts:
                if not part_params:
                    continue
                self._name_of.update((id(p), n) for n, p in part_params)
                param_groups.append({
                    "params": [p for _, p in part_params],
                    "lr": rates[part_name],
                    "base_lr": rates[part_name],
                    "name": part_name,
                })
        if not param_groups:
            raise ConfigError("可训练集合中没有任何参数")

        self.optimizer = torch.optim.AdamW(
            param_groups,
            betas=(config.beta1, config.beta2),
            eps=config.eps,
            weight_decay=config.weight_decay,
        )

    @property
    def learning_rates(self) -> Dict[str, float]:
        """各分组的基础学习率"""
        return {g["name"]: g["base_lr"] for g in self.optimizer.param_groups}

    def parameters(self) -> List[torch.nn.Parameter]:
        return [p for g in self.optimizer.param_groups for p in g["params"]]

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def step(self) -> None:
        """执行一次AdamW更新，冻结组不在优化器中因此不会被触碰"""
        bad = [self._name_of[id(p)] for p in self.parameters()
               if p.grad is not None and not torch.isfinite(p.grad).all()]
        if bad:
            raise NumericError(f"梯度出现NaN/Inf，涉及参数: {bad[:5]}（共 {len(bad)} 个）")
        if self.config.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.parameters(), self.config.clip_norm)

        multiplier = warmup_multiplier(self.step_count + 1, self.warmup)
        for group in self.optimizer.param_groups:
            group["lr"] = group["base_lr"] * multiplier
        self.optimizer.step()
        self.step_count += 1

    # ------------------------------------------------------------------
    # 状态序列化（写入检查点）
    # ------------------------------------------------------------------
    def state_arrays(self) -> Tuple[Dict[str, torch.Tensor], Dict[str, object]]:
        """
        导出一阶/二阶矩

        返回:
            (arrays, meta): 以 "exp_avg/参数名"、"exp_avg_sq/参数名" 命名的数组，
            以及步数等元数据
        """
        arrays = {}
        steps = {}
        for p in self.parameters():
            state = self.optimizer.state.get(p)
            if not state:
                continue
            name = self._name_of[id(p)]
            arrays[f"exp_avg/{name}"] = state["exp_avg"].detach().clone()
            arrays[f"exp_avg_sq/{name}"] = state["exp_avg_sq"].detach().clone()
            steps[name] = float(state["step"])
        meta = {"step_count": self.step_count, "warmup": self.warmup,
                "trainable": sorted(self.trainable), "param_steps": steps}
        return arrays, meta

    def load_state_arrays(self, arrays: Dict[str, torch.Tensor], meta: Dict[str, object]) -> None:
        """恢复 state_arrays 导出的状态"""
        self.step_count = int(meta["step_count"])
        steps = meta.get("param_steps", {})
        for p in self.parameters():
            name = self._name_of[id(p)]
            if name not in steps:
                continue
            self.optimizer.state[p] = {
                "step": torch.tensor(float(steps[name])),
                "exp_avg": torch.as_tensor(arrays[f"exp_avg/{name}"]).to(p.dtype).clone(),
                "exp_avg_sq": torch.as_tensor(arrays[f"exp_avg_sq/{name}"]).to(p.dtype).clone(),
            }


def build_optimizer(model: LayeredModel, trainable: Iterable[str], config: OptimizerConfig,
                    total_steps: int, start_step: int = 0) -> LLRDOptimizer:
    """
    按分层学习率重建优化器：新激活组的矩估计从零开始

    参数:
        model: 分层模型
        trainable: 可训练组集合 U
        config: 优化器配置
        total_steps: 计划的总训练步数，用于计算预热步数
        start_step: 已完成的全局步数

    返回:
        LLRDOptimizer
    """
    warmup = warmup_steps(total_steps, config.warmup_min_steps, config.warmup_fraction)
    optimizer = LLRDOptimizer(model, trainable, config, warmup, start_step)
    logger.debug("优化器已重建", groups=optimizer.learning_rates, warmup=warmup, start_step=start_step)
    return optimizer
