#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
配置管理器模块
负责管理实验配置：分组默认值、`group.key = value` 配置文件的读写、类型校验与组合检查
"""

import copy
import os
from typing import Any, Dict, Iterable, List, Optional

from hatl_lab.utils.errors import ConfigError
from hatl_lab.utils.logger import get_logger

logger = get_logger("ConfigManager", module="core.config_manager")

REGIMES = ("classical", "full", "hatl")
TASKS = ("s2t", "s2g2t")

# 随包发布的配置文件目录
CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "config")


class ConfigGroup:
    """配置分组类，用于组织相关配置"""

    def __init__(self, name: str, title: str, defaults: Dict[str, Any], description: str = None):
        """
        初始化配置分组

        参数:
            name: 分组名称（唯一标识，也是配置文件中键的前缀）
            title: 分组显示标题
            defaults: 默认值字典，决定每个键的类型
            description: 分组描述
        """
        self.name = name
        self.title = title
        self.description = description
        self.defaults = dict(defaults)
        self.items = dict(defaults)


def _coerce(value: Any, default: Any, where: str) -> Any:
    """按默认值的类型转换配置值"""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "yes", "on", "1"):
            return True
        if text in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: 无法解析为布尔值: {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool):
            raise ConfigError(f"{where}: 需要整数: {value!r}")
        if isinstance(value, int):
            return value
        try:
            return int(str(value).strip())
        except ValueError:
            raise ConfigError(f"{where}: 无法解析为整数: {value!r}") from None
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        try:
            return float(str(value).strip())
        except ValueError:
            raise ConfigError(f"{where}: 无法解析为浮点数: {value!r}") from None
    return str(value).strip()


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ConfigManager:
    """配置管理器类，负责管理一次实验的全部配置"""

    CONFIG_VERSION = "1.0.0"  # 配置版本号

    def __init__(self, config_file: Optional[str] = None):
        """
        初始化配置管理器

        参数:
            config_file: 配置文件路径，为None时只使用默认值
        """
        self.config_groups = self.init_config_groups()
        self.loaded_files: List[str] = []
        if config_file is not None:
            self.load_file(config_file)

    def init_config_groups(self) -> Dict[str, ConfigGroup]:
        """初始化配置分组及其默认值"""
        groups = [
            ConfigGroup("run", "运行设置", {
                "regime": "hatl",          # classical | full | hatl
                "task": "s2g2t",           # s2t | s2g2t
                "seed": 1,
                "max_epochs": 30,
                "batch_size": 16,
                "single_thread": True,     # 单线程保证逐位可复现
                "workers": 1,              # 评估解码的并行线程数
                "dataset_dir": "",
                "pretrained": "",
                "out_dir": "",
            }, "训练方案、任务与输入输出路径"),
            ConfigGroup("data", "合成数据", {
                "gloss_vocab": 12,
                "function_words": 3,
                "pretrain_samples": 400,
                "train_samples": 240,
                "dev_samples": 60,
                "test_samples": 60,
                "min_gloss_len": 2,
                "max_gloss_len": 5,
                "min_duration": 2,
                "max_duration": 4,
                "feature_dim": 16,
                "noise": 0.15,
                "rotation_deg": 45.0,
                "remap_fraction": 0.33,
                "remap_offset": 0.25,
                "signers": 1,
                "signer_offset": 0.2,
                "seed": 7,
            }, "合成手语数据集的生成参数与领域偏移"),
            ConfigGroup("model", "模型尺寸", {
                "layers": 10,
                "backbone_dim": 32,
                "hidden": 64,
                "encoder_layers": 3,
                "decoder_layers": 1,
                "heads": 4,
                "ff_dim": 128,
                "dropout": 0.1,
                "max_text_len": 32,
            }, "骨干层数与翻译模型尺寸"),
            ConfigGroup("loss", "损失权重", {
                "w_ctc": 1.0,
                "w_ce": 1.0,
                "w_enc": 0.5,
                "w_bb": 0.5,
            }, "多目标损失的权重，s2t 任务强制 w_ctc = 0"),
            ConfigGroup("optimizer", "优化器", {
                "lr_encoder": 5e-5,
                "lr_decoder": 1e-4,
                "lr_backbone": 1e-5,
                "llrd_alpha": 0.5,
                "lr_scale": 1.0,
                "beta1": 0.9,
                "beta2": 0.98,
                "eps": 1e-8,
                "weight_decay": 0.01,
                "warmup_min_steps": 200,
                "warmup_fraction": 0.02,
                "clip_norm": 0.0,
            }, "AdamW、分层学习率衰减与线性预热"),
            ConfigGroup("controller", "解冻控制器", {
                "warmup_epochs": 2,
                "patience": 4,
                "window": 3,
                "delta_bleu4": 0.002,
                "delta_ctc": 0.003,
                "tau_bleu4": 0.002,
                "tau_ctc": 0.003,
                "delta_decay": 0.95,
                "decay_every": 5,
                "cooldown": 3,
                "early_stop": 5,
                "criterion2": "best",      # best | smoothed
            }, "平台期检测、冷却与早停"),
            ConfigGroup("decode", "解码", {
                "beam_width": 8,
                "lm_weight": 0.7,
                "lm_order": 4,
                "lm_k": 0.1,
                "max_len": 24,
                "blank_bias": 0.4,
                "temperature": 0.9,
            }, "束搜索、语言模型融合与CTC gloss解码"),
            ConfigGroup("pretrain", "骨干预训练", {
                "epochs": 30,
                "lr": 1e-3,
                "batch_size": 32,
                "patience": 3,
                "dev_fraction": 0.1,
                "min_delta": 0.002,
            }, "在未偏移数据上预训练骨干网络"),
            ConfigGroup("metrics", "评估", {
                "monitor_smoothing": False,  # 为True时开发集BLEU使用加一平滑
            }, "评估指标设置"),
        ]
        return {group.name: group for group in groups}

    # ------------------------------------------------------------------
    # 读写
    # ------------------------------------------------------------------
    def get_config_value(self, group_name: str, key: str, default=None) -> Any:
        """
        获取配置项的值

        参数:
            group_name: 配置分组名称
            key: 配置项键名
            default: 配置项不存在时返回的值

        返回:
            Any: 配置项的值
        """
        group = self.config_groups.get(group_name)
        if group is None:
            logger.warning("未找到配置分组", group=group_name)
            return default
        return group.items.get(key, default)

    def set_config_value(self, group_name: str, key: str, value: Any) -> bool:
        """
        设置配置项的值，按默认值类型转换

        参数:
            group_name: 配置分组名称
            key: 配置项键名
            value: 新值（字符串会被转换）

        返回:
            bool: 值发生变化返回True
        """
        group = self.config_groups.get(group_name)
        if group is None:
            raise ConfigError(f"未知的配置分组: {group_name}")
        if key not in group.defaults:
            raise ConfigError(f"未知的配置项: {group_name}.{key}")

        new_value = _coerce(value, group.defaults[key], f"{group_name}.{key}")
        old_value = group.items.get(key)
        group.items[key] = new_value
        return new_value != old_value

    # ------------------------------------------------------------------
    # 配置文件
    # ------------------------------------------------------------------
    def apply_lines(self, lines: Iterable[str], source: str = "<text>") -> int:
        """
        解析 `group.key = value` 形式的配置行

        参数:
            lines: 配置文本行
            source: 出错时报告的来源名称

        返回:
            int: 成功应用的配置项数
        """
        applied = 0
        for number, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{number}: 缺少 '=': {raw.strip()!r}")
            name, value = (part.strip() for part in line.split("=", 1))
            if "." not in name:
                raise ConfigError(f"{source}:{number}: 配置键必须形如 group.key: {name!r}")
            group_name, key = name.split(".", 1)
            try:
                self.set_config_value(group_name, key, value)
            except ConfigError as e:
                raise ConfigError(f"{source}:{number}: {e}") from None
            applied += 1
        return applied

    def load_file(self, path: str) -> int:
        """载入配置文件，后载入的文件覆盖先前的值"""
        if not os.path.exists(path):
            raise ConfigError(f"配置文件不存在: {path}")
        with open(path, "r", encoding="utf-8") as f:
            applied = self.apply_lines(f, source=path)
        self.loaded_files.append(path)
        logger.info("载入配置文件", path=path, items=applied)
        return applied

    def to_text(self) -> str:
        """按配置文件格式导出全部生效配置"""
        lines = [f"# hatl-lab 配置 v{self.CONFIG_VERSION}"]
        for group in self.config_groups.values():
            lines.append(f"# {group.title}")
            for key, value in group.items.items():
                lines.append(f"{group.name}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def save_file(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    def copy(self) -> "ConfigManager":
        """复制配置"""
        clone = ConfigManager()
        clone.config_groups = copy.deepcopy(self.config_groups)
        clone.loaded_files = list(self.loaded_files)
        return clone

    # ------------------------------------------------------------------
    # 校验
    # ------------------------------------------------------------------
    def validate(self) -> None:
        """训练开始前检查配置组合，发现冲突抛出 ConfigError"""
        get = self.get_config_value
        if get("run", "regime") not in REGIMES:
            raise ConfigError(f"run.regime 必须是 {REGIMES} 之一: {get('run', 'regime')}")
        if get("run", "task") not in TASKS:
            raise ConfigError(f"run.task 必须是 {TASKS} 之一: {get('run', 'task')}")
        if get("run", "task") == "s2t" and get("loss", "w_ctc") != 0.0:
            logger.info("s2t 任务不使用CTC监督，w_ctc 置为0")
            self.set_config_value("loss", "w_ctc", 0.0)
        for group_name, key in (("run", "max_epochs"), ("run", "batch_size"), ("run", "workers"),
                                ("pretrain", "epochs"), ("pretrain", "batch_size"),
                                ("decode", "beam_width"), ("decode", "max_len"), ("decode", "lm_order")):
            if get(group_name, key) < 1:
                raise ConfigError(f"{group_name}.{key} 至少为1: {get(group_name, key)}")
        if get("decode", "temperature") <= 0:
            raise ConfigError(f"decode.temperature 必须为正数: {get('decode', 'temperature')}")
        if get("decode", "max_len") + 1 > get("model", "max_text_len"):
            raise ConfigError("decode.max_len 必须小于 model.max_text_len")
        if not 0.0 < get("pretrain", "dev_fraction") < 1.0:
            raise ConfigError(f"pretrain.dev_fraction 必须在 (0, 1) 内: {get('pretrain', 'dev_fraction')}")
        if get("run", "workers") > 1 and get("run", "single_thread"):
            logger.warning("单线程模式下忽略并行评估", workers=get("run", "workers"))

    def summary(self) -> Dict[str, Dict[str, Any]]:
        return {name: dict(group.items) for name, group in self.config_groups.items()}


def load_config(paths: Iterable[str] = (), overrides: Iterable[str] = ()) -> ConfigManager:
    """
    按顺序载入多个配置文件并应用命令行覆盖项

    参数:
        paths: 配置文件路径列表
        overrides: `group.key=value` 形式的覆盖项

    返回:
        ConfigManager
    """
    manager = ConfigManager()
    for path in paths:
        manager.load_file(path)
    overrides = list(overrides)
    if overrides:
        manager.apply_lines(overrides, source="--set")
    return manager


def default_config_path(name: str = "default.conf") -> str:
    """随包发布的配置文件路径"""
    return os.path.join(CONFIG_DIR, name)
