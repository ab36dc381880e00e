#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
检查点模块
二进制格式（详见 docs/checkpoint_format.md）：
    magic "HATLCKPT" | uint32 版本 | uint32 块数 | 块...
每个块：uint16 名称长度 + UTF-8 名称 | uint8 类型(0=数组, 1=JSON) | uint64 负载长度 | 负载
数组块：uint32 数组个数，每个数组为 uint16 名称长度 + 名称 | uint8 维数 | 维数×uint64 形状 | 小端float64数据
"""

import io
import json
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Any, BinaryIO, Dict, Optional

import numpy as np
import torch

from hatl_lab.model.layered_model import LayeredModel, ModelConfig, build_model
from hatl_lab.utils.errors import CheckpointError
from hatl_lab.utils.logger import get_logger

logger = get_logger("Checkpoint", module="core.checkpoint")

MAGIC = b"HATLCKPT"
FORMAT_VERSION = 1
KIND_ARRAYS = 0
KIND_JSON = 1

SECTION_PARAMS = "params"
SECTION_OPTIM = "optim"
SECTION_OPTIM_META = "optim_meta"
SECTION_CONTROLLER = "controller"
SECTION_RNG = "rng"
SECTION_META = "meta"


@dataclass
class Checkpoint:
    """检查点内容：参数、优化器矩估计、控制器状态、随机数状态与元数据"""

    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer_meta: Optional[Dict[str, Any]] = None
    controller: Optional[Dict[str, Any]] = None
    rng: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        if "model_config" not in self.meta:
            raise CheckpointError("检查点缺少模型结构信息")
        return ModelConfig(**self.meta["model_config"])


# ----------------------------------------------------------------------
# 底层编码
# ----------------------------------------------------------------------
def _write_name(out: BinaryIO, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"名称过长: {name[:32]}...")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _read_exact(src: BinaryIO, size: int, what: str) -> bytes:
    data = src.read(size)
    if len(data) != size:
        raise CheckpointError(f"检查点被截断: 读取{what}时需要 {size} 字节，只有 {len(data)} 字节")
    return data


def _read_name(src: BinaryIO) -> str:
    (length,) = struct.unpack("<H", _read_exact(src, 2, "名称长度"))
    return _read_exact(src, length, "名称").decode("utf-8")


def encode_arrays(arrays: Dict[str, Any]) -> bytes:
    """把命名数组编码为数组块负载"""
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name, value in arrays.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        array = np.ascontiguousarray(value, dtype="<f8")
        _write_name(out, name)
        out.write(struct.pack("<B", array.ndim))
        out.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        out.write(array.tobytes(order="C"))
    return out.getvalue()


def decode_arrays(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    src = io.BytesIO(payload)
    (count,) = struct.unpack("<I", _read_exact(src, 4, "数组个数"))
    arrays = OrderedDict()
    for _ in range(count):
        name = _read_name(src)
        (ndim,) = struct.unpack("<B", _read_exact(src, 1, "维数"))
        shape = struct.unpack(f"<{ndim}Q", _read_exact(src, 8 * ndim, "形状"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = _read_exact(src, 8 * size, f"数组 {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
    return arrays


def _write_section(out: BinaryIO, name: str, kind: int, payload: bytes) -> None:
    _write_name(out, name)
    out.write(struct.pack("<BQ", kind, len(payload)))
    out.write(payload)


# ----------------------------------------------------------------------
# 读写
# ----------------------------------------------------------------------
def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """
    写出检查点（先写临时文件再替换）

    参数:
        path: 目标路径
        checkpoint: 检查点内容
    """
    sections = [(SECTION_PARAMS, KIND_ARRAYS, encode_arrays(checkpoint.params))]
    if checkpoint.optimizer:
        sections.append((SECTION_OPTIM, KIND_ARRAYS, encode_arrays(checkpoint.optimizer)))
    for name, block in ((SECTION_OPTIM_META, checkpoint.optimizer_meta),
                        (SECTION_CONTROLLER, checkpoint.controller),
                        (SECTION_RNG, checkpoint.rng),
                        (SECTION_META, checkpoint.meta)):
        if block is not None:
            payload = json.dumps(block, ensure_ascii=False, sort_keys=True).encode("utf-8")
            sections.append((name, KIND_JSON, payload))

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
        for name, kind, payload in sections:
            _write_section(f, name, kind, payload)
    os.replace(tmp_path, path)
    logger.debug("检查点已保存", path=path, params=len(checkpoint.params))


def load_checkpoint(path: str) -> Checkpoint:
    """
    读取检查点

    返回:
        Checkpoint
    """
    if not os.path.exists(path):
        raise CheckpointError(f"检查点不存在: {path}")
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "文件头") != MAGIC:
            raise CheckpointError(f"不是HATL检查点文件: {path}")
        version, count = struct.unpack("<II", _read_exact(f, 8, "版本"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"不支持的检查点版本: {version}")
        checkpoint = Checkpoint()
        for _ in range(count):
            name = _read_name(f)
            kind, length = struct.unpack("<BQ", _read_exact(f, 9, "块头"))
            payload = _read_exact(f, length, f"块 {name}")
            if kind == KIND_ARRAYS:
                arrays = decode_arrays(payload)
                if name == SECTION_PARAMS:
                    checkpoint.params = arrays
                elif name == SECTION_OPTIM:
                    checkpoint.optimizer = arrays
            elif kind == KIND_JSON:
                block = json.loads(payload.decode("utf-8"))
                if name == SECTION_OPTIM_META:
                    checkpoint.optimizer_meta = block
                elif name == SECTION_CONTROLLER:
                    checkpoint.controller = block
                elif name == SECTION_RNG:
                    checkpoint.rng = block
                elif name == SECTION_META:
                    checkpoint.meta = block
            else:
                raise CheckpointError(f"未知的块类型: {kind}（块 {name}）")
        if f.read(1):
            raise CheckpointError(f"检查点末尾有多余数据: {path}")
    return checkpoint


# ----------------------------------------------------------------------
# 与模型的互转
# ----------------------------------------------------------------------
def rng_state() -> Dict[str, Any]:
    return {"torch": torch.get_rng_state().tolist()}


def restore_rng_state(state: Optional[Dict[str, Any]]) -> None:
    if state and "torch" in state:
        torch.set_rng_state(torch.tensor(state["torch"], dtype=torch.uint8))


def model_checkpoint(model: LayeredModel, prefix: str = "", optimizer=None, controller=None,
                     meta: Optional[Dict[str, Any]] = None, include_rng: bool = True) -> Checkpoint:
    """
    由模型构造检查点

    参数:
        model: 分层模型
        prefix: 只保存以该前缀开头的参数（如 "backbone." 只保存骨干网络）
        optimizer: LLRDOptimizer，可选
        controller: HATLController，可选（不含参数快照）
        meta: 额外的元数据
        include_rng: 是否保存torch随机数状态
    """
    params = OrderedDict((n, p.detach().cpu().numpy().copy())
                         for n, p in model.named_parameters() if n.startswith(prefix))
    checkpoint = Checkpoint(params=params, meta=dict(meta or {}))
    checkpoint.meta["model_config"] = asdict(model.config)
    checkpoint.meta["prefix"] = prefix
    if optimizer is not None:
        arrays, optimizer_meta = optimizer.state_arrays()
        checkpoint.optimizer = OrderedDict((k, v.cpu().numpy()) for k, v in arrays.items())
        checkpoint.optimizer_meta = optimizer_meta
    if controller is not None:
        checkpoint.controller = controller.state_dict()
    if include_rng:
        checkpoint.rng = rng_state()
    return checkpoint


def load_model(checkpoint: Checkpoint, config: Optional[ModelConfig] = None) -> LayeredModel:
    """
    按检查点重建模型并载入参数

    参数:
        checkpoint: 完整模型的检查点
        config: 期望的模型结构；与检查点不一致时报错

    返回:
        LayeredModel
    """
    stored = checkpoint.model_config
    if config is not None and config != stored:
        raise CheckpointError(f"检查点的模型结构与配置不一致: {asdict(stored)} != {asdict(config)}")
    if checkpoint.meta.get("prefix", ""):
        raise CheckpointError("部分参数检查点不能直接重建完整模型")
    model = build_model(stored, seed=0)
    model.load_arrays({k: torch.from_numpy(v) for k, v in checkpoint.params.items()})
    return model
