#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
合成手语数据生成模块
每个gloss对应一个关键点式原型向量，句子由若干gloss的带噪帧段拼接而成；
预训练划分使用未偏移的原型，train/dev/test 施加旋转 + 原型重映射的领域偏移
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hatl_lab.model.layered_model import TEXT_SPECIALS
from hatl_lab.utils.errors import ConfigError
from hatl_lab.utils.logger import get_logger

logger = get_logger("Synthetic", module="data.synthetic")

SPLITS = ("pretrain", "train", "dev", "test")
SHIFTED_SPLITS = ("train", "dev", "test")


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """一个样本：帧特征、gloss序列、文本序列与逐帧对齐标签"""

    id: str
    frames: np.ndarray  # G × d_in
    gloss: Tuple[int, ...]
    text: Tuple[int, ...]
    frame_labels: Tuple[int, ...]

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (self.id == other.id and self.gloss == other.gloss and self.text == other.text
                and self.frame_labels == other.frame_labels
                and self.frames.shape == other.frames.shape
                and bool(np.array_equal(self.frames, other.frames)))


@dataclass(frozen=True)
class DatasetSpec:
    """合成数据集参数"""

    gloss_vocab: int = 12
    function_words: int = 3
    pretrain_samples: int = 400
    train_samples: int = 240
    dev_samples: int = 60
    test_samples: int = 60
    min_gloss_len: int = 2
    max_gloss_len: int = 5
    min_duration: int = 2
    max_duration: int = 4
    feature_dim: int = 16
    noise: float = 0.15
    rotation_deg: float = 45.0
    remap_fraction: float = 0.33
    remap_offset: float = 0.25
    signers: int = 1
    signer_offset: float = 0.2
    seed: int = 7

    def __post_init__(self):
        if self.gloss_vocab < 2:
            raise ConfigError(f"gloss词表至少为2: {self.gloss_vocab}")
        if self.function_words < 0:
            raise ConfigError(f"function_words 不能为负: {self.function_words}")
        if not 1 <= self.min_gloss_len <= self.max_gloss_len:
            raise ConfigError(f"句长范围不合法: [{self.min_gloss_len}, {self.max_gloss_len}]")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ConfigError(f"gloss时长范围不合法: [{self.min_duration}, {self.max_duration}]")
        if self.feature_dim < 2:
            raise ConfigError(f"特征维度至少为2: {self.feature_dim}")
        if self.noise < 0 or self.remap_offset < 0 or self.signer_offset < 0:
            raise ConfigError("noise、remap_offset、signer_offset 不能为负")
        if not 0.0 <= self.remap_fraction <= 1.0:
            raise ConfigError(f"remap_fraction 必须在 [0, 1] 内: {self.remap_fraction}")
        if self.remapped_count >= self.gloss_vocab:
            raise ConfigError("重映射后必须至少保留一个原型作为映射目标")
        if self.signers < 1:
            raise ConfigError(f"signers 至少为1: {self.signers}")
        counts = self.split_sizes()
        if min(counts.values()) < 1:
            raise ConfigError(f"每个划分至少需要1个样本: {counts}")
        if sum(counts.values()) > self.distinct_sentences():
            raise ConfigError(
                f"不同句子数 {self.distinct_sentences()} 少于样本总数 {sum(counts.values())}，无法保证划分互斥")

    @property
    def text_vocab(self) -> int:
        """文本词表大小：特殊符号 + 内容词 + 功能词"""
        return TEXT_SPECIALS + self.gloss_vocab + self.function_words

    @property
    def remapped_count(self) -> int:
        return int(round(self.remap_fraction * self.gloss_vocab))

    def split_sizes(self) -> Dict[str, int]:
        return {"pretrain": self.pretrain_samples, "train": self.train_samples,
                "dev": self.dev_samples, "test": self.test_samples}

    def distinct_sentences(self) -> int:
        """相邻gloss不重复的句子总数"""
        v = self.gloss_vocab
        return sum(v * (v - 1) ** (length - 1)
                   for length in range(self.min_gloss_len, self.max_gloss_len + 1))

    @classmethod
    def from_config(cls, config_manager) -> "DatasetSpec":
        values = {key: config_manager.get_config_value("data", key) for key in cls.__dataclass_fields__}
        return cls(**values)


@dataclass
class SyntheticDataset:
    """四个划分及生成时使用的原型（从文件载入时原型为None）"""

    splits: Dict[str, List[SampleRecord]]
    gloss_vocab: int
    text_vocab: int
    feature_dim: int
    spec: Optional[DatasetSpec] = None
    prototypes: Optional[np.ndarray] = None          # V × d，未偏移
    shifted_prototypes: Optional[np.ndarray] = None  # V × d，偏移后
    rotation: Optional[np.ndarray] = None            # d × d
    remap: Dict[int, int] = field(default_factory=dict)

    def __getitem__(self, split: str) -> List[SampleRecord]:
        return self.splits[split]


def rotation_matrix(dim: int, degrees: float) -> np.ndarray:
    """在 (0,1)、(2,3)… 平面内各旋转同一角度的正交矩阵，奇数维最后一维不变"""
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    matrix = np.eye(dim)
    for i in range(0, dim - 1, 2):
        matrix[i, i], matrix[i, i + 1] = c, -s
        matrix[i + 1, i], matrix[i + 1, i + 1] = s, c
    return matrix


def gloss_to_text(gloss: Sequence[int], gloss_vocab: int, function_words: int,
                  word_map: Sequence[int]) -> Tuple[int, ...]:
    """
    gloss→文本的固定转写：词映射 + 局部换序 + 功能词插入

    参数:
        gloss: gloss序列（1..V）
        gloss_vocab: gloss词表大小 V
        function_words: 功能词个数
        word_map: 长度为V的排列，gloss g 对应内容词 TEXT_SPECIALS + word_map[g-1]

    返回:
        Tuple[int, ...]: 文本词编号序列（不含BOS/EOS）
    """
    order = list(gloss)
    # 偶数位置上能被3整除的gloss与下一个交换
    for i in range(0, len(order) - 1, 2):
        if order[i] % 3 == 0:
            order[i], order[i + 1] = order[i + 1], order[i]
    text = []
    for g in order:
        if function_words and g % 4 == 1:
            text.append(TEXT_SPECIALS + gloss_vocab + (g // 4) % function_words)
        text.append(TEXT_SPECIALS + int(word_map[g - 1]))
    return tuple(text)


def _round_sig(values: np.ndarray) -> np.ndarray:
    """保留9位有效数字，保证写入文件后无损读回"""
    flat = [float(format(v, ".9g")) for v in values.ravel().tolist()]
    return np.asarray(flat, dtype=np.float64).reshape(values.shape)


def _sample_sentence(rng: np.random.Generator, spec: DatasetSpec) -> Tuple[int, ...]:
    length = int(rng.integers(spec.min_gloss_len, spec.max_gloss_len + 1))
    sentence = [int(rng.integers(1, spec.gloss_vocab + 1))]
    while len(sentence) < length:
        g = int(rng.integers(1, spec.gloss_vocab))
        sentence.append(g + 1 if g >= sentence[-1] else g)
    return tuple(sentence)


def _emit_frames(rng: np.random.Generator, spec: DatasetSpec, sentence: Sequence[int],
                 prototypes: np.ndarray, signer_shift: np.ndarray):
    labels = []
    for g in sentence:
        labels.extend([g] * int(rng.integers(spec.min_duration, spec.max_duration + 1)))
    labels_arr = np.asarray(labels)
    clean = prototypes[labels_arr - 1] + signer_shift
    frames = clean + spec.noise * rng.standard_normal(clean.shape)
    return _round_sig(frames), tuple(labels)


def generate_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """
    按参数生成四个互斥划分

    参数:
        spec: 数据集参数

    返回:
        SyntheticDataset: 同一参数与种子得到逐位相同的数据
    """
    rng = np.random.default_rng(spec.seed)
    v, d = spec.gloss_vocab, spec.feature_dim

    # 关键点式坐标：原型位于 [0, 1]^d
    prototypes = rng.uniform(0.0, 1.0, size=(v, d))
    word_map = rng.permutation(v)
    signer_shifts = spec.signer_offset * rng.standard_normal((spec.signers, d))
    if spec.signers == 1:
        signer_shifts[:] = 0.0

    # 领域偏移：部分gloss借用另一个未重映射gloss的原型加小偏移，再整体旋转
    remapped = sorted(int(g) for g in rng.choice(np.arange(1, v + 1), size=spec.remapped_count, replace=False))
    keep = [g for g in range(1, v + 1) if g not in remapped]
    remap = {g: keep[int(rng.integers(len(keep)))] for g in remapped}
    source = prototypes.copy()
    for g, target in remap.items():
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        source[g - 1] = prototypes[target - 1] + spec.remap_offset * direction
    rotation = rotation_matrix(d, spec.rotation_deg)
    shifted = source @ rotation.T

    seen = set()
    splits: Dict[str, List[SampleRecord]] = {}
    for split, count in spec.split_sizes().items():
        split_rng = np.random.default_rng([spec.seed, SPLITS.index(split) + 1])
        records = []
        while len(records) < count:
            sentence = _sample_sentence(split_rng, spec)
            if sentence in seen:
                continue
            seen.add(sentence)
            signer = int(split_rng.integers(spec.signers))
            if split in SHIFTED_SPLITS:
                frames, labels = _emit_frames(split_rng, spec, sentence, shifted,
                                              signer_shifts[signer] @ rotation.T)
            else:
                frames, labels = _emit_frames(split_rng, spec, sentence, prototypes, signer_shifts[signer])
            records.append(SampleRecord(
                id=f"{split}-{len(records):05d}",
                frames=frames,
                gloss=sentence,
                text=gloss_to_text(sentence, v, spec.function_words, word_map),
                frame_labels=labels,
            ))
        splits[split] = records

    logger.info("合成数据生成完成", seed=spec.seed, sizes=spec.split_sizes(),
                remapped=remapped, rotation_deg=spec.rotation_deg)
    return SyntheticDataset(splits=splits, gloss_vocab=v, text_vocab=spec.text_vocab, feature_dim=d,
                            spec=spec, prototypes=prototypes, shifted_prototypes=shifted,
                            rotation=rotation, remap=remap)


def collapse(labels: Sequence[int]) -> Tuple[int, ...]:
    """去掉连续重复"""
    out = []
    for label in labels:
        if not out or out[-1] != label:
            out.append(label)
    return tuple(out)


def nearest_prototype_accuracy(split: Sequence[SampleRecord], prototypes: np.ndarray) -> float:
    """
    1-最近原型逐帧分类器的帧标签准确率

    参数:
        split: 样本列表
        prototypes: V × d 原型矩阵，第 g-1 行对应 gloss g

    返回:
        float: 分类正确的帧比例
    """
    frames = np.concatenate([r.frames for r in split], axis=0)
    labels = np.concatenate([np.asarray(r.frame_labels) for r in split])
    distances = ((frames[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=-1)
    predicted = distances.argmin(axis=1) + 1
    return float((predicted == labels).mean())


def _mean_cv(values: Sequence[int]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    return mean, float(arr.std() / mean) if mean > 0 else 0.0


def split_statistics(split: Sequence[SampleRecord]) -> Dict[str, float]:
    """帧数、gloss长度、文本长度的均值与变异系数"""
    stats: Dict[str, float] = {"samples": float(len(split))}
    if not split:
        return stats
    for name, values in (("frames", [r.num_frames for r in split]),
                         ("gloss_len", [len(r.gloss) for r in split]),
                         ("text_len", [len(r.text) for r in split])):
        mean, cv = _mean_cv(values)
        stats[f"{name}_mean"] = mean
        stats[f"{name}_cv"] = cv
    return stats
