#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
数据集文件读写
每个划分一个UTF-8文本文件，每行一个样本：
id<TAB>gloss<TAB>text<TAB>frame_labels<TAB>frames
frames 为按 `;` 连接的帧，每帧的数值以 `,` 分隔、保留9位有效数字
"""

import os
from typing import Dict, List, Optional, Sequence

import numpy as np

from hatl_lab.data.synthetic import SPLITS, DatasetSpec, SampleRecord, SyntheticDataset, split_statistics
from hatl_lab.utils.errors import ConfigError, DatasetParseError
from hatl_lab.utils.logger import get_logger

logger = get_logger("DatasetIO", module="data.dataset_io")

SPEC_ECHO = "spec.echo"
FIELDS = 5


def format_record(record: SampleRecord) -> str:
    """把样本编码为一行（不含换行符）"""
    frames = ";".join(",".join(format(float(v), ".9g") for v in row) for row in record.frames)
    return "\t".join([
        record.id,
        " ".join(str(g) for g in record.gloss),
        " ".join(str(t) for t in record.text),
        " ".join(str(label) for label in record.frame_labels),
        frames,
    ])


def _int_tokens(text: str, what: str, path: str, line: int) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split())
    except ValueError:
        raise DatasetParseError(f"{what} 含有非整数词元: {text!r}", path, line) from None


def parse_record(line_text: str, path: str = "<memory>", line: int = 0) -> SampleRecord:
    """
    解析一行样本

    参数:
        line_text: 不含换行符的行
        path: 文件路径，用于错误信息
        line: 行号（从1开始）

    返回:
        SampleRecord
    """
    parts = line_text.split("\t")
    if len(parts) != FIELDS:
        raise DatasetParseError(f"需要 {FIELDS} 个字段，实际 {len(parts)} 个", path, line)
    sample_id, gloss_text, text_text, labels_text, frames_text = parts
    if not sample_id:
        raise DatasetParseError("样本id为空", path, line)
    gloss = _int_tokens(gloss_text, "gloss", path, line)
    text = _int_tokens(text_text, "text", path, line)
    labels = _int_tokens(labels_text, "frame_labels", path, line)
    if not gloss or not labels:
        raise DatasetParseError("gloss 或 frame_labels 为空", path, line)

    try:
        rows = [[float(v) for v in row.split(",")] for row in frames_text.split(";")]
    except ValueError:
        raise DatasetParseError("帧特征无法解析为数值", path, line) from None
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise DatasetParseError(f"帧特征维度不一致: {sorted(widths)}", path, line)
    frames = np.asarray(rows, dtype=np.float64)
    if frames.shape[0] != len(labels):
        raise DatasetParseError(f"帧数 {frames.shape[0]} 与 frame_labels 数 {len(labels)} 不一致", path, line)
    return SampleRecord(id=sample_id, frames=frames, gloss=gloss, text=text, frame_labels=labels)


def save_split(records: Sequence[SampleRecord], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(format_record(record) + "\n")


def load_split(path: str) -> List[SampleRecord]:
    """读取一个划分文件，格式错误时报告行号"""
    if not os.path.exists(path):
        raise DatasetParseError("数据文件不存在", path)
    with open(path, "r", encoding="utf-8") as f:
        content = f.read()
    if content and not content.endswith("\n"):
        # 最后一行缺少换行符视为文件被截断
        last = content.count("\n") + 1
        raise DatasetParseError("文件末行不完整（文件可能被截断）", path, last)
    records = []
    for number, line_text in enumerate(content.split("\n")[:-1], start=1):
        if not line_text.strip():
            raise DatasetParseError("空行", path, number)
        records.append(parse_record(line_text, path, number))
    return records


def spec_echo_text(dataset: SyntheticDataset) -> str:
    """生成 spec.echo：数据参数（配置文件格式）+ 各划分统计"""
    lines = ["# 合成数据集参数"]
    if dataset.spec is not None:
        for key in DatasetSpec.__dataclass_fields__:
            value = getattr(dataset.spec, key)
            lines.append(f"data.{key} = {repr(value) if isinstance(value, float) else value}")
    lines.append(f"# gloss_vocab={dataset.gloss_vocab} text_vocab={dataset.text_vocab} "
                 f"feature_dim={dataset.feature_dim}")
    for split in SPLITS:
        stats = split_statistics(dataset.splits.get(split, []))
        lines.append(f"# {split}: " + " ".join(f"{k}={v:.4f}" for k, v in stats.items()))
    return "\n".join(lines) + "\n"


def save_dataset(dataset: SyntheticDataset, directory: str) -> Dict[str, str]:
    """
    写出四个划分文件与 spec.echo

    返回:
        Dict[str, str]: 划分名 -> 文件路径
    """
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for split in SPLITS:
        path = os.path.join(directory, f"{split}.tsv")
        save_split(dataset.splits[split], path)
        paths[split] = path
    with open(os.path.join(directory, SPEC_ECHO), "w", encoding="utf-8", newline="\n") as f:
        f.write(spec_echo_text(dataset))
    logger.info("数据集已保存", directory=directory,
                sizes={split: len(dataset.splits[split]) for split in SPLITS})
    return paths


def _read_spec_echo(path: str) -> Optional[DatasetSpec]:
    from hatl_lab.core.config_manager import ConfigManager

    manager = ConfigManager()
    with open(path, "r", encoding="utf-8") as f:
        try:
            manager.apply_lines(f, source=path)
        except ConfigError as e:
            raise DatasetParseError(str(e), path) from None
    return DatasetSpec.from_config(manager)


def load_dataset(directory: str, splits: Sequence[str] = SPLITS) -> SyntheticDataset:
    """
    读取数据集目录

    参数:
        directory: gen-data 的输出目录
        splits: 要读取的划分

    返回:
        SyntheticDataset: 词表大小优先取自 spec.echo，缺失时由数据推断
    """
    loaded = {split: load_split(os.path.join(directory, f"{split}.tsv")) for split in splits}
    spec_path = os.path.join(directory, SPEC_ECHO)
    spec = _read_spec_echo(spec_path) if os.path.exists(spec_path) else None

    records = [r for split in loaded.values() for r in split]
    if not records:
        raise DatasetParseError("数据集为空", directory)
    dims = {r.frames.shape[1] for r in records}
    if len(dims) != 1:
        raise DatasetParseError(f"各划分的特征维度不一致: {sorted(dims)}", directory)
    if spec is not None:
        gloss_vocab, text_vocab = spec.gloss_vocab, spec.text_vocab
    else:
        gloss_vocab = max(max(r.gloss) for r in records)
        text_vocab = max(max(r.text, default=0) for r in records) + 1
    feature_dim = dims.pop()
    logger.info("数据集已载入", directory=directory, sizes={k: len(v) for k, v in loaded.items()})
    return SyntheticDataset(splits=loaded, gloss_vocab=gloss_vocab, text_vocab=text_vocab,
                            feature_dim=feature_dim, spec=spec)
