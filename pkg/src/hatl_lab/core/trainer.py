#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
训练编排模块
骨干预训练、三种微调方案的训练主循环、评估与多种子对比实验
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from hatl_lab.core.app_context import RunContext
from hatl_lab.core.checkpoint import Checkpoint, load_checkpoint, load_model, model_checkpoint, save_checkpoint
from hatl_lab.core.config_manager import REGIMES, TASKS, ConfigManager
from hatl_lab.core.controller import STOP, ControllerConfig, EpochDecision
from hatl_lab.core.regimes import get_regime
from hatl_lab.data.batching import Batch, batch_iter
from hatl_lab.data.dataset_io import load_dataset
from hatl_lab.data.synthetic import DatasetSpec, SampleRecord, SyntheticDataset, generate_dataset
from hatl_lab.decoding.decode import BeamConfig, beam_search, ctc_gloss_decode, greedy_decode_batch
from hatl_lab.decoding.ngram_lm import NGramLM, train_ngram_lm
from hatl_lab.evaluation.metrics import REPORT_KEYS, gloss_wer, metric_report
from hatl_lab.model.layered_model import TEXT_SPECIALS, TRANSLATION_GROUP, LayeredModel, ModelConfig, build_model
from hatl_lab.training.ctc import batch_ctc_loss
from hatl_lab.training.losses import LossReport, LossWeights, composite_loss, cross_entropy_text, framewise_ce
from hatl_lab.training.optim import OptimizerConfig, build_optimizer
from hatl_lab.utils.errors import ConfigError, NumericError
from hatl_lab.utils.logger import get_logger

logger = get_logger("Trainer", module="core.trainer")

REPORT_VERSION = 1
METRICS_HEADER = ["epoch", "phase", "trainable_layers"] + list(REPORT_KEYS) + [
    "dev_ctc", "smoothed_bleu4", "plateau_streak", "decision"]
LOSSES_HEADER = ["epoch", "loss_total", "loss_ctc", "loss_ce", "loss_enc", "loss_bb"]
TIMING_HEADER = ["epoch", "seconds", "trainable_layers", "trainable_params"]
PRETRAIN_HEADER = ["epoch", "loss_bb", "dev_accuracy"]


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


class CsvLog:
    """逐行追加的CSV文件，path为None时不写任何内容"""

    def __init__(self, path: Optional[str], header: Sequence[str]):
        self.path = path
        self.header = list(header)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(self.header)

    def write(self, row: Dict[str, Any]) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(row.get(key, "")) for key in self.header])


def configure_threads(single_thread: bool) -> None:
    """单线程模式保证浮点运算顺序固定，从而逐位可复现"""
    if single_thread:
        torch.set_num_threads(1)


def _write_json(path: Optional[str], data: Dict[str, Any]) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def write_token_lines(path: Optional[str], sequences: Sequence[Sequence[int]]) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tokens in sequences:
            f.write(" ".join(str(t) for t in tokens) + "\n")


# ----------------------------------------------------------------------
# 数据与模型准备
# ----------------------------------------------------------------------
def resolve_dataset(config_manager: ConfigManager, dataset: Optional[SyntheticDataset] = None) -> SyntheticDataset:
    """优先使用传入的数据集，其次读取 run.dataset_dir，否则按 data.* 现场生成"""
    if dataset is not None:
        return dataset
    directory = config_manager.get_config_value("run", "dataset_dir")
    if directory:
        return load_dataset(directory)
    logger.info("未指定数据目录，按 data.* 配置生成合成数据")
    return generate_dataset(DatasetSpec.from_config(config_manager))


def model_config_for(config_manager: ConfigManager, dataset: SyntheticDataset) -> ModelConfig:
    return ModelConfig.from_config(config_manager, dataset.gloss_vocab, dataset.text_vocab, dataset.feature_dim)


def text_lm(config_manager: ConfigManager, dataset: SyntheticDataset) -> Optional[NGramLM]:
    """在训练划分的目标文本上训练n-gram语言模型"""
    get = config_manager.get_config_value
    if get("decode", "lm_weight") == 0.0 or not dataset.splits.get("train"):
        return None
    return train_ngram_lm([r.text for r in dataset["train"]], order=get("decode", "lm_order"),
                          k=get("decode", "lm_k"), vocabulary=range(TEXT_SPECIALS, dataset.text_vocab))


# ----------------------------------------------------------------------
# 损失
# ----------------------------------------------------------------------
def compute_losses(model: LayeredModel, batch: Batch, weights: LossWeights):
    """
    一个批次的加权多目标损失；权重为0的分量不计算

    返回:
        (total, LossReport)
    """
    outputs = model(batch.frames, batch.text_in, batch.frame_pad, batch.text_pad)
    parts = {"ce": cross_entropy_text(outputs["text_logits"], batch.text_out, batch.text_pad)}
    if weights.w_ctc > 0:
        parts["ctc"] = batch_ctc_loss(outputs["enc_gloss_logits"], batch.frame_lengths, batch.glosses)
    if weights.w_enc > 0:
        parts["enc"] = framewise_ce(outputs["enc_gloss_logits"], batch.frame_labels, batch.label_mask)
    if weights.w_bb > 0:
        parts["bb"] = framewise_ce(outputs["bb_frame_logits"], batch.frame_labels, batch.label_mask)
    return composite_loss(parts, weights)


def _mean_reports(reports: List[LossReport], sizes: List[int]) -> LossReport:
    total = float(sum(sizes))
    values = {}
    for key in ("total", "ctc", "ce", "enc", "bb"):
        values[key] = sum(getattr(r, key) * n for r, n in zip(reports, sizes)) / total
    return LossReport(**values)


# ----------------------------------------------------------------------
# 评估
# ----------------------------------------------------------------------
def dev_evaluation(model: LayeredModel, records: Sequence[SampleRecord], config_manager: ConfigManager,
                   with_ctc: bool) -> Dict[str, float]:
    """
    每轮的开发集评估：贪心解码的 BLEU/ROUGE，s2g2t 另外给出开发集CTC损失

    返回:
        Dict[str, float]: REPORT_KEYS 以及可选的 ctc
    """
    get = config_manager.get_config_value
    hyps, refs, ctc_values = [], [], []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for batch in batch_iter(records, get("run", "batch_size"), seed=0, shuffle=False):
            hyps.extend(greedy_decode_batch(model, batch.frames, batch.frame_pad, get("decode", "max_len")))
            refs.extend(batch.texts)
            if with_ctc:
                _, _, gloss_logits = model.encode(batch.frames, batch.frame_pad)
                ctc_values.append(float(batch_ctc_loss(gloss_logits, batch.frame_lengths, batch.glosses)) * len(batch))
    model.train(was_training)
    metrics = metric_report(hyps, refs, smooth=get("metrics", "monitor_smoothing"))
    if with_ctc:
        metrics["ctc"] = sum(ctc_values) / len(records)
        if not math.isfinite(metrics["ctc"]):
            raise NumericError(f"开发集CTC损失不是有限值: {metrics['ctc']}")
    return metrics


def decode_records(model: LayeredModel, records: Sequence[SampleRecord], beam: BeamConfig,
                   lm: Optional[NGramLM], workers: int = 1) -> List[tuple]:
    """逐样本束搜索解码；workers > 1 时并行，结果顺序与输入一致"""
    def decode_one(record: SampleRecord) -> tuple:
        return beam_search(model, record.frames, beam, lm).tokens

    model.eval()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(decode_one, records))
    return [decode_one(r) for r in records]


def gloss_predictions(model: LayeredModel, records: Sequence[SampleRecord], beam: BeamConfig) -> List[tuple]:
    """编码器gloss头的CTC解码结果"""
    model.eval()
    out = []
    with torch.no_grad():
        for record in records:
            _, _, gloss_logits = model.encode(torch.as_tensor(record.frames).unsqueeze(0))
            out.append(ctc_gloss_decode(gloss_logits[0], beam))
    return out


def evaluate_model(model: LayeredModel, records: Sequence[SampleRecord], config_manager: ConfigManager,
                   lm: Optional[NGramLM] = None, decoder: str = "beam", hyp_path: Optional[str] = None,
                   ref_path: Optional[str] = None, reference_as_hypothesis: bool = False) -> Dict[str, float]:
    """
    解码一个划分并计算 BLEU-1..4 与 ROUGE-L（s2g2t 另给出 gloss WER）

    参数:
        model: 分层模型
        records: 样本
        config_manager: 配置
        lm: 束搜索融合的语言模型
        decoder: beam 或 greedy
        hyp_path / ref_path: 写出假设与参考的文件
        reference_as_hypothesis: 调试用，直接把参考当作假设

    返回:
        Dict[str, float]: 指标报告
    """
    get = config_manager.get_config_value
    beam = BeamConfig.from_config(config_manager)
    refs = [r.text for r in records]
    if reference_as_hypothesis:
        hyps = list(refs)
    elif decoder == "beam":
        workers = 1 if get("run", "single_thread") else get("run", "workers")
        hyps = decode_records(model, records, beam, lm, workers)
    elif decoder == "greedy":
        hyps = []
        for batch in batch_iter(records, get("run", "batch_size"), seed=0, shuffle=False):
            hyps.extend(greedy_decode_batch(model, batch.frames, batch.frame_pad, beam.max_len))
    else:
        raise ConfigError(f"未知的解码方式: {decoder}")

    report = metric_report(hyps, refs)
    if get("run", "task") == "s2g2t":
        report["gloss_wer"] = gloss_wer(gloss_predictions(model, records, beam), [r.gloss for r in records])
    write_token_lines(hyp_path, hyps)
    write_token_lines(ref_path, refs)
    return report


def evaluate(checkpoint: Union[str, Checkpoint], split: str, config_manager: ConfigManager,
             dataset: Optional[SyntheticDataset] = None, out_dir: Optional[str] = None,
             decoder: str = "beam", reference_as_hypothesis: bool = False) -> Dict[str, float]:
    """
    从检查点评估一个数据划分，写出 hyp.txt / ref.txt

    参数:
        checkpoint: 检查点路径或对象
        split: 划分名
        config_manager: 配置（模型尺寸必须与检查点一致）
        dataset: 数据集，为None时按配置解析
        out_dir: 输出目录
        decoder: beam 或 greedy
        reference_as_hypothesis: 调试用，参考即假设

    返回:
        Dict[str, float]: 指标报告
    """
    configure_threads(config_manager.get_config_value("run", "single_thread"))
    dataset = resolve_dataset(config_manager, dataset)
    if split not in dataset.splits:
        raise ConfigError(f"数据集中没有划分: {split}")
    if isinstance(checkpoint, str):
        checkpoint = load_checkpoint(checkpoint)
    model = load_model(checkpoint, model_config_for(config_manager, dataset))
    lm = text_lm(config_manager, dataset) if decoder == "beam" else None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    report = evaluate_model(
        model, dataset[split], config_manager, lm=lm, decoder=decoder,
        hyp_path=os.path.join(out_dir, "hyp.txt") if out_dir else None,
        ref_path=os.path.join(out_dir, "ref.txt") if out_dir else None,
        reference_as_hypothesis=reference_as_hypothesis,
    )
    logger.info("评估完成", split=split, decoder=decoder, bleu4=report["bleu4"])
    return report


# ----------------------------------------------------------------------
# 骨干预训练
# ----------------------------------------------------------------------
@dataclass
class PretrainReport:
    epochs: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    dev_accuracy: float = 0.0


def frame_accuracy(model: LayeredModel, records: Sequence[SampleRecord], batch_size: int) -> float:
    """骨干逐帧分类头的帧标签准确率"""
    correct, total = 0, 0
    with torch.no_grad():
        for batch in batch_iter(records, batch_size, seed=0, shuffle=False):
            logits = model.bb_head(model.backbone(batch.frames))
            predicted = logits.argmax(dim=-1)
            correct += int(((predicted == batch.frame_labels) & batch.label_mask).sum())
            total += int(batch.label_mask.sum())
    return correct / total


def pretrain_backbone(config_manager: ConfigManager, dataset: Optional[SyntheticDataset] = None,
                      out_path: Optional[str] = None, out_dir: Optional[str] = None):
    """
    在未偏移的预训练划分上训练骨干网络与逐帧分类头，直到开发部分的帧准确率不再提升

    参数:
        config_manager: 配置
        dataset: 数据集，为None时按配置解析
        out_path: 骨干检查点的保存路径
        out_dir: 写出 pretrain.csv 的目录

    返回:
        (Checkpoint, PretrainReport): 只含 "backbone." 参数的检查点与训练记录
    """
    get = config_manager.get_config_value
    configure_threads(get("run", "single_thread"))
    dataset = resolve_dataset(config_manager, dataset)
    records = dataset.splits.get("pretrain")
    if not records:
        raise ConfigError("数据集中没有 pretrain 划分")
    seed = get("run", "seed")

    order = np.random.default_rng([seed, 0]).permutation(len(records))
    dev_count = max(1, int(math.ceil(get("pretrain", "dev_fraction") * len(records))))
    if dev_count >= len(records):
        raise ConfigError("pretrain 划分太小，无法留出开发部分")
    dev = [records[int(i)] for i in order[:dev_count]]
    train = [records[int(i)] for i in order[dev_count:]]

    model = build_model(model_config_for(config_manager, dataset), seed)
    params = list(model.backbone.parameters()) + list(model.bb_head.parameters())
    optimizer = torch.optim.AdamW(params, lr=get("pretrain", "lr"))
    torch.manual_seed(seed)

    csv_log = CsvLog(os.path.join(out_dir, "pretrain.csv") if out_dir else None, PRETRAIN_HEADER)
    report = PretrainReport()
    best_backbone = None
    stale = 0
    for epoch in range(1, get("pretrain", "epochs") + 1):
        model.train()
        losses, sizes = [], []
        for batch in batch_iter(train, get("pretrain", "batch_size"), seed, epoch):
            optimizer.zero_grad(set_to_none=True)
            logits = model.bb_head(model.backbone(batch.frames))
            loss = framewise_ce(logits, batch.frame_labels, batch.label_mask)
            if not torch.isfinite(loss):
                raise NumericError(f"预训练损失发散: epoch={epoch}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            sizes.append(len(batch))
        model.eval()
        accuracy = frame_accuracy(model, dev, get("pretrain", "batch_size"))
        mean_loss = float(np.average(losses, weights=sizes))
        report.epochs.append({"epoch": epoch, "loss_bb": mean_loss, "dev_accuracy": accuracy})
        csv_log.write({"epoch": epoch, "loss_bb": mean_loss, "dev_accuracy": accuracy})
        logger.info("预训练", epoch=epoch, loss_bb=round(mean_loss, 4), dev_accuracy=round(accuracy, 4))

        if best_backbone is None or accuracy > report.dev_accuracy + get("pretrain", "min_delta"):
            report.dev_accuracy = accuracy
            report.best_epoch = epoch
            best_backbone = model.snapshot(epoch, accuracy)
            stale = 0
        else:
            stale += 1
            if stale >= get("pretrain", "patience"):
                break

    model.restore(best_backbone)
    checkpoint = model_checkpoint(model, prefix="backbone.", include_rng=False, meta={
        "kind": "pretrain", "epoch": report.best_epoch, "dev_accuracy": report.dev_accuracy, "seed": seed,
    })
    if out_path is not None:
        save_checkpoint(out_path, checkpoint)
    logger.info("骨干预训练完成", best_epoch=report.best_epoch, dev_accuracy=round(report.dev_accuracy, 4))
    return checkpoint, report


# ----------------------------------------------------------------------
# 微调主循环
# ----------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    phase: str
    trainable: List[str]
    trainable_params: int
    losses: Dict[str, float]
    dev: Dict[str, float]
    decision: str
    seconds: float = 0.0

    @property
    def trainable_layers(self) -> int:
        return sum(1 for g in self.trainable if g != TRANSLATION_GROUP)

    def to_dict(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "phase": self.phase, "trainable": list(self.trainable),
                "trainable_layers": self.trainable_layers, "trainable_params": self.trainable_params,
                "losses": dict(self.losses), "dev": dict(self.dev), "decision": self.decision}


@dataclass
class RunReport:
    """一次微调运行的完整报告"""

    regime: str
    task: str
    seed: int
    max_epochs: int
    epochs: List[EpochRecord] = field(default_factory=list)
    events: List[list] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    final: Dict[str, Dict[str, float]] = field(default_factory=dict)
    total_seconds: float = 0.0

    @property
    def unfrozen_layers(self) -> List[int]:
        return [e.trainable_layers for e in self.epochs]

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data = {
            "version": REPORT_VERSION,
            "regime": self.regime,
            "task": self.task,
            "seed": self.seed,
            "max_epochs": self.max_epochs,
            "epochs_run": len(self.epochs),
            "epochs": [e.to_dict() for e in self.epochs],
            "events": [list(e) for e in self.events],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "unfrozen_layers": self.unfrozen_layers,
            "final": {split: dict(values) for split, values in self.final.items()},
        }
        if include_timing:
            data["timing"] = {"epoch_seconds": [e.seconds for e in self.epochs],
                              "total_seconds": self.total_seconds}
        return data


def _load_pretrained(model: LayeredModel, pretrained: Union[None, str, Checkpoint]) -> None:
    if pretrained is None or pretrained == "":
        logger.warning("未提供预训练骨干，骨干网络使用随机初始化")
        return
    checkpoint = load_checkpoint(pretrained) if isinstance(pretrained, str) else pretrained
    arrays = {k: torch.from_numpy(v) for k, v in checkpoint.params.items() if k.startswith("backbone.")}
    model.load_arrays(arrays, prefix="backbone.")
    logger.info("已载入预训练骨干", parameters=len(arrays))


def run_training(config_manager: ConfigManager, dataset: Optional[SyntheticDataset] = None,
                 pretrained: Union[None, str, Checkpoint] = None, out_dir: Optional[str] = None) -> RunReport:
    """
    按 run.regime 微调并在最终模型上评估开发/测试集

    参数:
        config_manager: 配置，训练前完成校验
        dataset: 数据集，为None时按配置解析
        pretrained: 预训练骨干（路径或检查点），为None时使用 run.pretrained
        out_dir: 输出目录，为None时使用 run.out_dir，空字符串表示不写文件

    返回:
        RunReport
    """
    config_manager.validate()
    get = config_manager.get_config_value
    regime_name, task, seed = get("run", "regime"), get("run", "task"), get("run", "seed")
    if out_dir is None:
        out_dir = get("run", "out_dir")
    out_dir = out_dir or None
    configure_threads(get("run", "single_thread"))

    dataset = resolve_dataset(config_manager, dataset)
    for split in ("train", "dev", "test"):
        if not dataset.splits.get(split):
            raise ConfigError(f"数据集中没有 {split} 划分")

    weights = LossWeights.from_config(config_manager)
    optimizer_config = OptimizerConfig.from_config(config_manager)
    controller_config = ControllerConfig.from_config(config_manager)
    regime = get_regime(regime_name)
    model = build_model(model_config_for(config_manager, dataset), seed)
    _load_pretrained(model, pretrained if pretrained is not None else get("run", "pretrained"))

    batch_size, max_epochs = get("run", "batch_size"), get("run", "max_epochs")
    train = dataset["train"]
    total_steps = max_epochs * int(math.ceil(len(train) / batch_size))
    report = RunReport(regime=regime_name, task=task, seed=seed, max_epochs=max_epochs)

    with RunContext(config_manager, out_dir) as ctx:
        controller = regime.create_controller(controller_config, model.config.layers, ctx.event_manager)
        model.set_trainable(regime.initial_trainable(model))
        optimizer = build_optimizer(model, model.trainable_groups, optimizer_config, total_steps)
        torch.manual_seed(seed)

        metrics_log = CsvLog(ctx.path("metrics.csv"), METRICS_HEADER)
        losses_log = CsvLog(ctx.path("losses.csv"), LOSSES_HEADER)
        timing_log = CsvLog(ctx.path("timing.csv"), TIMING_HEADER)
        run_start = time.perf_counter()

        for epoch in range(1, max_epochs + 1):
            if controller.state.pending_release is not None:
                start_step = optimizer.step_count
                optimizer = controller.apply_pending(
                    model, lambda trainable: build_optimizer(model, trainable, optimizer_config,
                                                             total_steps, start_step))
            epoch_start = time.perf_counter()

            model.train()
            reports, sizes = [], []
            for batch in batch_iter(train, batch_size, seed, epoch):
                optimizer.zero_grad()
                total, loss_report = compute_losses(model, batch, weights)
                total.backward()
                optimizer.step()
                reports.append(loss_report)
                sizes.append(len(batch))
            epoch_losses = _mean_reports(reports, sizes)

            dev = dev_evaluation(model, dataset["dev"], config_manager, with_ctc=task == "s2g2t")
            seconds = time.perf_counter() - epoch_start
            decision: EpochDecision = controller.observe_epoch(dev)
            if controller.state.best_epoch == epoch:
                controller.remember_best(model.snapshot(epoch, dev["bleu4"]))
                if ctx.out_dir is not None:
                    save_checkpoint(ctx.path("best.ckpt"), model_checkpoint(
                        model, optimizer=optimizer, controller=controller,
                        meta={"kind": "finetune", "epoch": epoch, "regime": regime_name, "task": task}))

            trainable = sorted(model.trainable_groups, key=model.group_names().index)
            record = EpochRecord(epoch=epoch, phase=decision.record["phase"], trainable=trainable,
                                 trainable_params=model.count_parameters(trainable),
                                 losses=epoch_losses.as_row(), dev=dev, decision=decision.kind, seconds=seconds)
            report.epochs.append(record)
            metrics_log.write({
                "epoch": epoch, "phase": record.phase, "trainable_layers": record.trainable_layers,
                **{key: dev[key] for key in REPORT_KEYS}, "dev_ctc": dev.get("ctc", ""),
                "smoothed_bleu4": decision.record["smoothed"]["bleu4"],
                "plateau_streak": decision.record["plateau_streak"], "decision": decision.kind,
            })
            losses_log.write({"epoch": epoch, **epoch_losses.as_row()})
            timing_log.write({"epoch": epoch, "seconds": seconds, "trainable_layers": record.trainable_layers,
                              "trainable_params": record.trainable_params})
            ctx.logger.info("轮次完成", epoch=epoch, loss=round(epoch_losses.total, 4),
                            bleu4=round(dev["bleu4"], 4), layers=record.trainable_layers,
                            decision=decision.kind, seconds=round(seconds, 2))
            if decision.kind == STOP:
                report.stopped_early = True
                break

        # 最终评估使用开发集上最好的参数，解码使用束搜索 + 语言模型
        model.restore(controller.best_snapshot)
        report.best_epoch = controller.state.best_epoch
        lm = text_lm(config_manager, dataset)
        report.final["dev"] = evaluate_model(model, dataset["dev"], config_manager, lm=lm,
                                             hyp_path=ctx.path("dev_hyp.txt"), ref_path=ctx.path("dev_ref.txt"))
        report.final["test"] = evaluate_model(model, dataset["test"], config_manager, lm=lm,
                                              hyp_path=ctx.path("hyp.txt"), ref_path=ctx.path("ref.txt"))
        report.events = [[e.epoch, e.event, e.detail] for e in controller.timeline]
        report.total_seconds = time.perf_counter() - run_start
        _write_json(ctx.path("report.json"), report.to_dict())
        ctx.logger.info("训练完成", best_epoch=report.best_epoch, epochs=len(report.epochs),
                        dev_bleu4=round(report.final["dev"]["bleu4"], 4),
                        test_bleu4=round(report.final["test"]["bleu4"], 4))
    return report


# ----------------------------------------------------------------------
# 多种子对比
# ----------------------------------------------------------------------
@dataclass
class ComparisonRow:
    regime: str
    task: str
    values: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0


def compare_regimes(config_manager: ConfigManager, seeds: Sequence[int] = (1, 2, 3, 4, 5),
                    regimes: Sequence[str] = REGIMES, tasks: Sequence[str] = TASKS,
                    dataset: Optional[SyntheticDataset] = None,
                    out_dir: Optional[str] = None) -> List[ComparisonRow]:
    """
    多种子对比实验：每个种子预训练一次骨干，再按各方案、各任务微调，汇总测试集 BLEU-4

    返回:
        List[ComparisonRow]: 每个 (regime, task) 一行
    """
    dataset = resolve_dataset(config_manager, dataset)
    results: Dict[tuple, List[float]] = {(r, t): [] for t in tasks for r in regimes}
    for seed in seeds:
        seed_config = config_manager.copy()
        seed_config.set_config_value("run", "seed", seed)
        pretrained, _ = pretrain_backbone(seed_config, dataset)
        for task in tasks:
            for regime in regimes:
                run_config = seed_config.copy()
                run_config.set_config_value("run", "task", task)
                run_config.set_config_value("run", "regime", regime)
                run_dir = os.path.join(out_dir, f"seed{seed}", f"{task}-{regime}") if out_dir else ""
                run = run_training(run_config, dataset, pretrained=pretrained, out_dir=run_dir)
                results[(regime, task)].append(run.final["test"]["bleu4"])
                logger.info("对比实验进度", seed=seed, task=task, regime=regime,
                            test_bleu4=round(run.final["test"]["bleu4"], 4))

    rows = [ComparisonRow(regime, task, values) for (regime, task), values in results.items()]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.tsv"), "w", encoding="utf-8", newline="\n") as f:
            f.write("regime\ttask\tseeds\tmean_bleu4\tstd_bleu4\tvalues\n")
            for row in rows:
                values = ",".join(f"{v:.6f}" for v in row.values)
                f.write(f"{row.regime}\t{row.task}\t{len(row.values)}\t{row.mean:.6f}\t{row.std:.6f}\t{values}\n")
    return rows
