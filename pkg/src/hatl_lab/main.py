#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
hatl-lab 命令行入口
数据生成、骨干预训练、微调、评估、解码、控制器模拟与多种子对比
"""

import argparse
import os
import sys
from typing import List, Optional

from hatl_lab.core.config_manager import REGIMES, TASKS, ConfigManager, default_config_path, load_config
from hatl_lab.core.controller import ControllerConfig, HATLController, load_metric_trace, simulate
from hatl_lab.core.event_manager import EventManager, attach_default_handlers
from hatl_lab.utils.errors import ArgumentError, ConfigError, DatasetParseError, HatlError, NumericError
from hatl_lab.utils.logger import configure_logging, get_logger, set_console_level

configure_logging(console_level="info", file_level="debug")
logger = get_logger("Main", app="hatl-lab")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _shared_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", action="append", default=[],
                        help="配置文件，可多次指定，后者覆盖前者（默认 data/config/default.conf）")
    parser.add_argument("--seed", type=int, default=None, help="随机种子（run.seed）")
    parser.add_argument("--out", default=None, help="输出目录")
    parser.add_argument("--set", action="append", default=[], metavar="GROUP.KEY=VALUE",
                        help="覆盖单个配置项，可多次指定")
    parser.add_argument("--dataset", default=None, help="gen-data 生成的数据目录（run.dataset_dir）")
    parser.add_argument("--single-thread", action="store_true", default=None,
                        help="单线程运行，保证逐位可复现")
    parser.add_argument("--workers", type=int, default=None, help="评估解码的并行线程数")
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hatl-lab", description="分层自适应迁移学习（HATL）桌面实验")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="生成合成手语数据集")
    _shared_arguments(gen)
    gen.add_argument("--spec", default=None, help="数据集参数文件（data.* 配置，默认 dataset_default.spec）")

    pre = commands.add_parser("pretrain", help="在未偏移数据上预训练骨干网络")
    _shared_arguments(pre)

    train = commands.add_parser("train", help="按指定方案微调")
    _shared_arguments(train)
    train.add_argument("--regime", choices=REGIMES, default=None)
    train.add_argument("--task", choices=TASKS, default=None)
    train.add_argument("--pretrained", default=None, help="预训练骨干检查点")

    ev = commands.add_parser("eval", help="评估检查点")
    _shared_arguments(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--task", choices=TASKS, default=None)
    ev.add_argument("--decoder", choices=["beam", "greedy"], default="beam")
    ev.add_argument("--references-as-hypotheses", action="store_true", help="调试用：参考即假设")

    dec = commands.add_parser("decode", help="解码一个划分并输出每个样本的结果")
    _shared_arguments(dec)
    dec.add_argument("--checkpoint", required=True)
    dec.add_argument("--split", default="test")
    dec.add_argument("--decoder", choices=["beam", "greedy"], default="beam")
    dec.add_argument("--limit", type=int, default=None, help="最多解码的样本数")

    sim = commands.add_parser("simulate-controller", help="按指标轨迹模拟控制器，不训练模型")
    _shared_arguments(sim)
    sim.add_argument("--trace", required=True, help="指标轨迹CSV（列: bleu4[, ctc]）")
    sim.add_argument("--task", choices=TASKS, default=None)
    sim.add_argument("--regime", choices=REGIMES, default="hatl")
    sim.add_argument("--layers", type=int, default=None, help="骨干层数（默认 model.layers）")

    cmp_ = commands.add_parser("compare", help="多种子对比三种方案")
    _shared_arguments(cmp_)
    cmp_.add_argument("--seeds", default="1,2,3,4,5", help="逗号分隔的种子列表")
    cmp_.add_argument("--regimes", default=",".join(REGIMES))
    cmp_.add_argument("--tasks", default=",".join(TASKS))
    return parser


def _split_list(text: str, allowed, what: str) -> List[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    unknown = [item for item in items if item not in allowed]
    if not items or unknown:
        raise ConfigError(f"{what} 取值无效: {text}")
    return items


def config_from_args(args: argparse.Namespace, base: Optional[str] = "default.conf") -> ConfigManager:
    """按 默认配置 → --config → --set → 专用参数 的顺序合成配置"""
    paths = list(args.config) or ([default_config_path(base)] if base else [])
    manager = load_config(paths, args.set)
    if args.seed is not None:
        manager.set_config_value("run", "seed", args.seed)
    if args.out is not None:
        manager.set_config_value("run", "out_dir", args.out)
    if args.dataset is not None:
        manager.set_config_value("run", "dataset_dir", args.dataset)
    if args.single_thread:
        manager.set_config_value("run", "single_thread", True)
    if args.workers is not None:
        manager.set_config_value("run", "workers", args.workers)
    for key in ("regime", "task", "pretrained"):
        value = getattr(args, key, None)
        if value is not None:
            manager.set_config_value("run", key, value)
    return manager


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------
def cmd_gen_data(args: argparse.Namespace) -> int:
    from hatl_lab.data.dataset_io import save_dataset
    from hatl_lab.data.synthetic import DatasetSpec, generate_dataset, split_statistics

    manager = load_config([args.spec or default_config_path("dataset_default.spec")], args.set)
    if args.seed is not None:
        manager.set_config_value("data", "seed", args.seed)
    if not args.out:
        raise ConfigError("gen-data 需要 --out 输出目录")
    dataset = generate_dataset(DatasetSpec.from_config(manager))
    save_dataset(dataset, args.out)
    for split, records in dataset.splits.items():
        stats = split_statistics(records)
        print(f"{split}\t{int(stats['samples'])}\tframes={stats['frames_mean']:.2f}\t"
              f"gloss_len={stats['gloss_len_mean']:.2f}\ttext_len={stats['text_len_mean']:.2f}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    from hatl_lab.core.trainer import pretrain_backbone

    manager = config_from_args(args)
    manager.validate()
    out_dir = manager.get_config_value("run", "out_dir")
    if not out_dir:
        raise ConfigError("pretrain 需要 --out 输出目录")
    os.makedirs(out_dir, exist_ok=True)
    _, report = pretrain_backbone(manager, out_path=os.path.join(out_dir, "backbone.ckpt"), out_dir=out_dir)
    print(f"best_epoch\t{report.best_epoch}\ndev_accuracy\t{report.dev_accuracy:.4f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from hatl_lab.core.trainer import run_training
    from hatl_lab.evaluation.metrics import format_report

    manager = config_from_args(args)
    report = run_training(manager)
    for split in ("dev", "test"):
        print(f"[{split}]")
        print(format_report(report.final[split]))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from hatl_lab.core.trainer import evaluate
    from hatl_lab.evaluation.metrics import format_report

    manager = config_from_args(args)
    manager.validate()
    report = evaluate(args.checkpoint, args.split, manager, out_dir=args.out, decoder=args.decoder,
                      reference_as_hypothesis=args.references_as_hypotheses)
    print(format_report(report))
    if "gloss_wer" in report:
        print(f"GLOSS-WER\t{report['gloss_wer']:.4f}")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    from hatl_lab.core.checkpoint import load_checkpoint, load_model
    from hatl_lab.core.trainer import model_config_for, resolve_dataset, text_lm, write_token_lines
    from hatl_lab.decoding.decode import BeamConfig, beam_search, greedy_decode

    manager = config_from_args(args)
    manager.validate()
    dataset = resolve_dataset(manager)
    if args.split not in dataset.splits:
        raise ConfigError(f"数据集中没有划分: {args.split}")
    model = load_model(load_checkpoint(args.checkpoint), model_config_for(manager, dataset))
    beam = BeamConfig.from_config(manager)
    lm = text_lm(manager, dataset) if args.decoder == "beam" else None
    records = dataset[args.split][:args.limit] if args.limit else dataset[args.split]
    hyps = []
    for record in records:
        if args.decoder == "beam":
            tokens = beam_search(model, record.frames, beam, lm).tokens
        else:
            tokens = greedy_decode(model, record.frames, beam.max_len)
        hyps.append(tokens)
        print(f"{record.id}\t{' '.join(map(str, tokens))}\t{' '.join(map(str, record.text))}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_token_lines(os.path.join(args.out, "hyp.txt"), hyps)
        write_token_lines(os.path.join(args.out, "ref.txt"), [record.text for record in records])
        logger.info("解码结果已写出", out_dir=args.out, samples=len(records))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    from hatl_lab.core.regimes import get_regime

    manager = config_from_args(args)
    manager.set_config_value("run", "regime", args.regime)
    controller_config = ControllerConfig.from_config(manager)
    trace = load_metric_trace(args.trace, controller_config.monitored)
    events = EventManager()
    out_dir = manager.get_config_value("run", "out_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    attach_default_handlers(events, os.path.join(out_dir, "events.tsv") if out_dir else None)
    layers = args.layers if args.layers is not None else manager.get_config_value("model", "layers")
    controller: HATLController = get_regime(args.regime).create_controller(controller_config, layers, events)
    for event in simulate(controller, trace):
        print(event.to_tsv())
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    from hatl_lab.core.trainer import compare_regimes

    manager = config_from_args(args)
    manager.validate()
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds 必须是逗号分隔的整数: {args.seeds}") from None
    rows = compare_regimes(manager, seeds=seeds,
                           regimes=_split_list(args.regimes, REGIMES, "--regimes"),
                           tasks=_split_list(args.tasks, TASKS, "--tasks"),
                           out_dir=manager.get_config_value("run", "out_dir") or None)
    print("regime\ttask\tmean_bleu4\tstd_bleu4")
    for row in rows:
        print(f"{row.regime}\t{row.task}\t{row.mean:.4f}\t{row.std:.4f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "simulate-controller": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    """程序入口函数，返回退出码"""
    args = build_parser().parse_args(argv)
    set_console_level(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArgumentError, DatasetParseError) as e:
        logger.error("配置或输入错误", command=args.command, error=str(e))
        return EXIT_CONFIG
    except NumericError as e:
        logger.error("数值计算失败", command=args.command, error=str(e))
        return EXIT_NUMERIC
    except HatlError as e:
        logger.exception(f"程序运行出错: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
