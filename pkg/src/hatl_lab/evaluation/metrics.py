#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
翻译质量评估模块
语料级/句子级 BLEU-n、ROUGE-L 以及手语词(gloss)错误率
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Hashable

from hatl_lab.utils.errors import ArgumentError

TokenSeq = Sequence[Hashable]

# 报告中指标的固定顺序
REPORT_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l")
REPORT_NAMES = {
    "bleu1": "BLEU-1",
    "bleu2": "BLEU-2",
    "bleu3": "BLEU-3",
    "bleu4": "BLEU-4",
    "rouge_l": "ROUGE-L",
}


@dataclass
class BleuReport:
    """BLEU计算结果"""

    precisions: List[float] = field(default_factory=list)
    bp: float = 0.0
    bleu: float = 0.0
    c: int = 0  # 候选总长度
    r: int = 0  # 参考总长度


def tokenize(text: str) -> List[str]:
    """按空白切分已经分好词的文本"""
    return text.split()


def _ngrams(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(c: int, r: int) -> float:
    """
    计算长度惩罚因子

    参数:
        c: 候选译文长度
        r: 参考译文长度

    返回:
        float: c > r 时为1，否则为 e^(1 - r/c)；c = 0 时为0
    """
    if r <= 0:
        raise ArgumentError(f"参考长度必须为正数: r={r}")
    if c < 0:
        raise ArgumentError(f"候选长度不能为负数: c={c}")
    if c > r:
        return 1.0
    if c == 0:
        return 0.0
    return math.exp(1.0 - r / c)


def corpus_bleu(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq],
                max_n: int = 4, smooth: bool = False) -> BleuReport:
    """
    语料级BLEU，n-gram截断计数在整个语料上微平均

    参数:
        candidates: 候选译文列表
        references: 参考译文列表（每个候选对应一个参考）
        max_n: 最大n-gram阶数，权重均匀取 1/max_n
        smooth: 加一平滑，仅用于训练监控，默认关闭

    返回:
        BleuReport: 各阶精确率、长度惩罚与BLEU值
    """
    if len(candidates) != len(references):
        raise ArgumentError(f"候选与参考数量不一致: {len(candidates)} != {len(references)}")
    if max_n < 1:
        raise ArgumentError(f"max_n必须不小于1: {max_n}")

    matches = [0] * max_n
    totals = [0] * max_n
    c = 0
    r = 0
    for cand, ref in zip(candidates, references):
        if len(ref) == 0:
            raise ArgumentError("参考译文不能为空")
        c += len(cand)
        r += len(ref)
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)

    precisions = []
    for n in range(max_n):
        if smooth and n > 0:
            precisions.append((matches[n] + 1.0) / (totals[n] + 1.0))
        elif totals[n] == 0:
            precisions.append(0.0)
        else:
            precisions.append(matches[n] / totals[n])

    bp = brevity_penalty(c, r)
    if min(precisions) <= 0.0:
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(precisions=precisions, bp=bp, bleu=min(bleu, 1.0), c=c, r=r)


def sentence_bleu(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4,
                  smooth: bool = False) -> BleuReport:
    """单句BLEU，即只有一对句子的语料BLEU"""
    return corpus_bleu([candidate], [reference], max_n=max_n, smooth=smooth)


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """最长公共子序列长度（滚动数组动态规划）"""
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[-1]


def rouge_l(candidate: TokenSeq, reference: TokenSeq) -> float:
    """
    ROUGE-L，取 2·LCS / (|G| + |R|) 的调和形式

    参数:
        candidate: 生成译文 G
        reference: 参考译文 R，不能为空

    返回:
        float: [0, 1] 内的分数，空候选为0
    """
    if len(reference) == 0:
        raise ArgumentError("参考译文不能为空")
    if len(candidate) == 0:
        return 0.0
    return 2.0 * lcs_length(candidate, reference) / (len(candidate) + len(reference))


def corpus_rouge_l(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> float:
    """语料ROUGE-L：句子分数的平均值"""
    if len(candidates) != len(references):
        raise ArgumentError(f"候选与参考数量不一致: {len(candidates)} != {len(references)}")
    if not references:
        return 0.0
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(references)


def gloss_wer(hypotheses: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> float:
    """
    手语词错误率（词级编辑距离 / 参考总长度）

    参数:
        hypotheses: 解码出的gloss序列
        references: 参考gloss序列
    """
    from jiwer import wer

    if len(hypotheses) != len(references):
        raise ArgumentError(f"候选与参考数量不一致: {len(hypotheses)} != {len(references)}")
    truth = [" ".join(str(t) for t in ref) for ref in references]
    # jiwer不接受空假设，用一个不会出现在参考中的占位符表示空输出，记为一次替换/删除
    hyps = [" ".join(str(t) for t in hyp) if len(hyp) else "<empty>" for hyp in hypotheses]
    return float(wer(truth, hyps))


def metric_report(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq],
                  smooth: bool = False) -> Dict[str, float]:
    """
    生成与结果表一致的指标行：BLEU-1..4 与 ROUGE-L

    参数:
        smooth: BLEU是否对高阶n-gram使用加一平滑

    返回:
        Dict[str, float]: 键为 REPORT_KEYS
    """
    report = {f"bleu{n}": corpus_bleu(candidates, references, max_n=n, smooth=smooth).bleu for n in range(1, 5)}
    report["rouge_l"] = corpus_rouge_l(candidates, references)
    return report


def format_report(report: Dict[str, float]) -> str:
    """按 NAME<TAB>VALUE 每行一个指标渲染，保留4位小数"""
    return "\n".join(f"{REPORT_NAMES[key]}\t{report[key]:.4f}" for key in REPORT_KEYS)
