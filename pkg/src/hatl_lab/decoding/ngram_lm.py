#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
n-gram 语言模型
加k平滑的递归回退模型，用于文本束搜索的浅层融合
"""

import math
from collections import Counter, defaultdict
from typing import Dict, Hashable, Iterable, Optional, Sequence, Tuple

from hatl_lab.model.layered_model import BOS_ID, EOS_ID
from hatl_lab.utils.errors import ArgumentError, ConfigError
from hatl_lab.utils.logger import get_logger

logger = get_logger("NGramLM", module="decoding.ngram_lm")


class NGramLM:
    """
    p_1(w) = (c(w) + k) / (N + k|V|)
    p_n(w | h) = (c(h, w) + k · p_{n-1}(w | h[1:])) / (c(h) + k)

    上下文不足 n-1 个词时在左侧补 BOS，句末预测 EOS
    """

    def __init__(self, order: int = 4, k: float = 0.1, vocabulary: Optional[Iterable[Hashable]] = None,
                 bos: Hashable = BOS_ID, eos: Hashable = EOS_ID):
        """
        参数:
            order: 阶数 n
            k: 平滑常数
            vocabulary: 额外的可预测词（语料中的词与EOS总会加入）
        """
        if order < 1:
            raise ConfigError(f"语言模型阶数至少为1: {order}")
        if k <= 0:
            raise ConfigError(f"平滑常数必须为正数: {k}")
        self.order = order
        self.k = k
        self.bos = bos
        self.eos = eos
        self.vocabulary = set(vocabulary) if vocabulary is not None else set()
        self.vocabulary.add(eos)
        # n -> 上下文 -> 下一个词的计数
        self._counts: Dict[int, Dict[Tuple, Counter]] = {n: defaultdict(Counter) for n in range(1, order + 1)}
        self._totals: Dict[int, Counter] = {n: Counter() for n in range(1, order + 1)}
        self.num_tokens = 0

    def fit(self, corpus: Sequence[Sequence[Hashable]]) -> "NGramLM":
        """统计语料中的n-gram"""
        if not corpus:
            raise ArgumentError("语言模型的训练语料不能为空")
        pad = (self.bos,) * (self.order - 1)
        for sentence in corpus:
            tokens = tuple(sentence) + (self.eos,)
            self.vocabulary.update(tokens)
            padded = pad + tokens
            for i, word in enumerate(tokens):
                position = i + len(pad)
                for n in range(1, self.order + 1):
                    context = padded[position - n + 1:position]
                    self._counts[n][context][word] += 1
                    self._totals[n][context] += 1
            self.num_tokens += len(tokens)
        return self

    def _count(self, n: int, context: Tuple, word: Hashable) -> int:
        counts = self._counts[n].get(context)
        return counts[word] if counts else 0

    def _context(self, context: Sequence[Hashable]) -> Tuple:
        history = (self.bos,) * (self.order - 1) + tuple(context)
        return history[len(history) - (self.order - 1):] if self.order > 1 else ()

    def prob(self, word: Hashable, context: Sequence[Hashable] = ()) -> float:
        """
        条件概率 p(word | context)

        参数:
            word: 下一个词（可以是EOS）
            context: 之前的词（不含BOS），只使用最后 n-1 个

        返回:
            float: 概率；词表外的词只得到一元平滑下限
        """
        history = self._context(context)
        p = (self._count(1, (), word) + self.k) / (self.num_tokens + self.k * len(self.vocabulary))
        for n in range(2, self.order + 1):
            h = history[len(history) - (n - 1):]
            p = (self._count(n, h, word) + self.k * p) / (self._totals[n].get(h, 0) + self.k)
        return p

    def log_prob(self, word: Hashable, context: Sequence[Hashable] = ()) -> float:
        return math.log(self.prob(word, context))

    def sentence_log_prob(self, sentence: Sequence[Hashable], eos: bool = True) -> float:
        """整句对数概率，eos为True时包含句末EOS项"""
        tokens = tuple(sentence) + ((self.eos,) if eos else ())
        return sum(self.log_prob(w, tokens[:i]) for i, w in enumerate(tokens))

    def perplexity(self, corpus: Sequence[Sequence[Hashable]]) -> float:
        """语料困惑度（计入每句的EOS）"""
        if not corpus:
            raise ArgumentError("语料不能为空")
        total = sum(self.sentence_log_prob(s) for s in corpus)
        count = sum(len(s) + 1 for s in corpus)
        return math.exp(-total / count)

    def distribution(self, context: Sequence[Hashable] = ()) -> Dict[Hashable, float]:
        """给定上下文时词表上的完整分布"""
        return {w: self.prob(w, context) for w in sorted(self.vocabulary, key=repr)}


def train_ngram_lm(corpus: Sequence[Sequence[Hashable]], order: int = 4, k: float = 0.1,
                   vocabulary: Optional[Iterable[Hashable]] = None) -> NGramLM:
    """
    在目标文本语料上训练语言模型

    参数:
        corpus: 句子列表
        order: 阶数
        k: 平滑常数
        vocabulary: 语料之外也要分配概率的词

    返回:
        NGramLM
    """
    lm = NGramLM(order=order, k=k, vocabulary=vocabulary).fit(corpus)
    logger.debug("语言模型训练完成", order=order, sentences=len(corpus), vocabulary=len(lm.vocabulary))
    return lm
