#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
解码模块
文本：贪心解码、融合n-gram语言模型的束搜索、穷举搜索；gloss：带空白偏置与温度的CTC最优路径解码
"""

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from hatl_lab.decoding.ngram_lm import NGramLM
from hatl_lab.model.layered_model import BOS_ID, EOS_ID, PAD_ID, LayeredModel
from hatl_lab.training.ctc import BLANK
from hatl_lab.utils.errors import ArgumentError, ConfigError

TokenSeq = Tuple[int, ...]
ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class BeamConfig:
    """解码参数"""

    width: int = 8
    lm_weight: float = 0.7
    max_len: int = 24
    blank_bias: float = 0.4
    temperature: float = 0.9

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError(f"束宽至少为1: {self.width}")
        if self.max_len < 1:
            raise ConfigError(f"max_len 至少为1: {self.max_len}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature 必须为正数: {self.temperature}")
        if self.lm_weight < 0:
            raise ConfigError(f"lm_weight 不能为负: {self.lm_weight}")

    @classmethod
    def from_config(cls, config_manager) -> "BeamConfig":
        get = config_manager.get_config_value
        return cls(
            width=get("decode", "beam_width"),
            lm_weight=get("decode", "lm_weight"),
            max_len=get("decode", "max_len"),
            blank_bias=get("decode", "blank_bias"),
            temperature=get("decode", "temperature"),
        )


@dataclass(frozen=True)
class Hypothesis:
    """一个完成的假设：词序列（不含EOS）与融合得分"""

    tokens: TokenSeq
    score: float
    ended: bool = True  # False 表示因达到 max_len 而结束

    def sort_key(self) -> tuple:
        # 得分高者优先；同分时比较词编号序列（以EOS结尾的序列视为多一个EOS词）
        return (-self.score, self.tokens + ((EOS_ID,) if self.ended else ()))


@contextmanager
def _inference(model: LayeredModel):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        model.train(was_training)


def _as_frames(frames: ArrayLike) -> torch.Tensor:
    tensor = torch.as_tensor(frames, dtype=torch.float64)
    if tensor.dim() == 2:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 3 or tensor.shape[1] == 0:
        raise ArgumentError(f"帧序列不能为空: shape={tuple(tensor.shape)}")
    return tensor


def _step_log_probs(model: LayeredModel, memory: torch.Tensor, prefixes: Sequence[TokenSeq]) -> np.ndarray:
    """
    一批等长前缀的下一个词对数概率

    参数:
        memory: 1 × G × hidden，单个样本的编码
        prefixes: 不含BOS的前缀，长度必须相同

    返回:
        np.ndarray: len(prefixes) × V_text，PAD/BOS 为 -inf
    """
    text_in = torch.tensor([(BOS_ID,) + tuple(p) for p in prefixes], dtype=torch.long)
    logits = model.decode_step(memory.expand(len(prefixes), -1, -1), text_in)[:, -1]
    logits[:, PAD_ID] = -torch.inf
    logits[:, BOS_ID] = -torch.inf
    return F.log_softmax(logits, dim=-1).numpy()


def _lm_score(lm: Optional[NGramLM], lm_weight: float, token: int, prefix: TokenSeq) -> float:
    if lm is None or lm_weight == 0.0:
        return 0.0
    return lm_weight * lm.log_prob(token, prefix)


def greedy_decode(model: LayeredModel, frames: ArrayLike, max_len: int) -> TokenSeq:
    """
    逐步取最大概率的词，同分时取编号最小的词

    参数:
        model: 分层模型
        frames: G × d_in 帧特征
        max_len: 最多生成的词数

    返回:
        TokenSeq: 不含EOS的词序列
    """
    if max_len < 1:
        raise ArgumentError(f"max_len 至少为1: {max_len}")
    with _inference(model):
        memory, _, _ = model.encode(_as_frames(frames))
        tokens: TokenSeq = ()
        for _ in range(max_len):
            lp = _step_log_probs(model, memory, [tokens])[0]
            token = int(np.argmax(lp))
            if token == EOS_ID:
                break
            tokens += (token,)
    return tokens


def greedy_decode_batch(model: LayeredModel, frames: torch.Tensor, frame_pad: Optional[torch.Tensor],
                        max_len: int) -> List[TokenSeq]:
    """
    对一个填充后的批次并行贪心解码（开发集逐轮评估使用）

    返回:
        List[TokenSeq]: 每个样本的词序列
    """
    with _inference(model):
        memory, _, _ = model.encode(frames, frame_pad)
        size = frames.shape[0]
        text_in = torch.full((size, 1), BOS_ID, dtype=torch.long)
        done = [False] * size
        outputs: List[List[int]] = [[] for _ in range(size)]
        for _ in range(max_len):
            logits = model.decode_step(memory, text_in, frame_pad)[:, -1]
            logits[:, PAD_ID] = -torch.inf
            logits[:, BOS_ID] = -torch.inf
            step = torch.argmax(logits, dim=-1)
            for i in range(size):
                if done[i]:
                    continue
                token = int(step[i])
                if token == EOS_ID:
                    done[i] = True
                else:
                    outputs[i].append(token)
            if all(done):
                break
            text_in = torch.cat([text_in, step.unsqueeze(1)], dim=1)
    return [tuple(o) for o in outputs]


def _expand(score: float, tokens: TokenSeq, row: np.ndarray, max_len: int,
            lm: Optional[NGramLM], lm_weight: float) -> List[Tuple[Hypothesis, bool]]:
    """一个前缀的全部一步扩展：(假设, 是否继续扩展)"""
    candidates = []
    for token in range(row.shape[0]):
        if token in (PAD_ID, BOS_ID):
            continue
        total = score + float(row[token]) + _lm_score(lm, lm_weight, token, tokens)
        if token == EOS_ID:
            candidates.append((Hypothesis(tokens, total, ended=True), False))
        else:
            extended = tokens + (token,)
            # 达到 max_len 的假设直接完成
            candidates.append((Hypothesis(extended, total, ended=False), len(extended) < max_len))
    return candidates


def _beam(model: LayeredModel, memory: torch.Tensor, width: int, max_len: int,
          lm: Optional[NGramLM], lm_weight: float) -> Hypothesis:
    live: List[Tuple[float, TokenSeq]] = [(0.0, ())]
    finished: List[Hypothesis] = []
    # 宽度大于1时同步跟踪宽度1的路径，与束共用每一步的解码器调用
    greedy: Optional[Tuple[float, TokenSeq]] = (0.0, ()) if width > 1 else None
    greedy_result: Optional[Hypothesis] = None
    for _ in range(max_len):
        if not live and greedy is None:
            break
        prefixes = [tokens for _, tokens in live]
        greedy_row = None
        if greedy is not None:
            if greedy[1] not in prefixes:
                prefixes.append(greedy[1])
            greedy_row = prefixes.index(greedy[1])
        lp = _step_log_probs(model, memory, prefixes)

        if greedy is not None:
            hyp, alive = min(_expand(greedy[0], greedy[1], lp[greedy_row], max_len, lm, lm_weight),
                             key=lambda item: item[0].sort_key())
            if alive:
                greedy = (hyp.score, hyp.tokens)
            else:
                greedy, greedy_result = None, hyp

        if not live:
            continue
        candidates = []
        for (score, tokens), row in zip(live, lp):
            candidates.extend(_expand(score, tokens, row, max_len, lm, lm_weight))
        candidates.sort(key=lambda item: item[0].sort_key())
        live = []
        for hyp, alive in candidates[:width]:
            if alive:
                live.append((hyp.score, hyp.tokens))
            else:
                finished.append(hyp)
        # 得分只会下降：已完成的最好假设严格优于所有存活假设时束结束
        best_finished = min(finished, key=Hypothesis.sort_key) if finished else None
        if live and best_finished is not None and best_finished.score > max(s for s, _ in live):
            live = []
    best = min(finished, key=Hypothesis.sort_key)
    if greedy_result is not None:
        best = min(best, greedy_result, key=Hypothesis.sort_key)
    return best


def beam_search(model: LayeredModel, frames: ArrayLike, cfg: BeamConfig,
                lm: Optional[NGramLM] = None) -> Hypothesis:
    """
    束搜索：得分 = 模型对数概率 + lm_weight × 语言模型对数概率，不做长度归一化

    参数:
        model: 分层模型
        frames: G × d_in 帧特征
        cfg: 解码参数
        lm: 语言模型，为None时只用模型得分

    返回:
        Hypothesis: 得分最高的完成假设；同一得分函数下不低于宽度1的结果
    """
    with _inference(model):
        memory, _, _ = model.encode(_as_frames(frames))
        return _beam(model, memory, cfg.width, cfg.max_len, lm, cfg.lm_weight)


def score_sequence(model: LayeredModel, frames: ArrayLike, tokens: Sequence[int], max_len: int,
                   lm: Optional[NGramLM] = None, lm_weight: float = 0.0) -> float:
    """
    按束搜索的得分函数给一个完整序列打分；长度小于 max_len 时计入EOS

    返回:
        float: 融合得分
    """
    tokens = tuple(int(t) for t in tokens)
    if len(tokens) > max_len:
        raise ArgumentError(f"序列长度 {len(tokens)} 超过 max_len={max_len}")
    steps = tokens + ((EOS_ID,) if len(tokens) < max_len else ())
    with _inference(model):
        memory, _, _ = model.encode(_as_frames(frames))
        score = 0.0
        for i, token in enumerate(steps):
            lp = _step_log_probs(model, memory, [tokens[:i]])[0]
            score += float(lp[token]) + _lm_score(lm, lm_weight, token, tokens[:i])
    return score


def exhaustive_search(model: LayeredModel, frames: ArrayLike, max_len: int,
                      lm: Optional[NGramLM] = None, lm_weight: float = 0.0) -> Hypothesis:
    """
    枚举所有长度不超过 max_len 的序列，返回全局最优（仅用于很小的词表）

    返回:
        Hypothesis: 与 beam_search 相同得分函数下的最优假设
    """
    with _inference(model):
        memory, _, _ = model.encode(_as_frames(frames))
        vocab = model.config.text_vocab
        content = [t for t in range(vocab) if t not in (PAD_ID, BOS_ID, EOS_ID)]
        best: Optional[Hypothesis] = None
        cache = {}

        def step(prefix: TokenSeq) -> np.ndarray:
            if prefix not in cache:
                cache[prefix] = _step_log_probs(model, memory, [prefix])[0]
            return cache[prefix]

        for length in range(max_len + 1):
            for tokens in itertools.product(content, repeat=length):
                score = 0.0
                for i, token in enumerate(tokens):
                    score += float(step(tokens[:i])[token]) + _lm_score(lm, lm_weight, token, tokens[:i])
                ended = length < max_len
                if ended:
                    score += float(step(tokens)[EOS_ID]) + _lm_score(lm, lm_weight, EOS_ID, tokens)
                hyp = Hypothesis(tuple(tokens), score, ended)
                if best is None or hyp.sort_key() < best.sort_key():
                    best = hyp
    return best


def ctc_gloss_decode(logits: ArrayLike, cfg: Optional[BeamConfig] = None,
                     blank_bias: Optional[float] = None, temperature: Optional[float] = None) -> TokenSeq:
    """
    CTC gloss 最优路径解码

    logits 先除以温度并归一化，空白符对数概率减去偏置后再归一化，
    逐帧取最大（同分取编号最小），合并连续重复后去掉空白符

    参数:
        logits: G × (V+1) 帧级logits（已归一化的对数概率同样适用）
        cfg: 解码参数，提供 blank_bias 与 temperature
        blank_bias / temperature: 显式覆盖 cfg 中的取值

    返回:
        TokenSeq: gloss序列
    """
    cfg = cfg or BeamConfig()
    bias = cfg.blank_bias if blank_bias is None else blank_bias
    temp = cfg.temperature if temperature is None else temperature
    if temp <= 0:
        raise ConfigError(f"temperature 必须为正数: {temp}")
    x = torch.as_tensor(logits, dtype=torch.float64).detach()
    if x.dim() != 2:
        raise ArgumentError(f"需要 G × (V+1) 的logits: shape={tuple(x.shape)}")
    lp = F.log_softmax(x / temp, dim=-1)
    lp[:, BLANK] -= bias
    lp = F.log_softmax(lp, dim=-1)
    best_path = np.argmax(lp.numpy(), axis=-1)
    out = []
    previous = None
    for label in best_path.tolist():
        if label != previous and label != BLANK:
            out.append(int(label))
        previous = label
    return tuple(out)
