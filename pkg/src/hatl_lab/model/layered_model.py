#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
分层模型模块
f(x;Θ) = t(b(x;W_b); W_t)：有序、可逐层冻结的骨干网络 L_1..L_n 加翻译模型 t
"""

import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import torch
import torch.nn as nn

from hatl_lab.utils.errors import ArgumentError, CheckpointError, ConfigError
from hatl_lab.utils.logger import get_logger

logger = get_logger("LayeredModel", module="model.layered_model")

TRANSLATION_GROUP = "t"
_BACKBONE_PARAM = re.compile(r"^backbone\.layers\.(\d+)\.")

# 文本词表中的特殊符号
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
TEXT_SPECIALS = 3


@dataclass(frozen=True)
class ModelConfig:
    """模型尺寸配置"""

    input_dim: int = 16
    gloss_vocab: int = 12  # 不含空白符
    text_vocab: int = 18  # 含特殊符号
    layers: int = 10
    backbone_dim: int = 32
    hidden: int = 64
    encoder_layers: int = 3
    decoder_layers: int = 1
    heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.1
    max_text_len: int = 32

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError(f"骨干网络至少需要2层: layers={self.layers}")
        for name in ("input_dim", "gloss_vocab", "text_vocab", "backbone_dim", "hidden",
                     "encoder_layers", "decoder_layers", "heads", "ff_dim", "max_text_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"模型尺寸必须为正数: {name}={getattr(self, name)}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} 不能被 heads={self.heads} 整除")
        if self.text_vocab <= TEXT_SPECIALS:
            raise ConfigError(f"文本词表过小: text_vocab={self.text_vocab}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout 必须在 [0, 1) 内: {self.dropout}")

    @property
    def gloss_classes(self) -> int:
        """帧级分类数：gloss数 + 空白符"""
        return self.gloss_vocab + 1

    @classmethod
    def from_config(cls, config_manager, gloss_vocab: int, text_vocab: int,
                    input_dim: int) -> "ModelConfig":
        """由配置管理器和数据集维度构造"""
        get = config_manager.get_config_value
        return cls(
            input_dim=input_dim,
            gloss_vocab=gloss_vocab,
            text_vocab=text_vocab,
            layers=get("model", "layers"),
            backbone_dim=get("model", "backbone_dim"),
            hidden=get("model", "hidden"),
            encoder_layers=get("model", "encoder_layers"),
            decoder_layers=get("model", "decoder_layers"),
            heads=get("model", "heads"),
            ff_dim=get("model", "ff_dim"),
            dropout=get("model", "dropout"),
            max_text_len=get("model", "max_text_len"),
        )


@dataclass
class ParamSnapshot:
    """参数快照：全部参数的拷贝及其对应的轮次与验证指标"""

    params: "OrderedDict[str, torch.Tensor]"
    epoch: int = 0
    metric: float = 0.0


class BackboneLayer(nn.Module):
    """仿射变换 + 因果时间混合 + tanh 非线性"""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.affine = nn.Linear(in_dim, out_dim)
        self.temporal = nn.Linear(in_dim, out_dim, bias=False)
        self.residual = in_dim == out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # 第0帧的“前一帧”取自身，恒定输入因此得到恒定输出
        previous = torch.cat([x[:, :1], x[:, :-1]], dim=1)
        h = torch.tanh(self.affine(x) + self.temporal(previous))
        return x + h if self.residual else h


class Backbone(nn.Module):
    """有序的骨干层次 L_1..L_n，L_1 最靠近输入"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        dims = [config.input_dim] + [config.backbone_dim] * config.layers
        self.layers = nn.ModuleList(BackboneLayer(dims[i], dims[i + 1]) for i in range(config.layers))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        h = frames
        for layer in self.layers:
            h = layer(h)
        return h


class LayeredModel(nn.Module):
    """桌面级手语翻译模型：骨干网络 + 编码器-解码器翻译模型"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config)

        # 翻译模型 t：骨干逐帧分类头、编码器、gloss头、解码器
        self.bb_head = nn.Linear(config.backbone_dim, config.gloss_classes)
        self.encoder_in = nn.Linear(config.backbone_dim, config.hidden)
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(config.hidden, config.heads, config.ff_dim,
                                       config.dropout, activation="gelu", batch_first=True),
            num_layers=config.encoder_layers,
            enable_nested_tensor=False,
        )
        self.gloss_head = nn.Linear(config.hidden, config.gloss_classes)
        self.text_embedding = nn.Embedding(config.text_vocab, config.hidden)
        self.text_position = nn.Embedding(config.max_text_len, config.hidden)
        self.decoder = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(config.hidden, config.heads, config.ff_dim,
                                       config.dropout, activation="gelu", batch_first=True),
            num_layers=config.decoder_layers,
        )
        self.text_head = nn.Linear(config.hidden, config.text_vocab)

        self._tags = OrderedDict((name, layer_tag(name)) for name, _ in self.named_parameters())
        self._trainable = frozenset(self.group_names())

    # ------------------------------------------------------------------
    # 参数分组
    # ------------------------------------------------------------------
    def group_names(self) -> List[str]:
        """全部参数组：L1..Ln 与 t"""
        return [f"L{m}" for m in range(1, self.config.layers + 1)] + [TRANSLATION_GROUP]

    def parameter_groups(self) -> "OrderedDict[str, List[Tuple[str, nn.Parameter]]]":
        """按组返回 (参数名, 参数) 列表"""
        groups = OrderedDict((name, []) for name in self.group_names())
        for name, param in self.named_parameters():
            groups[self._tags[name]].append((name, param))
        return groups

    def count_parameters(self, groups: Optional[Iterable[str]] = None) -> int:
        """统计参数个数，groups为None时统计全部"""
        selected = set(self.group_names() if groups is None else groups)
        return sum(p.numel() for name, p in self.named_parameters() if self._tags[name] in selected)

    @property
    def trainable_groups(self) -> frozenset:
        return self._trainable

    def set_trainable(self, groups: Iterable[str]) -> None:
        """
        设置可训练集合 U，其余参数关闭梯度

        参数:
            groups: 组名集合，必须包含翻译模型 t
        """
        groups = frozenset(groups)
        if TRANSLATION_GROUP not in groups:
            raise ConfigError("可训练集合必须包含翻译模型 t")
        unknown = groups - set(self.group_names())
        if unknown:
            raise ConfigError(f"未知的参数组: {sorted(unknown)}")
        for name, param in self.named_parameters():
            active = self._tags[name] in groups
            param.requires_grad_(active)
            if not active:
                param.grad = None
        self._trainable = groups
        logger.debug("更新可训练集合", groups=sorted(groups, key=self.group_names().index))

    # ------------------------------------------------------------------
    # 前向计算
    # ------------------------------------------------------------------
    def encode(self, frames: torch.Tensor, frame_pad: Optional[torch.Tensor] = None):
        """
        骨干网络 + 编码器

        参数:
            frames: B × G × d_in
            frame_pad: B × G，True 表示填充帧

        返回:
            (memory, bb_frame_logits, enc_gloss_logits)
        """
        if frames.dim() != 3 or frames.shape[1] == 0:
            raise ArgumentError(f"帧序列不能为空: shape={tuple(frames.shape)}")
        features = self.backbone(frames)
        bb_logits = self.bb_head(features)
        memory = self.encoder(self.encoder_in(features), src_key_padding_mask=frame_pad)
        return memory, bb_logits, self.gloss_head(memory)

    def decode_step(self, memory: torch.Tensor, text_in: torch.Tensor,
                    frame_pad: Optional[torch.Tensor] = None,
                    text_pad: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        解码器：给定前缀输出每个位置的下一个词logits

        参数:
            memory: B × G × hidden
            text_in: B × S 输入前缀（以BOS开头）

        返回:
            torch.Tensor: B × S × V_text
        """
        length = text_in.shape[1]
        if length > self.config.max_text_len:
            raise ArgumentError(f"文本前缀超过最大长度: {length} > {self.config.max_text_len}")
        positions = torch.arange(length, device=text_in.device)
        x = self.text_embedding(text_in) + self.text_position(positions).unsqueeze(0)
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool, device=text_in.device), 1)
        h = self.decoder(x, memory, tgt_mask=causal, tgt_key_padding_mask=text_pad,
                         memory_key_padding_mask=frame_pad)
        return self.text_head(h)

    def forward(self, frames: torch.Tensor, text_in: torch.Tensor,
                frame_pad: Optional[torch.Tensor] = None,
                text_pad: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """
        一次前向同时给出三个输出头

        参数:
            frames: B × G × d_in（也接受单样本 G × d_in）
            text_in: B × S 教师强制输入（也接受单样本 S）

        返回:
            dict: bb_frame_logits, enc_gloss_logits, text_logits
        """
        single = frames.dim() == 2
        if single:
            frames = frames.unsqueeze(0)
            text_in = text_in.unsqueeze(0)
        memory, bb_logits, gloss_logits = self.encode(frames, frame_pad)
        text_logits = self.decode_step(memory, text_in, frame_pad, text_pad)
        outputs = {
            "bb_frame_logits": bb_logits,
            "enc_gloss_logits": gloss_logits,
            "text_logits": text_logits,
        }
        if single:
            outputs = {key: value.squeeze(0) for key, value in outputs.items()}
        return outputs

    # ------------------------------------------------------------------
    # 快照
    # ------------------------------------------------------------------
    def snapshot(self, epoch: int = 0, metric: float = 0.0) -> ParamSnapshot:
        """拷贝全部参数"""
        params = OrderedDict((name, p.detach().clone()) for name, p in self.named_parameters())
        return ParamSnapshot(params=params, epoch=epoch, metric=metric)

    def restore(self, snapshot: ParamSnapshot) -> None:
        """恢复快照，参数与拍摄时逐位一致；不触碰优化器状态"""
        self.load_arrays(snapshot.params)

    def load_arrays(self, arrays: Dict[str, torch.Tensor], prefix: str = "") -> None:
        """
        按名称载入参数

        参数:
            arrays: 参数名 -> 张量
            prefix: 只载入以该前缀开头的参数，其余参数必须全部提供
        """
        own = OrderedDict((n, p) for n, p in self.named_parameters() if n.startswith(prefix))
        missing = set(own) - set(arrays)
        unexpected = {n for n in arrays if n.startswith(prefix)} - set(own)
        if missing or unexpected:
            raise CheckpointError(
                f"模型结构不匹配: 缺少 {sorted(missing)[:5]}，多余 {sorted(unexpected)[:5]}")
        with torch.no_grad():
            for name, param in own.items():
                value = torch.as_tensor(arrays[name])
                if tuple(value.shape) != tuple(param.shape):
                    raise CheckpointError(
                        f"参数形状不匹配: {name} {tuple(value.shape)} != {tuple(param.shape)}")
                param.copy_(value.to(dtype=param.dtype))


def layer_tag(name: str) -> str:
    """参数名 -> 所属组（L1..Ln 或 t）"""
    match = _BACKBONE_PARAM.match(name)
    if match:
        return f"L{int(match.group(1)) + 1}"
    if name.startswith("backbone."):
        raise ConfigError(f"骨干网络参数不属于任何层: {name}")
    return TRANSLATION_GROUP


def build_model(config: ModelConfig, seed: int) -> LayeredModel:
    """
    按种子确定性地构建模型（64位浮点）

    参数:
        config: 模型尺寸
        seed: 初始化种子

    返回:
        LayeredModel: 所有参数组可训练的新模型
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = LayeredModel(config).to(torch.float64)
    logger.info("模型构建完成", seed=seed, layers=config.layers,
                parameters=model.count_parameters(),
                backbone_parameters=model.count_parameters(model.group_names()[:-1]))
    return model
