#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
HATL 控制器
按轮次跟踪验证指标，检测平台期，安排逐层解冻，冷却、阈值衰减与早停
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from hatl_lab.core.event_manager import EventManager, RunEvent
from hatl_lab.utils.errors import ConfigError, ControllerError, DatasetParseError
from hatl_lab.utils.logger import get_logger

logger = get_logger("Controller", module="core.controller")

MAXIMIZE = "max"
MINIMIZE = "min"

# 指标名 -> 改进方向
METRIC_DIRECTIONS = {"bleu4": MAXIMIZE, "ctc": MINIMIZE}
PRIMARY_METRIC = "bleu4"

CONTINUE = "continue"
SCHEDULE_RELEASE = "release"
STOP = "stop"

PHASE_WARMUP = "warmup"
PHASE_MONITORING = "monitoring"
PHASE_COOLDOWN = "cooldown"
PHASE_FINISHED = "finished"


@dataclass(frozen=True)
class ControllerConfig:
    """控制器超参数"""

    monitored: Sequence[str] = ("ctc", "bleu4")
    warmup_epochs: int = 2
    patience: int = 4
    window: int = 3
    deltas: Dict[str, float] = field(default_factory=lambda: {"bleu4": 0.002, "ctc": 0.003})
    taus: Dict[str, float] = field(default_factory=lambda: {"bleu4": 0.002, "ctc": 0.003})
    delta_decay: float = 0.95
    decay_every: int = 5
    cooldown: int = 3
    early_stop: int = 5
    criterion2: str = "best"

    def __post_init__(self):
        if not self.monitored:
            raise ConfigError("至少需要一个监控指标")
        for name in self.monitored:
            if name not in METRIC_DIRECTIONS:
                raise ConfigError(f"不支持的监控指标: {name}")
            if self.deltas.get(name, 0.0) <= 0 or self.taus.get(name, 0.0) <= 0:
                raise ConfigError(f"指标 {name} 的阈值必须为正数")
        if self.warmup_epochs < 0 or self.patience < 1 or self.window < 1:
            raise ConfigError("warmup_epochs 不能为负，patience 与 window 至少为1")
        if self.cooldown < 0 or self.early_stop < 1 or self.decay_every < 1:
            raise ConfigError("cooldown 不能为负，early_stop 与 decay_every 至少为1")
        if not 0.0 < self.delta_decay <= 1.0:
            raise ConfigError(f"delta_decay 必须在 (0, 1] 内: {self.delta_decay}")
        if self.criterion2 not in ("best", "smoothed"):
            raise ConfigError(f"criterion2 只能是 best 或 smoothed: {self.criterion2}")

    @classmethod
    def from_config(cls, config_manager) -> "ControllerConfig":
        """s2g2t 同时监控 CTC 与 BLEU-4，s2t 只监控 BLEU-4"""
        get = config_manager.get_config_value
        task = get("run", "task")
        monitored = ("ctc", "bleu4") if task == "s2g2t" else ("bleu4",)
        return cls(
            monitored=monitored,
            warmup_epochs=get("controller", "warmup_epochs"),
            patience=get("controller", "patience"),
            window=get("controller", "window"),
            deltas={"bleu4": get("controller", "delta_bleu4"), "ctc": get("controller", "delta_ctc")},
            taus={"bleu4": get("controller", "tau_bleu4"), "ctc": get("controller", "tau_ctc")},
            delta_decay=get("controller", "delta_decay"),
            decay_every=get("controller", "decay_every"),
            cooldown=get("controller", "cooldown"),
            early_stop=get("controller", "early_stop"),
            criterion2=get("controller", "criterion2"),
        )


@dataclass
class MetricHistory:
    """单个指标的原始值 M(e)、滑动平均 M̄(e) 与历史最佳 M′(e)"""

    name: str
    direction: str
    window: int
    values: List[float] = field(default_factory=list)
    smoothed: List[float] = field(default_factory=list)
    best: Optional[float] = None

    def update(self, value: float) -> Optional[float]:
        """
        记录新一轮的值

        返回:
            Optional[float]: 更新前的最佳值（第一轮为None）
        """
        previous_best = self.best
        self.values.append(float(value))
        recent = self.values[-self.window:]
        self.smoothed.append(sum(recent) / len(recent))
        if previous_best is None or self.improvement(value, previous_best) > 0:
            self.best = float(value)
        return previous_best

    def improvement(self, value: float, reference: float) -> float:
        """按改进方向计算 value 相对 reference 的提升量"""
        return value - reference if self.direction == MAXIMIZE else reference - value

    def to_dict(self) -> dict:
        return {"name": self.name, "direction": self.direction, "window": self.window,
                "values": list(self.values), "smoothed": list(self.smoothed), "best": self.best}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricHistory":
        return cls(**data)


@dataclass
class ControllerState:
    """控制器的全部可序列化状态"""

    phase: str = PHASE_WARMUP
    epoch: int = 0
    release_pointer: int = 0  # 下一个待解冻的层号，0 表示没有剩余层
    released: List[int] = field(default_factory=list)
    pending_release: Optional[int] = None
    plateau_streak: int = 0
    deltas: Dict[str, float] = field(default_factory=dict)
    taus: Dict[str, float] = field(default_factory=dict)
    cooldown_remaining: int = 0
    early_stop_streak: int = 0
    best_epoch: int = 0
    histories: Dict[str, MetricHistory] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {key: value for key, value in self.__dict__.items() if key != "histories"}
        data["released"] = list(self.released)
        data["deltas"] = dict(self.deltas)
        data["taus"] = dict(self.taus)
        data["histories"] = {name: h.to_dict() for name, h in self.histories.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerState":
        data = dict(data)
        histories = {name: MetricHistory.from_dict(h) for name, h in data.pop("histories", {}).items()}
        return cls(histories=histories, **data)


@dataclass(frozen=True)
class EpochDecision:
    """一轮观察后的决定及日志记录"""

    kind: str
    layer: Optional[int] = None
    record: Dict[str, object] = field(default_factory=dict)


class HATLController:
    """逐层解冻状态机：观察指标、安排解冻、冷却、阈值衰减与早停"""

    def __init__(self, config: ControllerConfig, n_layers: int, releasable: bool = True,
                 event_manager: Optional[EventManager] = None):
        """
        初始化控制器

        参数:
            config: 控制器超参数
            n_layers: 骨干网络层数 n，解冻从 L_n 开始自顶向下
            releasable: 为False时不安排任何解冻（经典/全量微调只使用早停规则）
            event_manager: 事件管理器，为None时事件只保存在 timeline 中
        """
        self.config = config
        self.n_layers = n_layers
        self.event_manager = event_manager
        self.timeline: List[RunEvent] = []
        self.best_snapshot = None
        self.state = ControllerState(
            release_pointer=n_layers if releasable else 0,
            deltas={name: config.deltas[name] for name in config.monitored},
            taus={name: config.taus[name] for name in config.monitored},
            histories={name: MetricHistory(name, METRIC_DIRECTIONS[name], config.window)
                       for name in config.monitored},
        )

    # ------------------------------------------------------------------
    # 状态查询
    # ------------------------------------------------------------------
    @property
    def finished(self) -> bool:
        return self.state.phase == PHASE_FINISHED

    @property
    def layers_remaining(self) -> bool:
        return self.state.release_pointer >= 1 and self.state.pending_release is None

    def _emit(self, event: str, detail: str = "", epoch: Optional[int] = None) -> None:
        run_event = RunEvent(self.state.epoch if epoch is None else epoch, event, detail)
        self.timeline.append(run_event)
        if self.event_manager is not None:
            self.event_manager.dispatch(run_event)

    # ------------------------------------------------------------------
    # 轮次开始：应用待定的解冻
    # ------------------------------------------------------------------
    def begin_epoch(self) -> Optional[int]:
        """
        在新一轮开始时处理待定解冻（不涉及模型）：移动指针、进入冷却、清空平台计数

        返回:
            Optional[int]: 本轮新解冻的层号 m；没有待定解冻时为None
        """
        state = self.state
        if self.finished:
            raise ControllerError("控制器已停止，不能开始新的轮次")
        layer = state.pending_release
        if layer is None:
            return None
        state.released.append(layer)
        state.release_pointer = layer - 1
        state.pending_release = None
        state.cooldown_remaining = self.config.cooldown
        state.plateau_streak = 0
        if state.cooldown_remaining > 0:
            state.phase = PHASE_COOLDOWN
        self._emit(EventManager.EVENT_RELEASE_APPLIED, f"L{layer}", epoch=state.epoch + 1)
        logger.info("解冻骨干层", layer=f"L{layer}", epoch=state.epoch + 1,
                    released=len(state.released))
        return layer

    def remember_best(self, snapshot) -> None:
        """保存主指标最佳时的参数快照，供解冻前恢复"""
        self.best_snapshot = snapshot

    def apply_pending(self, model, optimizer_builder: Callable):
        """
        恢复最佳快照、把下一层加入可训练集合、按LLRD重建优化器并进入冷却

        参数:
            model: LayeredModel
            optimizer_builder: 接收可训练集合 U、返回新优化器的函数

        返回:
            新优化器；没有待定解冻时返回None
        """
        if self.state.pending_release is None:
            return None
        if self.best_snapshot is None:
            raise ControllerError("没有可恢复的最佳快照")
        model.restore(self.best_snapshot)
        layer = self.begin_epoch()
        trainable = set(model.trainable_groups) | {f"L{layer}"}
        model.set_trainable(trainable)
        return optimizer_builder(frozenset(trainable))

    # ------------------------------------------------------------------
    # 轮次结束：观察指标并作出决定
    # ------------------------------------------------------------------
    def _is_plateau(self, name: str, previous_best: Optional[float]) -> bool:
        history = self.state.histories[name]
        value = history.values[-1]
        deviation = abs(value - history.smoothed[-1])
        stable = deviation <= self.state.deltas[name]
        if self.config.criterion2 == "smoothed":
            return stable and deviation <= self.state.taus[name]
        if previous_best is None:
            return False
        return stable and history.improvement(value, previous_best) < self.state.taus[name]

    def decay_thresholds(self) -> None:
        """每 decay_every 轮把每个 Δ 乘以 delta_decay，τ 不变"""
        state = self.state
        if state.epoch > 0 and state.epoch % self.config.decay_every == 0:
            for name in state.deltas:
                state.deltas[name] *= self.config.delta_decay
            logger.debug("阈值衰减", epoch=state.epoch, deltas=dict(state.deltas))

    def observe_epoch(self, metrics: Dict[str, float]) -> EpochDecision:
        """
        每轮验证后调用一次

        参数:
            metrics: 指标名 -> 本轮验证值，必须包含所有监控指标

        返回:
            EpochDecision: continue / release / stop
        """
        if self.finished:
            raise ControllerError("控制器已停止，不再作出决定")
        missing = [name for name in self.config.monitored if name not in metrics]
        if missing:
            raise ConfigError(f"缺少监控指标: {missing}")

        state = self.state
        state.epoch += 1
        epoch = state.epoch
        previous_best = {name: state.histories[name].update(metrics[name]) for name in self.config.monitored}

        primary = PRIMARY_METRIC if PRIMARY_METRIC in state.histories else self.config.monitored[0]
        primary_history = state.histories[primary]
        new_best = (previous_best[primary] is None
                    or primary_history.improvement(primary_history.values[-1], previous_best[primary]) > 0)
        if new_best:
            state.best_epoch = epoch
            state.early_stop_streak = 0
            self._emit(EventManager.EVENT_NEW_BEST, f"{primary}={primary_history.values[-1]:.6f}")

        kind = CONTINUE
        layer = None
        if self.config.warmup_epochs == 0 and epoch == 1:
            # 无预热时在第一轮标记进入监控
            self._emit(EventManager.EVENT_WARMUP_END)
        if epoch <= self.config.warmup_epochs:
            state.phase = PHASE_WARMUP
            if epoch == self.config.warmup_epochs:
                self._emit(EventManager.EVENT_WARMUP_END)
        elif state.cooldown_remaining > 0:
            state.phase = PHASE_COOLDOWN
            state.cooldown_remaining -= 1
            if state.cooldown_remaining == 0:
                self._emit(EventManager.EVENT_COOLDOWN_END)
        else:
            state.phase = PHASE_MONITORING
            if all(self._is_plateau(name, previous_best[name]) for name in self.config.monitored):
                state.plateau_streak += 1
                self._emit(EventManager.EVENT_PLATEAU_TICK, f"streak={state.plateau_streak}")
            else:
                state.plateau_streak = 0

            if state.plateau_streak >= self.config.patience and self.layers_remaining:
                layer = state.release_pointer
                state.pending_release = layer
                kind = SCHEDULE_RELEASE
                self._emit(EventManager.EVENT_RELEASE_SCHEDULED, f"L{layer}")
            elif self.state.release_pointer < 1 and self.state.pending_release is None:
                # 已无可解冻的层，启用早停计数
                if not new_best:
                    state.early_stop_streak += 1
                if state.early_stop_streak >= self.config.early_stop:
                    kind = STOP

        self.decay_thresholds()
        if kind == STOP:
            state.phase = PHASE_FINISHED
            self._emit(EventManager.EVENT_STOP, f"best_epoch={state.best_epoch}")

        record = {
            "epoch": epoch,
            "phase": state.phase,
            "metrics": {name: float(metrics[name]) for name in self.config.monitored},
            "smoothed": {name: state.histories[name].smoothed[-1] for name in self.config.monitored},
            "plateau_streak": state.plateau_streak,
            "early_stop_streak": state.early_stop_streak,
            "deltas": dict(state.deltas),
        }
        return EpochDecision(kind=kind, layer=layer, record=record)

    # ------------------------------------------------------------------
    # 序列化
    # ------------------------------------------------------------------
    def state_dict(self) -> dict:
        return {"state": self.state.to_dict(),
                "timeline": [[e.epoch, e.event, e.detail] for e in self.timeline]}

    def load_state_dict(self, data: dict) -> None:
        self.state = ControllerState.from_dict(data["state"])
        self.timeline = [RunEvent(int(epoch), event, detail) for epoch, event, detail in data["timeline"]]


def simulate(controller: HATLController, trace: Sequence[Dict[str, float]]) -> List[RunEvent]:
    """
    不训练模型，按指标轨迹逐轮驱动控制器

    参数:
        controller: 新建的控制器
        trace: 每轮一个 指标名 -> 值 的字典

    返回:
        List[RunEvent]: 事件时间线
    """
    for metrics in trace:
        controller.begin_epoch()
        decision = controller.observe_epoch(metrics)
        if decision.kind == STOP:
            break
    return list(controller.timeline)


def load_metric_trace(path: str, monitored: Sequence[str]) -> List[Dict[str, float]]:
    """
    读取指标轨迹CSV：表头包含监控指标名（可以有 epoch 等其他列），每行一轮

    参数:
        path: CSV文件路径
        monitored: 需要读取的指标名

    返回:
        List[Dict[str, float]]: 每轮的指标
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [name for name in monitored if name not in (reader.fieldnames or [])]
        if missing:
            raise DatasetParseError(f"指标轨迹缺少列: {missing}", path, 1)
        trace = []
        for row in reader:
            try:
                trace.append({name: float(row[name]) for name in monitored})
            except (TypeError, ValueError):
                raise DatasetParseError("指标值不是数字", path, reader.line_num) from None
    return trace
