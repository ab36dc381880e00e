#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
基于事件驱动的运行事件管理器
控制器只产生事件，事件时间线文件、日志等由注册的处理函数负责
"""

import os
import traceback
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from hatl_lab.utils.logger import get_logger

# 创建模块级别的日志记录器
logger = get_logger("EventManager", module="core.event_manager")

ALL_EVENTS = "*"


@dataclass(frozen=True)
class RunEvent:
    """运行事件：轮次、事件类型、附加说明"""

    epoch: int
    event: str
    detail: str = ""

    def to_tsv(self) -> str:
        return f"{self.epoch}\t{self.event}\t{self.detail}"


class EventManager:
    """事件分发器，负责注册处理函数并按注册顺序分发事件"""

    # 定义控制器事件类型常量
    EVENT_WARMUP_END = "warmup_end"                  # 预热结束
    EVENT_PLATEAU_TICK = "plateau_tick"              # 平台期计数+1
    EVENT_RELEASE_SCHEDULED = "release_scheduled"    # 已安排解冻下一层
    EVENT_RELEASE_APPLIED = "release_applied"        # 解冻已生效
    EVENT_COOLDOWN_END = "cooldown_end"              # 冷却期结束
    EVENT_NEW_BEST = "new_best"                      # 主指标刷新最佳
    EVENT_STOP = "stop"                              # 早停

    def __init__(self):
        """初始化事件管理器"""
        self._handlers: Dict[str, List[Callable[[RunEvent], None]]] = {}

    def register_handler(self, event_type: str, handler: Callable[[RunEvent], None]) -> None:
        """
        注册事件处理函数

        参数:
            event_type: 事件类型，"*" 表示全部事件
            handler: 事件处理函数
        """
        self._handlers.setdefault(event_type, []).append(handler)

    def dispatch(self, event: RunEvent) -> RunEvent:
        """
        分发事件到所有处理函数，单个处理函数出错不影响其它处理函数

        参数:
            event: 运行事件

        返回:
            RunEvent: 事件对象
        """
        for handler in self._handlers.get(event.event, []) + self._handlers.get(ALL_EVENTS, []):
            try:
                handler(event)
            except Exception as e:
                logger.error("事件处理函数出错", event_type=event.event, epoch=event.epoch, error=str(e))
                logger.debug(traceback.format_exc())
        return event


class EventsTsvWriter:
    """把事件写成 events.tsv：epoch<TAB>event<TAB>detail"""

    HEADER = "epoch\tevent\tdetail"

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.HEADER + "\n")

    def __call__(self, event: RunEvent) -> None:
        with open(self.path, "a", encoding="utf-8", newline="\n") as f:
            f.write(event.to_tsv() + "\n")


def log_event(event: RunEvent) -> None:
    """把事件写入日志"""
    logger.info("控制器事件", epoch=event.epoch, event_type=event.event, detail=event.detail)


def read_events(path: str) -> List[RunEvent]:
    """读取 events.tsv"""
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if number == 1 and line == EventsTsvWriter.HEADER:
                continue
            if not line:
                continue
            epoch, event, detail = (line.split("\t") + ["", ""])[:3]
            events.append(RunEvent(int(epoch), event, detail))
    return events


def attach_default_handlers(manager: EventManager, events_path: Optional[str]) -> Optional[EventsTsvWriter]:
    """注册日志处理函数以及（可选的）events.tsv写入器"""
    manager.register_handler(ALL_EVENTS, log_event)
    if events_path is None:
        return None
    writer = EventsTsvWriter(events_path)
    manager.register_handler(ALL_EVENTS, writer)
    return writer
