#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
运行上下文
把一次运行用到的配置、事件管理器、输出目录与日志组织在一起
"""

import os
from typing import Optional

from hatl_lab.core.config_manager import ConfigManager
from hatl_lab.core.event_manager import EventManager, EventsTsvWriter, attach_default_handlers
from hatl_lab.utils.logger import attach_run_log, detach_run_log, get_logger


class RunContext:
    """运行上下文，包含一次运行的各种管理器和输出路径"""

    def __init__(self, config_manager: ConfigManager, out_dir: Optional[str] = None,
                 event_manager: Optional[EventManager] = None):
        """
        初始化运行上下文

        参数:
            config_manager: 配置管理器
            out_dir: 输出目录，为None时不写任何文件
            event_manager: 事件管理器，为None时新建
        """
        self.config_manager = config_manager
        self.out_dir = out_dir
        self.event_manager = event_manager or EventManager()
        self.logger = get_logger("Run", regime=self.get_config("run", "regime"),
                                 task=self.get_config("run", "task"))
        self._log_handler = None
        self._events_writer: Optional[EventsTsvWriter] = None

    def path(self, name: str) -> Optional[str]:
        """
        输出文件路径

        返回:
            str: out_dir 下的路径；没有输出目录时为None
        """
        if self.out_dir is None:
            return None
        return os.path.join(self.out_dir, name)

    def get_config(self, group, key, default=None):
        return self.config_manager.get_config_value(group, key, default)

    def open(self) -> "RunContext":
        """创建输出目录，挂上 train.log 与 events.tsv 写入器"""
        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
            self._log_handler = attach_run_log(self.path("train.log"))
            self.config_manager.save_file(self.path("config.echo"))
        self._events_writer = attach_default_handlers(self.event_manager, self.path("events.tsv"))
        return self

    def close(self) -> None:
        if self._log_handler is not None:
            detach_run_log(self._log_handler)
            self._log_handler = None

    def __enter__(self) -> "RunContext":
        return self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
