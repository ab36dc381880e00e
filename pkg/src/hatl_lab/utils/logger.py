#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
日志工具模块
提供基于structlog的日志记录功能
"""

import os
import sys
import logging
import atexit
from typing import Optional, Any
from logging.handlers import RotatingFileHandler

import structlog

# 定义日志级别
LOG_LEVEL_MAP = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "critical": logging.CRITICAL
}

APP_NAME = "hatl-lab"

# 全局变量以跟踪日志系统状态
_logging_configured = False
_log_handlers = []


def safe_filter_by_level(logger, method_name, event_dict):
    """安全的日志级别过滤器，处理logger为None的情况"""
    if logger is None:
        return event_dict

    level = getattr(logging, method_name.upper(), None)
    if level is None:
        return event_dict

    if not logger.isEnabledFor(level):
        raise structlog.DropEvent

    return event_dict


def ensure_dict_processor(logger, method_name, event_dict):
    """确保事件字典是字典类型

    处理不同类型的日志输入:
    - 如果是字符串: 将其作为事件名称
    - 如果是字典: 保持不变
    - 其它类型: 转为字符串作为事件名称
    """
    if isinstance(event_dict, dict):
        return event_dict
    if isinstance(event_dict, str):
        return {"event": event_dict}
    return {"event": str(event_dict)}


def safe_remove_processors_meta(logger, method_name, event_dict):
    """安全地移除处理器元数据"""
    event_dict = ensure_dict_processor(logger, method_name, event_dict)
    event_dict.pop("_from_structlog", None)
    event_dict.pop("_record", None)
    return event_dict


def add_app_info(logger, method_name, event_dict):
    """添加应用信息到日志事件中"""
    event_dict = ensure_dict_processor(logger, method_name, event_dict)
    event_dict.setdefault("app", APP_NAME)
    return event_dict


def _pre_chain():
    """标准库日志记录与structlog共用的前置处理器"""
    return [
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
    ]


def _json_formatter() -> logging.Formatter:
    return structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=_pre_chain(),
        processors=[
            safe_remove_processors_meta,
            structlog.processors.JSONRenderer(ensure_ascii=False)
        ]
    )


def configure_logging(
    console_level: str = "info",
    file_level: str = "debug",
    log_dir: Optional[str] = None,
    log_file: Optional[str] = None
) -> None:
    """
    配置日志记录系统

    参数:
        console_level: 控制台日志级别
        file_level: 文件日志级别
        log_dir: 日志文件目录，为None时不写文件
        log_file: 日志文件名，默认为 hatl-lab.log
    """
    global _logging_configured, _log_handlers

    # 避免重复配置
    if _logging_configured:
        return

    console_level = LOG_LEVEL_MAP.get(console_level.lower(), logging.INFO)
    file_level = LOG_LEVEL_MAP.get(file_level.lower(), logging.DEBUG)

    # 控制台使用stderr，stdout留给命令的结果输出
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(
        structlog.stdlib.ProcessorFormatter(
            foreign_pre_chain=_pre_chain(),
            processors=[
                safe_remove_processors_meta,
                structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())
            ]
        )
    )
    _log_handlers = [console_handler]

    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(log_dir, log_file or f"{APP_NAME}.log"),
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
            encoding="utf-8"
        )
        file_handler.setLevel(file_level)
        file_handler.setFormatter(_json_formatter())
        _log_handlers.append(file_handler)

    # 配置根日志记录器
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)
    root_logger.handlers = []
    for handler in _log_handlers:
        root_logger.addHandler(handler)

    structlog.configure(
        processors=[
            ensure_dict_processor,
            safe_filter_by_level,
            add_app_info,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M:%S"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    _logging_configured = True

    # 注册应用程序退出时的清理函数
    def cleanup_logging():
        for handler in _log_handlers:
            handler.flush()
            handler.close()

    atexit.register(cleanup_logging)


def attach_run_log(path: str, level: str = "debug") -> logging.Handler:
    """
    为单次运行追加一个JSON行格式的日志文件

    参数:
        path: 日志文件路径
        level: 文件日志级别

    返回:
        logging.Handler: 新建的处理器，运行结束后交给detach_run_log
    """
    if not _logging_configured:
        configure_logging()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setLevel(LOG_LEVEL_MAP.get(level.lower(), logging.DEBUG))
    handler.setFormatter(_json_formatter())
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    """移除attach_run_log添加的处理器"""
    logging.getLogger().removeHandler(handler)
    handler.flush()
    handler.close()


def get_logger(name: str, **initial_values: Any) -> structlog.stdlib.BoundLogger:
    """
    获取一个配置好的日志记录器

    参数:
        name: 日志记录器名称
        initial_values: 初始绑定值

    返回:
        配置好的structlog日志记录器
    """
    if not _logging_configured:
        configure_logging()
    return structlog.get_logger(name).bind(**initial_values)


def set_console_level(level: str) -> None:
    """调整控制台日志级别（命令行 --log-level 使用）"""
    if not _logging_configured:
        configure_logging()
    for handler in _log_handlers:
        if not isinstance(handler, RotatingFileHandler):
            handler.setLevel(LOG_LEVEL_MAP.get(level.lower(), logging.INFO))
