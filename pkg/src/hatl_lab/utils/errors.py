#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
异常定义模块
所有对外抛出的错误都继承自HatlError，命令行根据类型映射退出码
"""

from typing import Optional


class HatlError(Exception):
    """项目内所有错误的基类"""

    exit_code = 1


class ConfigError(HatlError):
    """配置错误：未知键、非法取值、组合冲突"""

    exit_code = 2


class ArgumentError(HatlError, ValueError):
    """调用参数不满足前置条件"""

    exit_code = 2


class InfeasibleTargetError(ArgumentError):
    """CTC目标序列在给定帧数下无法对齐"""

    def __init__(self, frames: int, required: int):
        super().__init__(f"CTC目标不可行: 帧数 {frames} < 所需最少帧数 {required}")
        self.frames = frames
        self.required = required


class CheckpointError(HatlError):
    """检查点格式错误或与模型结构不匹配"""


class DatasetParseError(HatlError):
    """数据集文件解析失败"""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class NumericError(HatlError):
    """出现NaN/Inf等数值失败"""

    exit_code = 3


class ControllerError(HatlError):
    """控制器内部状态违例"""
