#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
工具包初始化文件
"""

from .logger import configure_logging, get_logger

__all__ = ['configure_logging', 'get_logger']
