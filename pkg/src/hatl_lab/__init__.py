#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
HATL 实验室
分层自适应迁移学习（渐进式解冻）的桌面级实验环境
"""

__version__ = "0.3.0"
