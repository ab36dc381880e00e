#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
核心模块：配置、事件、控制器、训练方案与检查点
"""
