#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
数据模块：合成数据生成、文件读写与批处理
"""
