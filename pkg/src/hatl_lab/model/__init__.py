#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
模型模块
"""
