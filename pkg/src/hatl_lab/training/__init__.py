#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
训练模块：CTC、损失与优化器
"""
