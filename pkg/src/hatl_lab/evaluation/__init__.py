#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
评估模块
"""
