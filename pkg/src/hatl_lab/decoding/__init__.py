#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
解码模块：贪心/束搜索文本解码、CTC gloss解码与n-gram语言模型
"""
