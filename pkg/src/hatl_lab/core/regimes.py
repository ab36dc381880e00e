#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
微调方案
经典微调（骨干始终冻结）、全量微调（从第一轮起全部可训练）与 HATL（控制器驱动的逐层解冻）
三种方案共用同一个控制器，只是初始可训练集合与是否允许解冻不同
"""

from typing import Dict, FrozenSet, List, Optional, Type

from hatl_lab.core.controller import ControllerConfig, HATLController
from hatl_lab.core.event_manager import EventManager
from hatl_lab.model.layered_model import TRANSLATION_GROUP, LayeredModel
from hatl_lab.utils.errors import ConfigError


class RegimeBase:
    """微调方案基类，所有方案都应该继承这个类"""

    name = ""
    description = ""
    releasable = False

    def initial_trainable(self, model: LayeredModel) -> FrozenSet[str]:
        """
        第一轮的可训练集合 U_0

        参数:
            model: 分层模型

        返回:
            FrozenSet[str]: 参数组名集合
        """
        return frozenset({TRANSLATION_GROUP})

    def create_controller(self, config: ControllerConfig, n_layers: int,
                          event_manager: Optional[EventManager] = None) -> HATLController:
        """创建本方案使用的控制器；不可解冻的方案只使用早停规则"""
        return HATLController(config, n_layers, releasable=self.releasable, event_manager=event_manager)


class ClassicalRegime(RegimeBase):
    """经典微调：只训练翻译模型，骨干网络保持冻结"""

    name = "classical"
    description = "骨干冻结，只训练翻译模型"


class FullRegime(RegimeBase):
    """全量微调：所有层从第一轮起可训练"""

    name = "full"
    description = "所有参数从第一轮起可训练"

    def initial_trainable(self, model: LayeredModel) -> FrozenSet[str]:
        return frozenset(model.group_names())


class HatlRegime(RegimeBase):
    """HATL：从翻译模型开始，平台期后自顶向下逐层解冻骨干网络"""

    name = "hatl"
    description = "平台期驱动的逐层解冻"
    releasable = True


_REGISTRY: Dict[str, Type[RegimeBase]] = {
    cls.name: cls for cls in (ClassicalRegime, FullRegime, HatlRegime)
}


def available_regimes() -> List[str]:
    return list(_REGISTRY)


def get_regime(name: str) -> RegimeBase:
    """按名称取得方案实例"""
    if name not in _REGISTRY:
        raise ConfigError(f"未知的微调方案: {name}（可选 {available_regimes()}）")
    return _REGISTRY[name]()
