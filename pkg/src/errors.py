#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
异常定义
数值库各模块共用的错误类型，CLI 据此映射退出码
"""

from typing import Optional


class WaveCritError(Exception):
    """所有库内错误的基类"""

    exit_code: int = 1


class DomainError(WaveCritError, ValueError):
    """参数或前置条件不满足（定义域错误）"""

    exit_code = 2


class ValidationError(WaveCritError, ValueError):
    """运行配置的数值超出允许范围"""

    exit_code = 2

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ResourceError(WaveCritError):
    """特征函数个数过大，超出资源上限"""

    exit_code = 3

    def __init__(self, k_lambda: int, limit: int):
        self.k_lambda = k_lambda
        self.limit = limit
        super().__init__(f"k_lambda={k_lambda} 超过上限 {limit}")


class DegeneratePairError(WaveCritError):
    """点对退化：比值为 0/0，需改用近对角线极限"""

    exit_code = 2


class NumericalError(WaveCritError, ArithmeticError):
    """数值异常（Δ₂ ≤ 0、Gram 矩阵非正定等），通常意味着上游实现有误"""

    exit_code = 2


class UsageError(WaveCritError):
    """未知子命令或参数"""

    exit_code = 64

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)
