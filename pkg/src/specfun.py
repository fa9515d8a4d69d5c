#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
特殊函数模块
负责半整数/整数阶 Bessel 函数、归一化核剖面 B_d、Δ₁/Δ₂ 比值剖面、
临界半径普适极限以及大偏差速率
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Tuple, Union

import numpy as np
from scipy import optimize, special

from config.config import SPECFUN_CONFIG
from errors import DomainError, NumericalError

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# u → ∞ 时比值剖面的极限
FAR_FIELD_LIMIT = 1.0 / math.sqrt(2.0)

# Hankel 渐近展开的项数；u ≥ 12 时前 24 项单调递减
_HANKEL_TERMS = 24


@dataclass(frozen=True)
class BesselOrder:
    """Bessel 函数的阶 ν = two_nu / 2（维数 d 对应 two_nu = d）"""

    two_nu: int

    def __post_init__(self):
        if self.two_nu < 0:
            raise DomainError(f"Bessel 阶必须非负: two_nu={self.two_nu}")
        if self.two_nu > SPECFUN_CONFIG["max_dim"]:
            raise DomainError(
                f"不支持的 Bessel 阶 ν={self.two_nu / 2}（上限 {SPECFUN_CONFIG['max_dim'] / 2}）"
            )

    @property
    def nu(self) -> float:
        return self.two_nu / 2.0

    @property
    def is_half_integer(self) -> bool:
        return self.two_nu % 2 == 1

    @classmethod
    def for_dim(cls, d: int) -> "BesselOrder":
        """维数 d 对应的阶 d/2"""
        return cls(two_nu=int(d))


@dataclass(frozen=True)
class RatioProfilePoint:
    """比值剖面上的一个点"""

    u: float
    delta1: float
    delta2: float
    ratio: float


class CritLimitResult(NamedTuple):
    """临界半径普适极限（value）及取到下确界的 u（0 或 inf 表示两端极限）"""

    value: float
    argmin_u: float


def _as_array(u: ArrayLike) -> Tuple[np.ndarray, bool]:
    """把输入转成一维数组，并记住原来是否为标量"""
    arr = np.asarray(u, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _restore(out: np.ndarray, scalar: bool) -> ArrayLike:
    return float(out[0]) if scalar else out


def _check_nonnegative(u: np.ndarray):
    if not np.all(np.isfinite(u)):
        raise DomainError("自变量 u 必须是有限实数")
    if np.any(u < 0):
        raise DomainError(f"自变量 u 必须非负: min(u)={u.min()}")


def _check_dim(d: int, upper: int):
    if int(d) != d or d < 1 or d > upper:
        raise DomainError(f"不支持的维数 d={d}（允许 1..{upper}）")


def _bessel_series(nu: float, u: np.ndarray) -> np.ndarray:
    """幂级数 J_ν(u) = Σ (-1)^j (u/2)^{2j+ν} / (j! Γ(j+ν+1))"""
    half = 0.5 * u
    term = np.power(half, nu) / special.gamma(nu + 1.0)
    total = term.copy()
    q = -half * half
    for j in range(1, SPECFUN_CONFIG["series_terms"]):
        term = term * q / (j * (j + nu))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            break
    return total


def _hankel_j01(n: int, u: np.ndarray) -> np.ndarray:
    """J_0 / J_1 的 Hankel 渐近展开（u > 12）"""
    mu = 4.0 * n * n
    p = np.ones_like(u)
    q = np.zeros_like(u)
    term = np.ones_like(u)
    for m in range(1, _HANKEL_TERMS + 1):
        term = term * (mu - (2 * m - 1) ** 2) / (8.0 * m * u)
        if m % 2 == 0:
            p += (-1) ** (m // 2) * term
        else:
            q += (-1) ** ((m - 1) // 2) * term
    chi = u - (0.5 * n + 0.25) * math.pi
    return np.sqrt(2.0 / (math.pi * u)) * (p * np.cos(chi) - q * np.sin(chi))


def _bessel_large(two_nu: int, u: np.ndarray) -> np.ndarray:
    """u > 12：半整数阶用三角闭式起步，整数阶用 Hankel 起步，再向上递推（two_nu 可到 max_two_nu）"""
    if two_nu % 2 == 1:
        scale = np.sqrt(2.0 / (math.pi * u))
        prev = scale * np.cos(u)  # J_{-1/2}
        cur = scale * np.sin(u)  # J_{1/2}
        mu = 0.5
    else:
        prev = _hankel_j01(0, u)
        if two_nu == 0:
            return prev
        cur = _hankel_j01(1, u)
        mu = 1.0
    # 向上递推 J_{μ+1} = (2μ/u) J_μ − J_{μ−1}；u > 12 时 μ ≤ 13.5 基本处于振荡区，稳定
    while mu < two_nu / 2.0:
        prev, cur = cur, (2.0 * mu / u) * cur - prev
        mu += 1.0
    return cur


def bessel_j(order: BesselOrder, u: ArrayLike) -> ArrayLike:
    """
    第一类 Bessel 函数 J_ν(u)

    Args:
        order: 阶 ν = two_nu/2
        u: 非负自变量（标量或数组）

    Returns:
        J_ν(u)，形状与 u 相同
    """
    arr, scalar = _as_array(u)
    _check_nonnegative(arr)

    out = np.empty_like(arr)
    small = arr <= SPECFUN_CONFIG["series_switch"]
    if np.any(small):
        out[small] = _bessel_series(order.nu, arr[small])
    if np.any(~small):
        out[~small] = _bessel_large(order.two_nu, arr[~small])
    return _restore(out, scalar)


def _b_profile_array(d: int, u: np.ndarray) -> np.ndarray:
    """B_d(u) = Γ(d/2+1)(2/u)^{d/2} J_{d/2}(u)，u=0 处连续延拓为 1"""
    nu = d / 2.0
    out = np.empty_like(u)
    small = u <= SPECFUN_CONFIG["series_switch"]
    if np.any(small):
        us = u[small]
        q = -0.25 * us * us
        term = np.ones_like(us)
        total = np.ones_like(us)
        for j in range(1, SPECFUN_CONFIG["series_terms"]):
            term = term * q / (j * (j + nu))
            total += term
            if np.all(np.abs(term) <= 1e-17):
                break
        out[small] = total
    if np.any(~small):
        ul = u[~small]
        prefactor = np.exp(special.gammaln(nu + 1.0) + nu * np.log(2.0 / ul))
        out[~small] = prefactor * _bessel_large(int(d), ul)
    return out


def b_profile(d: int, u: ArrayLike) -> ArrayLike:
    """
    归一化核剖面 B_d(u)

    Args:
        d: 维数（1..27，上限来自内部需要的 ν+1）
        u: 非负自变量

    Returns:
        B_d(u)，B_d(0) = 1
    """
    _check_dim(d, SPECFUN_CONFIG["max_two_nu"])
    arr, scalar = _as_array(u)
    _check_nonnegative(arr)
    return _restore(_b_profile_array(int(d), arr), scalar)


def b_profile_deriv(d: int, u: ArrayLike) -> ArrayLike:
    """
    B_d 的导数，用恒等式 B_d'(u) = −u·B_{d+2}(u)/(d+2)

    Args:
        d: 维数（1..25）
        u: 非负自变量

    Returns:
        B_d'(u)，u=0 处为 0
    """
    _check_dim(d, SPECFUN_CONFIG["max_dim"])
    arr, scalar = _as_array(u)
    _check_nonnegative(arr)
    out = -arr * _b_profile_array(int(d) + 2, arr) / (d + 2.0)
    return _restore(out, scalar)


@lru_cache(maxsize=64)
def _delta_coefficients(d: int, terms: int = 40) -> Tuple[np.ndarray, np.ndarray]:
    """
    Δ₁、Δ₂ 关于 u² 的泰勒系数

    B_d(u) = Σ c_j u^{2j}；Δ₁ = −Σ_{j≥1} c_j u^{2j}；
    Δ₂ 的 u^{2m} 系数为 −2c_m − (d+2)·Σ_{j+k=m+1} 4jk c_j c_k（m=1 项恒为 0）
    """
    nu = d / 2.0
    c = np.empty(terms + 1)
    c[0] = 1.0
    for j in range(1, terms + 1):
        c[j] = -c[j - 1] / (4.0 * j * (j + nu))

    d1 = -c.copy()
    d1[0] = 0.0

    d2 = np.zeros(terms + 1)
    for m in range(2, terms + 1):
        cross = sum(4.0 * j * (m + 1 - j) * c[j] * c[m + 1 - j] for j in range(1, m + 1))
        d2[m] = -2.0 * c[m] - (d + 2.0) * cross
    return d1, d2


def delta_series(d: int, u: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """
    小 u 时用泰勒系数计算 Δ₁、Δ₂（Δ₂ = O(u⁴)，直接相减会丢失全部有效数字）

    Args:
        d: 维数
        u: 自变量（建议 u < 2）

    Returns:
        (Δ₁, Δ₂)
    """
    _check_dim(d, SPECFUN_CONFIG["max_dim"])
    arr, scalar = _as_array(u)
    _check_nonnegative(arr)
    d1c, d2c = _delta_coefficients(int(d))
    u2 = arr * arr
    # Horner
    delta1 = np.zeros_like(arr)
    delta2 = np.zeros_like(arr)
    for m in range(len(d1c) - 1, -1, -1):
        delta1 = delta1 * u2 + d1c[m]
        delta2 = delta2 * u2 + d2c[m]
    return _restore(delta1, scalar), _restore(delta2, scalar)


def near_diagonal_limit(d: int) -> float:
    """u → 0 时 Δ₁/√Δ₂ 的解析极限 √((d+4)/(3(d+2)))"""
    return math.sqrt((d + 4.0) / (3.0 * (d + 2.0)))


def ratio_profile_values(d: int, u: ArrayLike) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """
    向量化的比值剖面

    Args:
        d: 维数（1..25）
        u: 正自变量

    Returns:
        (Δ₁, Δ₂, Δ₁/√Δ₂)

    Raises:
        DomainError: u ≤ 0
        NumericalError: 某个 u 处 Δ₂ ≤ 0
    """
    _check_dim(d, SPECFUN_CONFIG["max_dim"])
    arr, scalar = _as_array(u)
    _check_nonnegative(arr)
    if np.any(arr == 0):
        raise DomainError("u=0 处比值为 0/0，请使用 near_diagonal_limit(d)")

    delta1 = np.empty_like(arr)
    delta2 = np.empty_like(arr)
    small = arr < SPECFUN_CONFIG["delta_series_switch"]
    if np.any(small):
        delta1[small], delta2[small] = delta_series(d, arr[small])
    if np.any(~small):
        ul = arr[~small]
        b = _b_profile_array(int(d), ul)
        bp = -ul * _b_profile_array(int(d) + 2, ul) / (d + 2.0)
        delta1[~small] = 1.0 - b
        delta2[~small] = 2.0 * (1.0 - b) - (d + 2.0) * bp * bp

    bad = delta2 <= 0
    if np.any(bad):
        where = arr[bad][0]
        logger.error(f"❌ Δ₂ ≤ 0: d={d}, u={where}")
        raise NumericalError(f"Δ₂ ≤ 0 at d={d}, u={where}")

    ratio = delta1 / np.sqrt(delta2)
    return _restore(delta1, scalar), _restore(delta2, scalar), _restore(ratio, scalar)


def ratio_profile(d: int, u: float) -> RatioProfilePoint:
    """
    单点比值剖面 Δ₁(u)/√Δ₂(u)

    Args:
        d: 维数
        u: 正的尺度化距离 λ·d_g

    Returns:
        RatioProfilePoint
    """
    delta1, delta2, ratio = ratio_profile_values(d, float(u))
    return RatioProfilePoint(u=float(u), delta1=delta1, delta2=delta2, ratio=ratio)


def crit_limit(
    d: int,
    u_max: float = SPECFUN_CONFIG["default_u_max"],
    coarse_step: float = SPECFUN_CONFIG["default_coarse_step"],
) -> CritLimitResult:
    """
    临界半径的普适极限 inf_u Δ₁/√Δ₂

    先在 (0, u_max] 上粗网格扫描，再在最优格点附近做黄金分割细化；
    两端的解析极限作为候选一并比较。

    Args:
        d: 维数
        u_max: 扫描上界（≥ 100）
        coarse_step: 粗网格步长（≤ 0.01）

    Returns:
        CritLimitResult(value, argmin_u)
    """
    _check_dim(d, SPECFUN_CONFIG["max_dim"])
    if u_max < 100:
        raise DomainError(f"u_max 必须 ≥ 100: {u_max}")
    if not (0 < coarse_step <= 0.01):
        raise DomainError(f"coarse_step 必须在 (0, 0.01] 内: {coarse_step}")

    n_points = int(math.floor(u_max / coarse_step + 1e-9))
    chunk = SPECFUN_CONFIG["grid_chunk"]
    best_value = math.inf
    best_index = -1
    for start in range(1, n_points + 1, chunk):
        idx = np.arange(start, min(start + chunk, n_points + 1))
        _, _, ratio = ratio_profile_values(d, idx * coarse_step)
        i = int(np.argmin(ratio))
        if ratio[i] < best_value:
            best_value = float(ratio[i])
            best_index = int(idx[i])

    u_best = best_index * coarse_step
    lo = max(u_best - coarse_step, 0.5 * coarse_step)
    hi = min(u_best + coarse_step, u_max)
    refined = optimize.minimize_scalar(
        lambda x: float(ratio_profile_values(d, x)[2]),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": SPECFUN_CONFIG["golden_tol"]},
    )
    if refined.fun < best_value:
        best_value, u_best = float(refined.fun), float(refined.x)

    candidates = [
        (best_value, u_best),
        (near_diagonal_limit(d), 0.0),
        (FAR_FIELD_LIMIT, math.inf),
    ]
    value, argmin_u = min(candidates, key=lambda c: c[0])
    logger.info(f"📐 crit_limit(d={d}) = {value:.10f}，argmin_u = {argmin_u}")
    return CritLimitResult(value=value, argmin_u=argmin_u)


def excursion_rate(d: int, theta: float) -> float:
    """
    大偏差速率 log sin θ / ((4π)^{d/2} Γ(d/2+1))

    Args:
        d: 维数
        theta: 角度，0 < θ ≤ π/2

    Returns:
        速率（θ < π/2 时为负）
    """
    if int(d) != d or d < 1:
        raise DomainError(f"维数必须为正整数: {d}")
    if not (0.0 < theta <= math.pi / 2):
        raise DomainError(f"θ 必须在 (0, π/2] 内: {theta}")
    log_norm = 0.5 * d * math.log(4.0 * math.pi) + special.gammaln(0.5 * d + 1.0)
    return math.log(math.sin(theta)) / math.exp(log_norm)


def log_sphere_area(b: int) -> float:
    """
    单位球面 S^{b-1} ⊂ R^b 面积的对数 log(2π^{b/2}/Γ(b/2))

    Args:
        b: 环境维数（≥ 1）

    Returns:
        log s_{b-1}
    """
    if int(b) != b or b < 1:
        raise DomainError(f"b 必须是 ≥ 1 的整数: {b}")
    return math.log(2.0) + 0.5 * b * math.log(math.pi) - float(special.gammaln(0.5 * b))


def log_ball_volume(d: int) -> float:
    """单位球体积 ω_d 的对数"""
    if int(d) != d or d < 1:
        raise DomainError(f"维数必须为正整数: {d}")
    return 0.5 * d * math.log(math.pi) - float(special.gammaln(0.5 * d + 1.0))
