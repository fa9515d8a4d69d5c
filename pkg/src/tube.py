#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
球面中的 Weyl 管状邻域公式
负责 G_{q,b}、F_{N,j} 系数、嵌入环面的 Lipschitz-Killing 曲率、
球面系综随机波的精确超越概率以及大偏差速率收敛曲线；全部在对数空间中计算
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special
from tqdm import tqdm

from config.config import TUBE_CONFIG
from errors import DomainError, NumericalError
from manifolds import ManifoldSpec, SpectralCutoff, enumerate_basis, torus_gram
from specfun import excursion_rate, log_sphere_area

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

_HALF_PI = 0.5 * math.pi


class SignedLog(NamedTuple):
    """带符号的对数表示：value = sign · exp(log_abs)"""

    log_abs: float
    sign: int

    @property
    def value(self) -> float:
        return self.sign * math.exp(self.log_abs) if self.sign else 0.0


ZERO = SignedLog(-math.inf, 0)


@dataclass(frozen=True)
class TubeQuery:
    """管状邻域公式的输入：S^{N−1} 中的 d 维子流形与半径 θ"""

    ambient_dim_minus1: int
    intrinsic_dim: int
    theta: float
    lk: Sequence[float]

    def __post_init__(self):
        if not (0.0 < self.theta < _HALF_PI):
            raise DomainError(f"θ 必须在 (0, π/2) 内: {self.theta}")
        if len(self.lk) != self.intrinsic_dim + 1:
            raise DomainError(f"需要 {self.intrinsic_dim + 1} 个 Lipschitz-Killing 曲率，得到 {len(self.lk)}")
        if not self.lk[self.intrinsic_dim] > 0:
            raise DomainError(f"L_d 必须为正: {self.lk[self.intrinsic_dim]}")
        if self.ambient_dim_minus1 + 1 < self.intrinsic_dim + 3:
            raise DomainError(f"环境维数 N={self.ambient_dim_minus1 + 1} 太小（需要 ≥ d+3）")

    @property
    def ambient_dim(self) -> int:
        return self.ambient_dim_minus1 + 1


@dataclass(frozen=True)
class LogProbability:
    """对数超越概率及各 j 项的带符号对数"""

    log_p: float
    terms: List[SignedLog] = field(default_factory=list)

    @property
    def p(self) -> float:
        return math.exp(self.log_p)


@dataclass(frozen=True)
class LdpPoint:
    """大偏差曲线上的一个点"""

    theta: float
    lam: float
    k_lambda: int
    log_p_exact: float
    scaled_log_p: float
    ldp_rate: float

    @property
    def abs_gap(self) -> float:
        return abs(self.scaled_log_p - self.ldp_rate)

    def to_row(self) -> dict:
        return {
            "theta": self.theta,
            "lambda": self.lam,
            "k_lambda": self.k_lambda,
            "log_p_exact": self.log_p_exact,
            "scaled_log_p": self.scaled_log_p,
            "ldp_rate": self.ldp_rate,
            "abs_gap": self.abs_gap,
        }


# ---------------------------------------------------------------------------
# G_{q,b}(θ) 与 F_{N,j}(θ)
# ---------------------------------------------------------------------------


def _check_gb(q: int, b: int, theta: float):
    if int(q) != q or q < 0:
        raise DomainError(f"q 必须是非负整数: {q}")
    if int(b) != b or b < 1 or b > TUBE_CONFIG["max_b"]:
        raise DomainError(f"b 必须是 1..{TUBE_CONFIG['max_b']} 的整数: {b}")
    if not (0.0 <= theta <= _HALF_PI):
        raise DomainError(f"θ 必须在 [0, π/2] 内: {theta}")


def _log_integrand(q: int, b: int, r: float) -> float:
    """q·log cos r + (b−1)·log sin r"""
    out = 0.0
    if q:
        c = math.cos(r)
        out += q * math.log(c) if c > 0 else -math.inf
    if b > 1:
        s = math.sin(r)
        out += (b - 1) * math.log(s) if s > 0 else -math.inf
    return out


def g_integral(q: int, b: int, theta: float) -> SignedLog:
    """
    G_{q,b}(θ) = s_{b−1} ∫₀^θ cos^q r · sin^{b−1} r dr（对数空间）

    被积函数是对数凹的，先把它除以峰值，再把积分区间截断到
    log 被积函数距峰值 60 以内的窗口，最后做自适应求积。

    Args:
        q: cos 的幂次
        b: sin 的幂次加一（1..10⁶）
        theta: 上限，0 ≤ θ ≤ π/2

    Returns:
        SignedLog（θ=0 时为零）
    """
    _check_gb(q, b, theta)
    if theta == 0.0:
        return ZERO
    q, b = int(q), int(b)

    if b == 1:
        peak = 0.0
    elif q == 0:
        peak = theta
    else:
        peak = min(math.atan(math.sqrt((b - 1) / q)), theta)
    m = _log_integrand(q, b, peak)
    window = TUBE_CONFIG["log_window"]

    def shifted(r: float) -> float:
        return _log_integrand(q, b, r) - m + window

    lo, hi = 0.0, theta
    if b > 1 and peak > 0:
        tiny = peak * 1e-300 if peak * 1e-300 > 0 else 1e-300
        if shifted(tiny) < 0:
            lo = optimize.brentq(shifted, tiny, peak, xtol=1e-15)
    if peak < theta and shifted(theta) < 0:
        hi = optimize.brentq(shifted, peak, theta, xtol=1e-15)

    points = [peak] if lo < peak < hi else None
    value, _ = integrate.quad(
        lambda r: math.exp(_log_integrand(q, b, r) - m),
        lo,
        hi,
        points=points,
        epsabs=TUBE_CONFIG["quad_epsabs"],
        epsrel=TUBE_CONFIG["quad_epsrel"],
        limit=TUBE_CONFIG["quad_limit"],
    )
    if not value > 0:
        raise NumericalError(f"G_{{{q},{b}}}({theta}) 的积分非正: {value}")
    return SignedLog(log_sphere_area(b) + m + math.log(value), 1)


def g_integral_laplace(q: int, b: int, theta: float) -> SignedLog:
    """
    G_{q,b}(θ) 的 Laplace 主项 s_{b−1}·cos^qθ·sin^{b−1}θ / ((b−1)cot θ − q tan θ)

    θ 须在被积函数峰值左侧；b 很大时与 g_integral 的相对差为 O(1/b)。
    """
    _check_gb(q, b, theta)
    if not (0.0 < theta < _HALF_PI):
        raise DomainError(f"θ 必须在 (0, π/2) 内: {theta}")
    slope = (b - 1) / math.tan(theta) - q * math.tan(theta)
    if slope <= 0:
        raise DomainError(f"θ={theta} 不在峰值左侧，Laplace 主项不适用")
    return SignedLog(log_sphere_area(b) + _log_integrand(q, b, theta) - math.log(slope), 1)


def _signed_sum(terms: Sequence[SignedLog]) -> SignedLog:
    """对数空间中的带符号求和"""
    live = [t for t in terms if t.sign != 0]
    if not live:
        return ZERO
    log_abs, sign = special.logsumexp([t.log_abs for t in live], b=[t.sign for t in live], return_sign=True)
    if sign == 0 or not np.isfinite(log_abs):
        return ZERO
    return SignedLog(float(log_abs), int(sign))


def f_coeff(N: int, j: int, theta: float) -> SignedLog:
    """
    F_{N,j}(θ) = Σ_k (−4π)^{−k} (1/k!) j!/(j−2k)! · G_{j−2k, N−1+2k−j}(θ)

    Args:
        N: 环境维数（球面 S^{N−1}）
        j: 0 ≤ j ≤ N−2
        theta: 管半径

    Returns:
        SignedLog
    """
    if int(N) != N or int(j) != j or j < 0 or j > N - 2:
        raise DomainError(f"需要 0 ≤ j ≤ N−2: N={N}, j={j}")
    N, j = int(N), int(j)
    terms = []
    for k in range(j // 2 + 1):
        g = g_integral(j - 2 * k, N - 1 + 2 * k - j, theta)
        if g.sign == 0:
            continue
        log_coef = -k * math.log(4.0 * math.pi) - special.gammaln(k + 1) + special.gammaln(j + 1) - special.gammaln(j - 2 * k + 1)
        terms.append(SignedLog(float(log_coef) + g.log_abs, (-1) ** k))
    return _signed_sum(terms)


# ---------------------------------------------------------------------------
# 环面的超越概率
# ---------------------------------------------------------------------------


def _require_torus(spec: ManifoldSpec):
    if not spec.is_torus:
        raise DomainError(f"精确超越概率只对平坦环面提供: {spec.name}")


def torus_lk(spec: ManifoldSpec, cutoff: SpectralCutoff) -> List[float]:
    """
    i_λ(T^d) 在诱导度量下的 Lipschitz-Killing 曲率 L_0..L_d

    诱导度量平移不变因而是平坦的：L_d = √det(gram)，其余为 0。
    """
    _require_torus(spec)
    if cutoff.spec != spec:
        raise DomainError("谱截断与流形不一致")
    sign, logdet = np.linalg.slogdet(torus_gram(cutoff))
    if sign <= 0:
        raise NumericalError("环面 Gram 矩阵非正定")
    return [0.0] * spec.dim + [math.exp(0.5 * logdet)]


def tube_probability(query: TubeQuery) -> LogProbability:
    """log[Σ_j F_{N,j}(θ)·L_j / s_{N−1}]"""
    N = query.ambient_dim
    terms = []
    for j, lj in enumerate(query.lk):
        if lj == 0:
            terms.append(ZERO)
            continue
        f = f_coeff(N, j, query.theta)
        sign = f.sign * (1 if lj > 0 else -1)
        terms.append(SignedLog(f.log_abs + math.log(abs(lj)), sign) if f.sign else ZERO)
    total = _signed_sum(terms)
    if total.sign <= 0:
        raise NumericalError(f"管状公式给出非正的概率（θ={query.theta}）")
    log_p = total.log_abs - log_sphere_area(N)
    if log_p > 0:
        logger.warning(f"⚠️ θ={query.theta} 处管状公式给出 P > 1，超出管半径的有效范围")
    return LogProbability(log_p=log_p, terms=terms)


def excursion_prob_exact(
    spec: ManifoldSpec, cutoff: SpectralCutoff, theta: float, lk: Optional[Sequence[float]] = None
) -> LogProbability:
    """
    平坦环面上球面系综随机波的精确超越概率

    Args:
        spec: 平坦环面
        cutoff: 谱截断（k_λ ≥ d+3）
        theta: 0 < θ < π/2，须在管半径以内（由蒙特卡洛验证）
        lk: 可选的 L_0..L_d（默认由 torus_lk 计算）

    Returns:
        LogProbability
    """
    _require_torus(spec)
    if lk is None:
        lk = torus_lk(spec, cutoff)
    query = TubeQuery(
        ambient_dim_minus1=cutoff.k_lambda - 1, intrinsic_dim=spec.dim, theta=float(theta), lk=list(lk)
    )
    result = tube_probability(query)
    logger.debug(f"{spec.name} k={cutoff.k_lambda} θ={theta}: log P = {result.log_p:.10f}")
    return result


def ldp_curve(
    spec: ManifoldSpec,
    theta: float,
    lambdas: Optional[Sequence[float]] = None,
    bigNs: Optional[Sequence[int]] = None,
    threads: int = 1,
    show_progress: bool = False,
) -> List[LdpPoint]:
    """
    大偏差收敛曲线：每个 λ 给出 λ^{−d}·log P_exact 及解析速率

    Args:
        spec: 平坦环面
        theta: 0 < θ < π/2
        lambdas: λ 列表（或用 bigNs 精确指定格点截断）
        bigNs: 整数频率上限列表
        threads: 并行线程数（输出顺序与输入一致）

    Returns:
        LdpPoint 列表
    """
    _require_torus(spec)
    if not (0.0 < theta < _HALF_PI):
        raise DomainError(f"θ 必须在 (0, π/2) 内: {theta}")
    if bigNs is not None:
        cutoffs_args = [dict(bigN=int(n)) for n in bigNs]
    elif lambdas is not None:
        cutoffs_args = [dict(lam=float(l)) for l in lambdas]
    else:
        raise DomainError("需要 lambdas 或 bigNs")
    rate = excursion_rate(spec.dim, theta)

    def one(kwargs) -> LdpPoint:
        cutoff = enumerate_basis(spec, **kwargs)
        log_p = excursion_prob_exact(spec, cutoff, theta).log_p
        return LdpPoint(
            theta=float(theta),
            lam=cutoff.lam,
            k_lambda=cutoff.k_lambda,
            log_p_exact=log_p,
            scaled_log_p=log_p / cutoff.lam**spec.dim,
            ldp_rate=rate,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(tqdm(pool.map(one, cutoffs_args), total=len(cutoffs_args), disable=not show_progress))
    else:
        points = [one(a) for a in tqdm(cutoffs_args, desc="λ 扫描", disable=not show_progress)]
    for pt in points:
        logger.info(f"📉 λ={pt.lam:.4g}: λ^-d·log P = {pt.scaled_log_p:.6f}（速率 {rate:.6f}）")
    return points
