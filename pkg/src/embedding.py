#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
谱嵌入的临界半径
由核射流精确计算有限 λ 下的比值 N/D，并在全体点对上搜索临界半径 r_λ
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
from scipy import linalg, optimize
from tqdm import tqdm

from config.config import SEARCH_CONFIG
from errors import DegeneratePairError, DomainError, NumericalError
from manifolds import (
    SPHERE_RADIUS,
    KernelJet,
    ManifoldSpec,
    SpectralCutoff,
    diagonal_ratio_limit,
    gram_deviation,
    kernel_grid,
    kernel_jet,
    sphere_exp,
    sphere_gram_scalar,
    sphere_kernel_values,
    torus_gram,
    torus_kernel_values,
    validate_points,
    wrap_separation,
)

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class Regime(str, Enum):
    """临界半径下确界取到的区域"""

    NEAR_DIAGONAL = "NearDiagonal"
    BULK = "Bulk"
    FAR_FIELD = "FarField"


@dataclass(frozen=True)
class RatioSample:
    """一个点对上的分子 N、分母 D 与比值 N/D"""

    x: np.ndarray
    y: np.ndarray
    geodesic: float
    numerator: float
    denominator: float
    ratio: float
    projection: float = 0.0  # wᵀG⁻¹w，即 ‖P_y(Δi)‖²

    def scaled_distance(self, lam: float) -> float:
        """u = λ·d_g"""
        return lam * self.geodesic


@dataclass(frozen=True)
class CriticalRadiusEstimate:
    """临界半径搜索结果"""

    lam: float
    r_lambda: float
    argmin: RatioSample
    regime: Regime
    search_evals: int

    @property
    def argmin_u(self) -> float:
        return self.argmin.scaled_distance(self.lam)


@dataclass
class SearchConfig:
    """临界半径搜索参数（默认值取自 SEARCH_CONFIG）"""

    grid_spacing: Optional[float] = None
    refine_cells: int = SEARCH_CONFIG["refine_cells"]
    refine_tol: float = SEARCH_CONFIG["refine_tol"]
    tie_tol: float = SEARCH_CONFIG["tie_tol"]
    threads: int = 1
    show_progress: bool = False

    def spacing_for(self, lam: float) -> float:
        if self.grid_spacing is not None:
            return self.grid_spacing
        return min(SEARCH_CONFIG["grid_spacing_scale"] / lam, SEARCH_CONFIG["max_grid_spacing"])


# ---------------------------------------------------------------------------
# 单个点对的精确比值
# ---------------------------------------------------------------------------


def _spd_factor(gram: np.ndarray):
    """对称正定分解；主元 < 1e-12·trace 视为失败"""
    trace = float(np.trace(gram))
    try:
        factor = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError as e:
        logger.error(f"❌ Gram 矩阵非正定: {e}")
        raise NumericalError(f"Gram 矩阵非正定: {e}")
    pivots = np.diag(factor[0]) ** 2
    if np.any(pivots < SEARCH_CONFIG["spd_pivot_rel"] * trace):
        raise NumericalError(f"Gram 矩阵主元过小: {pivots.min():.3e}（trace={trace:.3e}）")
    return factor


def ratio_from_jet(jet: KernelJet, x=None, y=None) -> RatioSample:
    """
    由核射流计算 N、D 和 N/D

    N = 2(1 − p)，‖P_y Δi‖² = wᵀG⁻¹w，D = 2√(N − wᵀG⁻¹w)

    Raises:
        DegeneratePairError: N − wᵀG⁻¹w ≤ 1e-14
        NumericalError: G 非正定
    """
    factor = _spd_factor(jet.gram)
    numerator = 2.0 * jet.gap
    projection = float(jet.grad_y @ linalg.cho_solve(factor, jet.grad_y))
    rest = numerator - projection
    if rest <= SEARCH_CONFIG["degenerate_floor"]:
        raise DegeneratePairError(f"N − wᵀG⁻¹w = {rest:.3e}，点对退化")
    denominator = 2.0 * math.sqrt(rest)
    return RatioSample(
        x=x,
        y=y,
        geodesic=jet.geodesic,
        numerator=numerator,
        denominator=denominator,
        ratio=numerator / denominator,
        projection=projection,
    )


def ratio_at(spec: ManifoldSpec, cutoff: SpectralCutoff, x, y) -> RatioSample:
    """
    点对 (x, y) 处有限 λ 下的精确临界半径比值

    Args:
        spec: 模型流形
        cutoff: 谱截断
        x, y: 点，要求 d_g(x,y) ≥ 1e-9/λ

    Returns:
        RatioSample

    Raises:
        DegeneratePairError: x 与 y 过近或 N − wᵀG⁻¹w ≤ 1e-14
    """
    xa = validate_points(spec, x)
    ya = validate_points(spec, y)
    jet = kernel_jet(spec, cutoff, xa, ya)
    if jet.geodesic < SEARCH_CONFIG["degenerate_guard"] / cutoff.lam:
        raise DegeneratePairError(f"d_g = {jet.geodesic:.3e} 低于退化阈值")
    return ratio_from_jet(jet, xa, ya)


def ratio_asymptotic(spec: ManifoldSpec, cutoff: SpectralCutoff, x, y) -> float:
    """
    用渐近分母 2√(2 − 2P − (d+2)λ⁻²‖∇_yP‖²) 计算的比值（仅作交叉检验）
    """
    jet = kernel_jet(spec, cutoff, x, y)
    numerator = 2.0 * jet.gap
    rest = numerator - (spec.dim + 2.0) / cutoff.lam**2 * float(jet.grad_y @ jet.grad_y)
    if rest <= SEARCH_CONFIG["degenerate_floor"]:
        raise DegeneratePairError(f"渐近分母退化: {rest:.3e}")
    return numerator / (2.0 * math.sqrt(rest))


def curvature_bound(spec: ManifoldSpec, cutoff: SpectralCutoff) -> float:
    """i_λ(M) 主曲率的上界：近对角线比值极限的倒数"""
    return 1.0 / diagonal_ratio_limit(spec, cutoff)


def pullback_check(spec: ManifoldSpec, cutoff: SpectralCutoff, points) -> float:
    """
    拉回度量检查：max_points ‖gram·(d+2)/λ² − I‖

    Args:
        spec: 模型流形
        cutoff: 谱截断
        points: 至少一个基点

    Returns:
        最大元范数偏差
    """
    pts = validate_points(spec, points)
    pts = np.atleast_2d(pts)
    if len(pts) < 1:
        raise DomainError("至少需要一个基点")
    if spec.is_torus:
        # 环面上 Gram 矩阵与基点无关
        return gram_deviation(spec, cutoff)
    return max(gram_deviation(spec, cutoff, y) for y in pts)


# ---------------------------------------------------------------------------
# 向量化比值（搜索用）
# ---------------------------------------------------------------------------


class _TorusRatio:
    """环面上按差向量 t 批量计算比值；G 与基点无关，只分解一次"""

    def __init__(self, cutoff: SpectralCutoff):
        self.cutoff = cutoff
        self.factor = _spd_factor(torus_gram(cutoff))
        self.evals = 0

    def from_values(self, gap: np.ndarray, grad: np.ndarray) -> np.ndarray:
        solved = linalg.cho_solve(self.factor, grad.T).T
        projection = np.sum(grad * solved, axis=1)
        rest = 2.0 * gap - projection
        out = np.full(gap.shape, np.inf)
        ok = rest > SEARCH_CONFIG["degenerate_floor"]
        out[ok] = 2.0 * gap[ok] / (2.0 * np.sqrt(rest[ok]))
        self.evals += len(gap)
        return out

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(t)
        _, gap, grad = torus_kernel_values(self.cutoff, t)
        return self.from_values(gap, grad)

    def scalar(self, t) -> float:
        return float(self(np.asarray(t, dtype=float).reshape(1, -1))[0])


class _SphereRatio:
    """球面上按测地距离批量计算比值（各向同性，只依赖一个角度）"""

    def __init__(self, cutoff: SpectralCutoff):
        self.cutoff = cutoff
        self.g = sphere_gram_scalar(cutoff)
        if self.g <= 0:
            raise NumericalError("球面 Gram 矩阵非正定")
        self.evals = 0

    def __call__(self, dist: np.ndarray) -> np.ndarray:
        angle = np.atleast_1d(np.asarray(dist, dtype=float)) / SPHERE_RADIUS
        _, gap, dp_dc = sphere_kernel_values(self.cutoff, np.cos(angle), angle=angle)
        # 在 y 的切标架中 x = cos γ·y + sin γ·e1，故 w = (f'(c) sin γ / r, 0)
        w = dp_dc * np.sin(angle) / SPHERE_RADIUS
        rest = 2.0 * gap - w * w / self.g
        out = np.full(angle.shape, np.inf)
        ok = rest > SEARCH_CONFIG["degenerate_floor"]
        out[ok] = 2.0 * gap[ok] / (2.0 * np.sqrt(rest[ok]))
        self.evals += len(angle)
        return out

    def scalar(self, dist) -> float:
        return float(self(np.array([float(dist)]))[0])


# ---------------------------------------------------------------------------
# 临界半径搜索
# ---------------------------------------------------------------------------


@dataclass(order=True)
class _Candidate:
    value: float
    geodesic: float
    point: np.ndarray = field(compare=False)


def _pick_cells(values: np.ndarray, coords: np.ndarray, count: int, min_sep: float) -> List[int]:
    """挑选比值最小且彼此分开的若干格点"""
    finite = np.flatnonzero(np.isfinite(values))
    if len(finite) == 0:
        return []
    pool = finite[np.argsort(values[finite], kind="stable")[: max(200 * count, 1000)]]
    chosen: List[int] = []
    for idx in pool:
        if all(np.linalg.norm(coords[idx] - coords[j]) > min_sep for j in chosen):
            chosen.append(int(idx))
            if len(chosen) == count:
                break
    return chosen


def _refine_torus(objective: _TorusRatio, start: np.ndarray, h: float, lower: float, tol: float) -> _Candidate:
    """在格点 start 附近细化；d=1 用有界标量搜索，d≥2 用单纯形法"""

    def fun(t) -> float:
        t = np.asarray(t, dtype=float).reshape(-1)
        if np.linalg.norm(wrap_separation(t)) < lower:
            return math.inf
        return objective.scalar(t)

    best = _Candidate(fun(start), float(np.linalg.norm(start)), start)
    if len(start) == 1:
        lo = max(start[0] - h, lower)
        hi = min(start[0] + h, 0.5)
        if hi > lo:
            res = optimize.minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": tol})
            point = np.array([float(res.x)])
            if res.fun < best.value:
                best = _Candidate(float(res.fun), float(abs(point[0])), point)
        return best

    simplex = np.vstack([start] + [start + h * e for e in np.eye(len(start))])
    res = optimize.minimize(
        fun,
        start,
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": tol, "fatol": 1e-13, "maxiter": 2000},
    )
    if res.fun < best.value:
        point = wrap_separation(np.asarray(res.x, dtype=float))
        best = _Candidate(float(res.fun), float(np.linalg.norm(point)), np.abs(point))
    return best


def _choose(candidates: Iterable[_Candidate], tie_tol: float) -> _Candidate:
    """取最小值；在 tie_tol 内并列时取 d_g 最小者"""
    ordered = sorted(candidates, key=lambda c: (c.value, c.geodesic))
    best_value = ordered[0].value
    ties = [c for c in ordered if c.value - best_value <= tie_tol]
    return min(ties, key=lambda c: c.geodesic)


def _run_refinements(tasks: List[Callable[[], _Candidate]], cfg: SearchConfig) -> List[_Candidate]:
    """并行执行细化任务，结果按任务顺序返回"""
    if cfg.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [pool.submit(task) for task in tasks]
            iterator = tqdm(futures, desc="细化候选", disable=not cfg.show_progress)
            return [f.result() for f in iterator]
    return [task() for task in tqdm(tasks, desc="细化候选", disable=not cfg.show_progress)]


def _torus_search(spec: ManifoldSpec, cutoff: SpectralCutoff, cfg: SearchConfig) -> Tuple[_Candidate, int]:
    lam = cutoff.lam
    d = spec.dim
    h = cfg.spacing_for(lam)
    M = max(int(math.ceil(1.0 / h)), 2 * cutoff.max_degree + 1)
    if d == 3:
        # T³ 上 1e-3 的绝对间距不可行，只保留 0.5/λ 的相对分辨率
        M = max(int(math.ceil(lam / SEARCH_CONFIG["grid_spacing_scale"])), 2 * cutoff.max_degree + 1)
        if lam > SEARCH_CONFIG["torus3_slow_lambda"]:
            logger.warning(f"⚠️ T³ 上 λ={lam:.1f} 的临界半径搜索会很慢（网格 {M}³）")
    logger.info(f"🔍 环面网格扫描: {spec.name}, M={M}")

    p, grad = kernel_grid(cutoff, M)
    # 格点球关于坐标反射对称，只需扫描 [0, 1/2]^d
    half = M // 2 + 1
    sl = (slice(0, half),) * d
    p = p[sl].reshape(-1)
    grad = np.stack([g[sl].reshape(-1) for g in grad], axis=1)
    axes = np.meshgrid(*([np.arange(half) / M] * d), indexing="ij")
    coords = np.stack([a.reshape(-1) for a in axes], axis=1)
    dist = np.linalg.norm(coords, axis=1)

    lower = SEARCH_CONFIG["near_diagonal_cut"] / lam
    keep = dist >= lower
    objective = _TorusRatio(cutoff)
    values = np.full(len(p), np.inf)
    values[keep] = objective.from_values((1.0 - p)[keep], grad[keep])

    cells = _pick_cells(values, coords, cfg.refine_cells, 2.0 / M)
    tasks = [
        (lambda c=coords[i]: _refine_torus(objective, c.copy(), 1.0 / M, lower, cfg.refine_tol)) for i in cells
    ]
    refined = _run_refinements(tasks, cfg)
    if not refined:
        raise DegeneratePairError("网格上所有候选点对都退化")
    return _choose(refined, cfg.tie_tol), objective.evals


def _sphere_search(cutoff: SpectralCutoff, cfg: SearchConfig) -> Tuple[_Candidate, int]:
    lam = cutoff.lam
    h = cfg.spacing_for(lam)
    lower = SEARCH_CONFIG["near_diagonal_cut"] / lam
    upper = math.pi * SPHERE_RADIUS
    grid = np.arange(lower, upper, h)
    grid = np.append(grid, upper)
    logger.info(f"🔍 球面角度扫描: {len(grid)} 个测地距离")
    objective = _SphereRatio(cutoff)
    values = objective(grid)
    cells = _pick_cells(values, grid[:, None], cfg.refine_cells, 2.0 * h)

    def refine(i: int) -> _Candidate:
        lo = max(grid[i] - h, lower)
        hi = min(grid[i] + h, upper)
        best = _Candidate(float(values[i]), float(grid[i]), np.array([grid[i]]))
        res = optimize.minimize_scalar(objective.scalar, bounds=(lo, hi), method="bounded", options={"xatol": cfg.refine_tol})
        if res.fun < best.value:
            best = _Candidate(float(res.fun), float(res.x), np.array([float(res.x)]))
        return best

    refined = _run_refinements([(lambda i=i: refine(i)) for i in cells], cfg)
    if not refined:
        raise DegeneratePairError("网格上所有候选点对都退化")
    return _choose(refined, cfg.tie_tol), objective.evals


def critical_radius(
    spec: ManifoldSpec, cutoff: SpectralCutoff, cfg: Optional[SearchConfig] = None
) -> CriticalRadiusEstimate:
    """
    搜索 i_λ(M) 的临界半径 r_λ = inf N/D

    环面利用平移不变性只扫描差向量，球面利用各向同性只扫描一个角度；
    d_g < 0.5/λ 的近对角区域由精确的对角线极限代替。

    Args:
        spec: 模型流形
        cutoff: 谱截断（k_λ ≥ 2d+3）
        cfg: 搜索参数

    Returns:
        CriticalRadiusEstimate
    """
    if cutoff.spec != spec:
        raise DomainError("谱截断与流形不一致")
    d = spec.dim
    if cutoff.k_lambda < 2 * d + 3:
        raise DomainError(f"k_λ={cutoff.k_lambda} 太小，至少需要 {2 * d + 3}")
    cfg = cfg or SearchConfig()
    lam = cutoff.lam

    if spec.is_torus:
        found, evals = _torus_search(spec, cutoff, cfg)
    else:
        found, evals = _sphere_search(cutoff, cfg)

    near = _Candidate(diagonal_ratio_limit(spec, cutoff), 0.0, np.zeros(1))
    best = _choose([found, near], cfg.tie_tol)

    if best is near:
        regime = Regime.NEAR_DIAGONAL
        base = np.zeros(d) if spec.is_torus else np.array([0.0, 0.0, 1.0])
        sample = RatioSample(x=base, y=base, geodesic=0.0, numerator=0.0, denominator=0.0, ratio=near.value)
    else:
        if spec.is_torus:
            x = np.mod(best.point, 1.0)
            y = np.zeros(d)
        else:
            y = np.array([0.0, 0.0, 1.0])
            x = sphere_exp(y, np.array([best.point[0], 0.0]))
        sample = ratio_at(spec, cutoff, x, y)
        regime = Regime.FAR_FIELD if best.geodesic >= SEARCH_CONFIG["far_field_dist"] else Regime.BULK

    estimate = CriticalRadiusEstimate(
        lam=lam, r_lambda=float(best.value), argmin=sample, regime=regime, search_evals=int(evals)
    )
    logger.info(
        f"✅ {spec.name} λ={lam:.4g}: r_λ={estimate.r_lambda:.8f}, 区域={regime.value}, u*={estimate.argmin_u:.4f}"
    )
    return estimate


# ---------------------------------------------------------------------------
# 近对角线下确界
# ---------------------------------------------------------------------------


def _local_directions(d: int, count: int) -> np.ndarray:
    """格点球对称群的基本区域内的方向"""
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        angles = np.linspace(0.0, 0.25 * math.pi, count)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dirs = np.array(
        [
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [1.0, 1.0, 1.0],
            [2.0, 1.0, 0.0],
            [2.0, 1.0, 1.0],
            [2.0, 2.0, 1.0],
            [3.0, 2.0, 1.0],
            [3.0, 1.0, 0.0],
        ]
    )[:count]
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def local_ratio_inf(spec: ManifoldSpec, cutoff: SpectralCutoff, scales: Optional[int] = None) -> float:
    """
    近对角点对 1e-9/λ ≤ d_g ≤ (λ log λ)⁻¹ 上比值的下确界

    Args:
        spec: 模型流形
        cutoff: 谱截断（λ ≥ 2π·10）
        scales: 对数均匀分布的尺度个数

    Returns:
        下确界
    """
    lam = cutoff.lam
    if lam < 2.0 * math.pi * 10 * (1 - 1e-12):
        raise DomainError(f"local_ratio_inf 需要 λ ≥ 2π·10: {lam}")
    scales = scales or SEARCH_CONFIG["local_scales"]
    lo = SEARCH_CONFIG["degenerate_guard"] / lam
    hi = 1.0 / (lam * math.log(lam))
    dists = np.geomspace(lo, hi, scales)

    candidates = [diagonal_ratio_limit(spec, cutoff)]
    skipped = 0
    if spec.is_torus:
        objective = _TorusRatio(cutoff)
        for e in _local_directions(spec.dim, SEARCH_CONFIG["local_directions"]):
            values = objective(dists[:, None] * e[None, :])
            skipped += int(np.sum(~np.isfinite(values)))
            candidates.append(_refine_scale(lambda s, e=e: objective.scalar(s * e), dists, values))
    else:
        objective = _SphereRatio(cutoff)
        values = objective(dists)
        skipped += int(np.sum(~np.isfinite(values)))
        candidates.append(_refine_scale(objective.scalar, dists, values))

    logger.debug(f"跳过 {skipped} 个退化尺度")
    value = float(min(candidates))
    logger.info(f"📏 {spec.name} λ={lam:.4g}: 近对角下确界 = {value:.8f}")
    return value


def _refine_scale(fun: Callable[[float], float], dists: np.ndarray, values: np.ndarray) -> float:
    """在最好的尺度两侧做有界搜索"""
    if not np.any(np.isfinite(values)):
        return math.inf
    i = int(np.argmin(values))
    lo = dists[max(i - 1, 0)]
    hi = dists[min(i + 1, len(dists) - 1)]
    best = float(values[i])
    if hi > lo:
        res = optimize.minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3 * lo})
        best = min(best, float(res.fun))
    return best
