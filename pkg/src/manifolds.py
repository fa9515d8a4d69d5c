#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
模型流形与谱投影核
负责平坦环面 T^d 与圆球面 S² 的特征基枚举、测地距离、核射流（kernel jet）
以及局部 Weyl 律诊断；所有流形的体积都归一化为 1
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from config.config import MANIFOLD_CONFIG
from errors import DomainError, ResourceError
from specfun import b_profile, log_ball_volume

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SPHERE_RADIUS = MANIFOLD_CONFIG["sphere_radius"]

# 闭不等式 λ_n ≤ λ 的浮点容差（相对）
_CUTOFF_RTOL = 1e-12

# 每次向量化求和时 (点数 × 模式数) 的上限，控制内存
_CHUNK_ENTRIES = 4_000_000


class ManifoldKind(str, Enum):
    """模型流形种类"""

    FLAT_TORUS = "flat_torus"
    SPHERE2 = "sphere2"


@dataclass(frozen=True)
class ManifoldSpec:
    """模型流形：平坦环面 [0,1)^d（d=1,2,3）或半径 (4π)^{-1/2} 的球面 S²"""

    kind: ManifoldKind
    dim: int

    def __post_init__(self):
        if self.kind == ManifoldKind.FLAT_TORUS and self.dim not in (1, 2, 3):
            raise DomainError(f"环面维数必须是 1、2 或 3: {self.dim}")
        if self.kind == ManifoldKind.SPHERE2 and self.dim != 2:
            raise DomainError(f"球面 S² 的维数必须是 2: {self.dim}")

    @classmethod
    def torus(cls, d: int) -> "ManifoldSpec":
        return cls(ManifoldKind.FLAT_TORUS, int(d))

    @classmethod
    def sphere2(cls) -> "ManifoldSpec":
        return cls(ManifoldKind.SPHERE2, 2)

    @classmethod
    def from_name(cls, name: str) -> "ManifoldSpec":
        """从命令行名称构造：torus1 / torus2 / torus3 / sphere2"""
        if name in ("torus1", "torus2", "torus3"):
            return cls.torus(int(name[-1]))
        if name in ("sphere2", "sphere"):
            return cls.sphere2()
        raise DomainError(f"未知的流形: {name}")

    @property
    def name(self) -> str:
        return f"torus{self.dim}" if self.is_torus else "sphere2"

    @property
    def is_torus(self) -> bool:
        return self.kind == ManifoldKind.FLAT_TORUS

    @property
    def volume(self) -> float:
        """模型流形的体积都归一化为 1"""
        return 1.0

    @property
    def point_dim(self) -> int:
        """点坐标的长度（球面用 R³ 中的单位向量）"""
        return self.dim if self.is_torus else 3


@dataclass(frozen=True, eq=False)
class SpectralCutoff:
    """
    λ 层的特征基

    环面：全格点 n（‖n‖ ≤ λ/2π，字典序）决定核；基函数顺序为
    [常数, 半格点上的 √2cos, 半格点上的 √2sin]。
    球面：次数 ℓ（4πℓ(ℓ+1) ≤ λ²），每个次数 2ℓ+1 个实球谐函数。
    """

    spec: ManifoldSpec
    lam: float
    k_lambda: int
    lattice: np.ndarray = field(repr=False)
    half_lattice: np.ndarray = field(repr=False)
    degrees: np.ndarray = field(repr=False)
    bigN: Optional[int] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        """每个基函数的特征值 λ_n（与基函数顺序一致）"""
        if self.spec.is_torus:
            norms = 2.0 * math.pi * np.linalg.norm(self.half_lattice, axis=1)
            return np.concatenate([[0.0], norms, norms])
        per_degree = np.sqrt(4.0 * math.pi * self.degrees * (self.degrees + 1.0))
        return np.repeat(per_degree, 2 * self.degrees + 1)

    @property
    def indices(self) -> List[Tuple]:
        """模式标识：环面 ("const"|"cos"|"sin", n)，球面 (ℓ, m)"""
        if self.spec.is_torus:
            zero = tuple([0] * self.spec.dim)
            modes = [("const", zero)]
            modes += [("cos", tuple(int(v) for v in n)) for n in self.half_lattice]
            modes += [("sin", tuple(int(v) for v in n)) for n in self.half_lattice]
            return modes
        return [(int(l), m) for l in self.degrees for m in range(-int(l), int(l) + 1)]

    @property
    def max_degree(self) -> int:
        if self.spec.is_torus:
            return int(np.abs(self.lattice).max()) if len(self.lattice) else 0
        return int(self.degrees.max())


@dataclass(frozen=True)
class KernelJet:
    """P_λ(x,y) 及其 y 方向一阶导数、对角线混合导数 Gram 矩阵"""

    p: float
    grad_y: np.ndarray
    gram: np.ndarray
    geodesic: float
    gap: float  # 1 − p，用无抵消的方式单独计算


@dataclass(frozen=True)
class WeylReport:
    """局部 Weyl 律诊断结果"""

    lam: float
    k_lambda: int
    k_ratio: float
    diag_ratio: float
    offdiag_sup_err: float
    gram_dev: float
    far_pair_ratio: float

    def to_row(self) -> dict:
        return {
            "lambda": self.lam,
            "k_lambda": self.k_lambda,
            "k_ratio": self.k_ratio,
            "diag_ratio": self.diag_ratio,
            "gram_dev": self.gram_dev,
            "offdiag_sup_err": self.offdiag_sup_err,
            "far_pair_ratio": self.far_pair_ratio,
        }


# ---------------------------------------------------------------------------
# 特征基枚举
# ---------------------------------------------------------------------------


def _count_lattice(d: int, r2: float) -> int:
    """统计 ‖n‖² ≤ r2 的格点个数（不生成格点本身）"""
    r = int(math.floor(math.sqrt(r2)))
    axis = np.arange(-r, r + 1)
    if d == 1:
        return len(axis)
    if d == 2:
        rest = r2 - axis.astype(float) ** 2
        return int(np.sum(2 * np.floor(np.sqrt(np.maximum(rest, 0.0))) + 1))
    total = 0
    for n1 in axis:
        rest1 = r2 - float(n1) ** 2
        r1 = int(math.floor(math.sqrt(max(rest1, 0.0))))
        inner = np.arange(-r1, r1 + 1).astype(float)
        rest = rest1 - inner**2
        total += int(np.sum(2 * np.floor(np.sqrt(np.maximum(rest, 0.0))) + 1))
    return total


def _enumerate_lattice(d: int, r2: float) -> np.ndarray:
    """按字典序列出 ‖n‖² ≤ r2 的全部格点"""
    r = int(math.floor(math.sqrt(r2)))
    axis = np.arange(-r, r + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    norms = np.sum(points.astype(float) ** 2, axis=1)
    return points[norms <= r2]


def _half_lattice(lattice: np.ndarray) -> np.ndarray:
    """非零格点中第一个非零坐标为正的那一半"""
    keep = []
    for n in lattice:
        nz = np.flatnonzero(n)
        if len(nz) and n[nz[0]] > 0:
            keep.append(n)
    if not keep:
        return np.zeros((0, lattice.shape[1]), dtype=int)
    return np.array(keep, dtype=int)


def enumerate_basis(spec: ManifoldSpec, lam: Optional[float] = None, bigN: Optional[int] = None) -> SpectralCutoff:
    """
    枚举 λ_n ≤ λ 的全部特征函数

    Args:
        spec: 模型流形
        lam: 谱截断 λ（与 bigN 二选一）
        bigN: 整数频率上限；环面上 λ = 2πN，球面上为 ℓ_max

    Returns:
        SpectralCutoff

    Raises:
        DomainError: λ ≤ 0、bigN < 1 或参数缺失
        ResourceError: k_λ 超过上限
    """
    limit = MANIFOLD_CONFIG["max_k_lambda"]
    if bigN is not None:
        if int(bigN) != bigN or bigN < 1:
            raise DomainError(f"bigN 必须是正整数: {bigN}")
        bigN = int(bigN)
    elif lam is None or not (lam > 0) or not math.isfinite(lam):
        raise DomainError(f"λ 必须为正: {lam}")

    if spec.is_torus:
        if bigN is not None:
            r2 = float(bigN * bigN)  # 整数比较，边界无歧义
            lam = 2.0 * math.pi * bigN
        else:
            r2 = (lam / (2.0 * math.pi)) ** 2 * (1.0 + _CUTOFF_RTOL)
        k = _count_lattice(spec.dim, r2)
        if k > limit:
            logger.error(f"❌ k_λ={k} 超过上限 {limit}")
            raise ResourceError(k, limit)
        lattice = _enumerate_lattice(spec.dim, r2)
        half = _half_lattice(lattice)
        degrees = np.zeros(0, dtype=int)
    else:
        if bigN is not None:
            l_max = bigN
            lam = math.sqrt(4.0 * math.pi * l_max * (l_max + 1.0))
        else:
            target = lam * lam * (1.0 + _CUTOFF_RTOL)
            l_max = 0
            while 4.0 * math.pi * (l_max + 1) * (l_max + 2) <= target:
                l_max += 1
        k = (l_max + 1) ** 2
        if k > limit:
            logger.error(f"❌ k_λ={k} 超过上限 {limit}")
            raise ResourceError(k, limit)
        lattice = np.zeros((0, 2), dtype=int)
        half = np.zeros((0, 2), dtype=int)
        degrees = np.arange(l_max + 1)

    cutoff = SpectralCutoff(
        spec=spec, lam=float(lam), k_lambda=int(k), lattice=lattice, half_lattice=half, degrees=degrees, bigN=bigN
    )
    logger.debug(f"🔢 {spec.name}: λ={cutoff.lam:.6g}, k_λ={cutoff.k_lambda}")
    return cutoff


def _check_cutoff(spec: ManifoldSpec, cutoff: SpectralCutoff):
    if cutoff.spec != spec:
        raise DomainError(f"谱截断属于 {cutoff.spec.name}，与 {spec.name} 不一致")


# ---------------------------------------------------------------------------
# 坐标与测地距离
# ---------------------------------------------------------------------------


def validate_points(spec: ManifoldSpec, x) -> np.ndarray:
    """检查点坐标：环面为有限实数（按模 1 理解），球面为 R³ 中的单位向量"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != spec.point_dim:
        raise DomainError(f"{spec.name} 上的点需要 {spec.point_dim} 个坐标，得到 {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("坐标必须是有限实数")
    if not spec.is_torus:
        norms = np.linalg.norm(arr, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("球面上的点必须是单位向量")
    return arr


def wrap_separation(t: np.ndarray) -> np.ndarray:
    """把环面上的差向量约化到 [-1/2, 1/2)^d"""
    return t - np.floor(t + 0.5)


def _sphere_angle(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    dot = np.sum(x * y, axis=-1)
    return np.arctan2(cross, dot)


def geodesic_distance(spec: ManifoldSpec, x, y):
    """
    测地距离 d_g(x,y)

    Args:
        spec: 模型流形
        x, y: 点（可带批量维度）

    Returns:
        非负距离（标量或数组）
    """
    xa = validate_points(spec, x)
    ya = validate_points(spec, y)
    if spec.is_torus:
        dist = np.linalg.norm(wrap_separation(xa - ya), axis=-1)
    else:
        dist = SPHERE_RADIUS * _sphere_angle(xa, ya)
    return float(dist) if np.ndim(dist) == 0 else dist


def tangent_frame(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """球面 y 点处的正交切标架 (e1, e2)"""
    a = np.array([0.0, 0.0, 1.0]) if abs(y[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = a - np.dot(a, y) * y
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(y, e1)
    return e1, e2


def sphere_exp(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """法坐标 z（体积归一化度量下的长度）对应的球面点 exp_y(z)"""
    e1, e2 = tangent_frame(y)
    z = np.asarray(z, dtype=float)
    length = float(np.linalg.norm(z))
    if length == 0.0:
        return y.copy()
    angle = length / SPHERE_RADIUS
    direction = (z[0] * e1 + z[1] * e2) / length
    point = math.cos(angle) * y + math.sin(angle) * direction
    return point / np.linalg.norm(point)


# ---------------------------------------------------------------------------
# 核的向量化求值
# ---------------------------------------------------------------------------


def torus_kernel_values(cutoff: SpectralCutoff, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    环面上按差向量 t = x − y 批量计算 P_λ、1 − P_λ 与 ∇_y P_λ

    Args:
        cutoff: 环面谱截断
        t: 形如 (P, d) 的差向量

    Returns:
        (p, gap, grad)，形状 (P,), (P,), (P, d)
    """
    t = np.atleast_2d(np.asarray(t, dtype=float))
    lattice = cutoff.lattice.astype(float)
    k = cutoff.k_lambda
    n_pts = t.shape[0]
    p = np.empty(n_pts)
    gap = np.empty(n_pts)
    grad = np.empty((n_pts, t.shape[1]))
    step = max(1, _CHUNK_ENTRIES // max(k, 1))
    for start in range(0, n_pts, step):
        sl = slice(start, start + step)
        phase = 2.0 * math.pi * (t[sl] @ lattice.T)
        p[sl] = np.cos(phase).sum(axis=1) / k
        # 1 − cos φ = 2 sin²(φ/2)，近对角线时不损失精度
        gap[sl] = 2.0 * np.sum(np.sin(0.5 * phase) ** 2, axis=1) / k
        grad[sl] = (2.0 * math.pi / k) * (np.sin(phase) @ lattice)
    return p, gap, grad


def torus_gram(cutoff: SpectralCutoff) -> np.ndarray:
    """环面 Gram 矩阵 (4π²/k_λ) Σ_n n nᵀ（与基点无关）"""
    lattice = cutoff.lattice.astype(float)
    return (4.0 * math.pi**2 / cutoff.k_lambda) * (lattice.T @ lattice)


def _legendre_sums(
    degrees: np.ndarray, c: np.ndarray, s: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Σ(2ℓ+1)P_ℓ(c)、Σ(2ℓ+1)(1−P_ℓ(c))、Σ(2ℓ+1)P'_ℓ(c)

    1−P_ℓ 用 Q_{ℓ+1} = [(2ℓ+1)s + (2ℓ+1)cQ_ℓ − ℓQ_{ℓ−1}]/(ℓ+1)，s = 1−c，
    在 c → 1 时没有抵消误差。
    """
    c = np.asarray(c, dtype=float)
    s = 1.0 - c if s is None else np.asarray(s, dtype=float)
    l_max = int(degrees.max())
    q_prev, q_cur = np.zeros_like(c), s.copy()  # Q_0, Q_1
    dp_prev, dp_cur = np.zeros_like(c), np.ones_like(c)  # P'_0, P'_1
    total_q = np.zeros_like(c)
    total_dp = np.zeros_like(c)
    if l_max >= 1:
        total_q += 3.0 * q_cur
        total_dp += 3.0 * dp_cur
    for l in range(1, l_max):
        p_cur = 1.0 - q_cur
        q_next = ((2 * l + 1) * s + (2 * l + 1) * c * q_cur - l * q_prev) / (l + 1)
        dp_next = dp_prev + (2 * l + 1) * p_cur
        q_prev, q_cur = q_cur, q_next
        dp_prev, dp_cur = dp_cur, dp_next
        weight = 2 * (l + 1) + 1
        total_q += weight * q_cur
        total_dp += weight * dp_cur
    k = float(np.sum(2 * degrees + 1))
    return k - total_q, total_q, total_dp


def sphere_kernel_values(cutoff: SpectralCutoff, cos_angle: np.ndarray, angle: Optional[np.ndarray] = None):
    """
    球面上按夹角批量计算 P_λ、1 − P_λ 以及 dP/dcos

    Args:
        cutoff: 球面谱截断
        cos_angle: 夹角余弦
        angle: 夹角本身（给出时用 2sin²(γ/2) 精确计算 1−cos γ）

    Returns:
        (p, gap, dp_dc)
    """
    c = np.atleast_1d(np.asarray(cos_angle, dtype=float))
    s = None
    if angle is not None:
        s = 2.0 * np.sin(0.5 * np.atleast_1d(angle)) ** 2
        c = 1.0 - s
    k = cutoff.k_lambda
    kern, kern_gap, kern_d = _legendre_sums(cutoff.degrees, c, s)
    return kern / k, kern_gap / k, kern_d / k


def sphere_gram_scalar(cutoff: SpectralCutoff) -> float:
    """球面 Gram 矩阵 = g·I，g = Σ(2ℓ+1)ℓ(ℓ+1)/(2k r²)"""
    l = cutoff.degrees.astype(float)
    fprime_one = np.sum((2 * l + 1) * l * (l + 1) / 2.0) / cutoff.k_lambda
    return float(fprime_one / SPHERE_RADIUS**2)


def gram_at(spec: ManifoldSpec, cutoff: SpectralCutoff, y=None) -> np.ndarray:
    """基点 y 处（法坐标下）的 Gram 矩阵 ∂_{x_i}∂_{y_j}P_λ|_{x=y}"""
    if spec.is_torus:
        return torus_gram(cutoff)
    return sphere_gram_scalar(cutoff) * np.eye(2)


def kernel_jet(spec: ManifoldSpec, cutoff: SpectralCutoff, x, y) -> KernelJet:
    """
    计算点对 (x, y) 的核射流

    Args:
        spec: 模型流形
        cutoff: 同一流形上的谱截断
        x, y: 点

    Returns:
        KernelJet（导数均在 y 处的测地法坐标中解析求得）
    """
    _check_cutoff(spec, cutoff)
    xa = validate_points(spec, x)
    ya = validate_points(spec, y)
    if spec.is_torus:
        t = wrap_separation(xa - ya)
        p, gap, grad = torus_kernel_values(cutoff, t[None, :])
        return KernelJet(
            p=float(p[0]),
            grad_y=grad[0],
            gram=torus_gram(cutoff),
            geodesic=float(np.linalg.norm(t)),
            gap=float(gap[0]),
        )

    angle = float(_sphere_angle(xa, ya))
    p, gap, dp_dc = sphere_kernel_values(cutoff, math.cos(angle), angle=np.array([angle]))
    e1, e2 = tangent_frame(ya)
    # ∂_{z_i} ⟨x, exp_y(z)⟩ |_{z=0} = ⟨x, e_i⟩ / r
    grad = dp_dc[0] * np.array([np.dot(xa, e1), np.dot(xa, e2)]) / SPHERE_RADIUS
    return KernelJet(
        p=float(p[0]),
        grad_y=grad,
        gram=gram_at(spec, cutoff, ya),
        geodesic=SPHERE_RADIUS * angle,
        gap=float(gap[0]),
    )


# ---------------------------------------------------------------------------
# 嵌入 i_λ
# ---------------------------------------------------------------------------


def _real_spherical_harmonics(degrees: np.ndarray, points: np.ndarray) -> np.ndarray:
    """单位球面上正交归一的实球谐函数，形状 (P, k)"""
    polar = np.arccos(np.clip(points[:, 2], -1.0, 1.0))
    azimuth = np.arctan2(points[:, 1], points[:, 0])
    cos_polar = np.cos(polar)
    columns = []
    for l in degrees:
        l = int(l)
        for m in range(-l, l + 1):
            am = abs(m)
            log_norm = 0.5 * (
                math.log((2 * l + 1) / (4.0 * math.pi)) + special.gammaln(l - am + 1) - special.gammaln(l + am + 1)
            )
            base = math.exp(log_norm) * special.lpmv(am, l, cos_polar)
            if m > 0:
                columns.append(math.sqrt(2.0) * base * np.cos(am * azimuth))
            elif m < 0:
                columns.append(math.sqrt(2.0) * base * np.sin(am * azimuth))
            else:
                columns.append(base)
    return np.stack(columns, axis=1)


def eigenfunctions(spec: ManifoldSpec, cutoff: SpectralCutoff, x) -> np.ndarray:
    """
    在点 x 处计算 L² 正交归一特征函数的值（未除以 √K(x,x)）

    Returns:
        形状 (P, k_λ) 的数组；单个点时为 (k_λ,)
    """
    _check_cutoff(spec, cutoff)
    pts = validate_points(spec, x)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if spec.is_torus:
        phase = 2.0 * math.pi * (pts @ cutoff.half_lattice.T.astype(float))
        values = np.concatenate(
            [np.ones((pts.shape[0], 1)), math.sqrt(2.0) * np.cos(phase), math.sqrt(2.0) * np.sin(phase)], axis=1
        )
    else:
        # 体积为 1 的球面：ψ = √(4π)·Y_ℓm
        values = math.sqrt(4.0 * math.pi) * _real_spherical_harmonics(cutoff.degrees, pts)
    return values[0] if single else values


def embed(spec: ManifoldSpec, cutoff: SpectralCutoff, x) -> np.ndarray:
    """谱嵌入 i_λ(x) = ψ(x)/√K(x,x)，落在单位球面 S^{k_λ−1} 上"""
    values = eigenfunctions(spec, cutoff, x)
    return values / math.sqrt(cutoff.k_lambda)


# ---------------------------------------------------------------------------
# 近对角线精确极限
# ---------------------------------------------------------------------------


def _unit_directions(d: int, count: int) -> np.ndarray:
    """环面上需要检查的方向（利用坐标反射对称性只取一个象限）"""
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        angles = np.linspace(0.0, 0.5 * math.pi, count)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    polar = np.linspace(0.0, 0.5 * math.pi, count)
    azimuth = np.linspace(0.0, 0.5 * math.pi, count)
    pp, aa = np.meshgrid(polar, azimuth, indexing="ij")
    dirs = np.stack([np.sin(pp) * np.cos(aa), np.sin(pp) * np.sin(aa), np.cos(pp)], axis=-1)
    return dirs.reshape(-1, 3)


def diagonal_ratio_limit(spec: ManifoldSpec, cutoff: SpectralCutoff, direction=None) -> float:
    """
    y → x 时 ratio_at 的精确有限 λ 极限

    沿测地线 P_λ = 1 − a t² + b t⁴ + …，极限为 a/√(6b)。
    环面：m₂(e)/√m₄(e)（格点矩）；球面：f'(1)/√(f'(1)+3f''(1))。

    Args:
        spec: 模型流形
        cutoff: 谱截断
        direction: 环面方向（None 时取所有方向的下确界）

    Returns:
        极限比值
    """
    _check_cutoff(spec, cutoff)
    if not spec.is_torus:
        l = cutoff.degrees.astype(float)
        w = 2 * l + 1
        f1 = np.sum(w * l * (l + 1) / 2.0) / cutoff.k_lambda
        f2 = np.sum(w * (l - 1) * l * (l + 1) * (l + 2) / 8.0) / cutoff.k_lambda
        return float(f1 / math.sqrt(f1 + 3.0 * f2))

    lattice = cutoff.lattice.astype(float)
    if direction is not None:
        dirs = np.atleast_2d(np.asarray(direction, dtype=float))
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        dirs = _unit_directions(spec.dim, 181 if spec.dim == 2 else 46)
    proj = lattice @ dirs.T
    m2 = np.sum(proj**2, axis=0) / cutoff.k_lambda
    m4 = np.sum(proj**4, axis=0) / cutoff.k_lambda
    return float(np.min(m2 / np.sqrt(m4)))


# ---------------------------------------------------------------------------
# 均匀网格上的核（FFT）
# ---------------------------------------------------------------------------


def kernel_grid(cutoff: SpectralCutoff, M: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    在差向量网格 t = m/M（m ∈ Z_M^d）上精确计算 P_λ 与 ∇_y P_λ

    格点指示函数的离散傅里叶变换恰好给出核在网格上的值。

    Args:
        cutoff: 环面谱截断
        M: 每个坐标方向的网格点数（需 ≥ 2·max|n|+1，避免混叠）

    Returns:
        (p, grad)：p 形状 (M,)*d，grad 形状 (d,) + (M,)*d
    """
    spec = cutoff.spec
    if not spec.is_torus:
        raise DomainError("kernel_grid 只用于环面")
    if M < 2 * cutoff.max_degree + 1:
        raise DomainError(f"网格 M={M} 太粗，至少需要 {2 * cutoff.max_degree + 1}")
    d = spec.dim
    shape = (M,) * d
    idx = tuple((cutoff.lattice % M).T)
    indicator = np.zeros(shape)
    indicator[idx] = 1.0
    scale = float(M) ** d / cutoff.k_lambda
    p = np.real(np.fft.ifftn(indicator)) * scale
    grad = np.empty((d,) + shape)
    for j in range(d):
        weighted = np.zeros(shape)
        weighted[idx] = cutoff.lattice[:, j].astype(float)
        grad[j] = 2.0 * math.pi * np.imag(np.fft.ifftn(weighted)) * scale
    return p, grad


# ---------------------------------------------------------------------------
# 随机点与点对
# ---------------------------------------------------------------------------


def sample_points(spec: ManifoldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """按体积测度均匀采样 n 个点"""
    if spec.is_torus:
        return rng.random((n, spec.dim))
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_pairs(
    spec: ManifoldSpec,
    n: int,
    rng: np.random.Generator,
    min_dist: float,
    max_dist: float,
    lam: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    采样测地距离落在 [min_dist, max_dist] 内的点对

    给出 λ 时，一半点对的距离取 λ·d_g 在 [0, 20] 上均匀分布，
    以覆盖 Bessel 剖面变化最剧烈的尺度。
    """
    max_dist = min(max_dist, 0.5 if spec.is_torus else math.pi * SPHERE_RADIUS)
    x = sample_points(spec, n, rng)
    dist = rng.uniform(min_dist, max_dist, n)
    if lam is not None and min_dist == 0.0:
        half = n // 2
        dist[:half] = rng.uniform(0.0, min(20.0 / lam, max_dist), half)
    if spec.is_torus:
        direction = rng.standard_normal((n, spec.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        y = np.mod(x + dist[:, None] * direction, 1.0)
        return x, y
    y = np.empty_like(x)
    for i in range(n):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        y[i] = sphere_exp(x[i], dist[i] * np.array([math.cos(phi), math.sin(phi)]))
    return x, y


def pair_kernel_values(spec: ManifoldSpec, cutoff: SpectralCutoff, x: np.ndarray, y: np.ndarray):
    """批量点对的 (P_λ, d_g)"""
    if spec.is_torus:
        t = wrap_separation(x - y)
        p, _, _ = torus_kernel_values(cutoff, t)
        return p, np.linalg.norm(t, axis=1)
    angle = _sphere_angle(x, y)
    p, _, _ = sphere_kernel_values(cutoff, np.cos(angle), angle=angle)
    return p, SPHERE_RADIUS * angle


# ---------------------------------------------------------------------------
# 局部 Weyl 律诊断
# ---------------------------------------------------------------------------


def gram_deviation(spec: ManifoldSpec, cutoff: SpectralCutoff, y=None) -> float:
    """‖gram·(d+2)/λ² − I‖（最大元范数）"""
    gram = gram_at(spec, cutoff, y)
    d = spec.dim
    return float(np.max(np.abs(gram * (d + 2.0) / cutoff.lam**2 - np.eye(d))))


def weyl_diagnostics(
    spec: ManifoldSpec,
    lam: Optional[float] = None,
    n_pairs: int = 2000,
    seed: int = 0,
    bigN: Optional[int] = None,
) -> WeylReport:
    """
    局部 Weyl 律的数值诊断

    Args:
        spec: 模型流形
        lam: 谱截断（或用 bigN）
        n_pairs: 近对角点对数
        seed: 随机种子（唯一的随机性来源）
        bigN: 整数频率上限

    Returns:
        WeylReport
    """
    if n_pairs < 1:
        raise DomainError(f"n_pairs 必须 ≥ 1: {n_pairs}")
    cutoff = enumerate_basis(spec, lam=lam, bigN=bigN)
    lam = cutoff.lam
    d = spec.dim
    rng = np.random.default_rng(seed)

    log_weyl = log_ball_volume(d) + math.log(spec.volume) + d * math.log(lam) - d * math.log(2.0 * math.pi)
    k_ratio = cutoff.k_lambda / math.exp(log_weyl)

    base = sample_points(spec, 4, rng)
    diag = np.mean(np.sum(eigenfunctions(spec, cutoff, base) ** 2, axis=1))
    diag_ratio = float(diag / math.exp(log_weyl))

    x, y = random_pairs(spec, n_pairs, rng, 0.0, MANIFOLD_CONFIG["near_window"], lam=lam)
    p, dist = pair_kernel_values(spec, cutoff, x, y)
    near = dist <= MANIFOLD_CONFIG["near_window"]
    offdiag = float(np.max(np.abs(p[near] - b_profile(d, lam * dist[near])))) if np.any(near) else 0.0

    far_lo = MANIFOLD_CONFIG["far_window"]
    xf, yf = random_pairs(spec, n_pairs, rng, far_lo * 1.0001, 0.5 if spec.is_torus else math.pi * SPHERE_RADIUS)
    pf, distf = pair_kernel_values(spec, cutoff, xf, yf)
    far = distf > far_lo
    far_ratio = float(np.max(np.abs(pf[far] * cutoff.k_lambda)) / lam ** (d - 1)) if np.any(far) else 0.0

    report = WeylReport(
        lam=lam,
        k_lambda=cutoff.k_lambda,
        k_ratio=k_ratio,
        diag_ratio=diag_ratio,
        offdiag_sup_err=offdiag,
        gram_dev=gram_deviation(spec, cutoff),
        far_pair_ratio=far_ratio,
    )
    logger.info(
        f"📊 Weyl诊断 {spec.name} λ={lam:.4g}: k_ratio={k_ratio:.6f}, offdiag={offdiag:.3e}, gram_dev={report.gram_dev:.3e}"
    )
    return report
