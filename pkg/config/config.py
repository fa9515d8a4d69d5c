#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
谱嵌入临界半径与随机波超越概率计算的配置文件
各模块的默认参数集中在这里，命令行参数会覆盖这些默认值
"""

import math
from pathlib import Path

# 项目根目录
PROJECT_ROOT = Path(__file__).parent.parent

# 版本号（写入每次运行的 manifest）
ARTIFACT_VERSION = "1.0.0"

# 数据路径配置
DATA_PATHS = {
    "output": PROJECT_ROOT / "output",
    "logs": PROJECT_ROOT / "logs",
}

# 特殊函数配置
SPECFUN_CONFIG = {
    "max_dim": 25,  # 公开接口（BesselOrder、b_profile_deriv）支持的最大维数
    "max_two_nu": 27,  # 仅 b_profile 内部使用：导数需要 B_{d+2}
    "series_switch": 12.0,  # 整数阶：u ≤ 12 用幂级数
    "delta_series_switch": 2.0,  # Δ₁/Δ₂ 在 u < 2 时用泰勒系数，避免抵消
    "series_terms": 80,
    "golden_tol": 1e-9,  # crit_limit 的黄金分割容差（u 方向）
    "default_u_max": 300.0,
    "default_coarse_step": 1e-3,
    "grid_chunk": 1 << 20,  # 扫描网格分块大小，控制内存
}

# 流形与谱截断配置
MANIFOLD_CONFIG = {
    "max_k_lambda": 10_000_000,
    "sphere_radius": 1.0 / math.sqrt(4.0 * math.pi),  # 体积归一化为 1
    "near_window": 0.2,  # Weyl 诊断的近对角窗口 d_g ≤ 0.2
    "far_window": 0.25,  # 远点对 d_g > 0.25
    "fd_step": 1e-5,
}

# 临界半径搜索配置
SEARCH_CONFIG = {
    "grid_spacing_scale": 0.5,  # 网格间距 min(0.5/λ, 1e-3)
    "max_grid_spacing": 1e-3,
    "near_diagonal_cut": 0.5,  # d_g < 0.5/λ 交给解析极限
    "degenerate_guard": 1e-9,  # d_g ≥ 1e-9/λ
    "refine_cells": 10,
    "refine_tol": 1e-8,
    "tie_tol": 1e-9,
    "local_scales": 200,
    "local_directions": 8,
    "spd_pivot_rel": 1e-12,
    "degenerate_floor": 1e-14,
    "far_field_dist": 0.2,  # 超过该测地距离的极小点归为 FarField
    "torus3_slow_lambda": 2.0 * math.pi * 20,
}

# 管状邻域公式配置
TUBE_CONFIG = {
    "quad_epsabs": 1e-12,
    "quad_epsrel": 1e-10,
    "quad_limit": 200,
    "log_window": 60.0,  # 积分区间截断到 log 被积函数距峰值 60 以内
    "max_b": 1_000_000,
}

# 蒙特卡洛配置
MC_CONFIG = {
    "seed": 42,
    "n_samples": 10_000,
    "grid_points": 2048,
    "refine": False,
    "block_size": 4096,  # 固定块大小：样本 i 的系数只取决于 (seed, i)
    "sphere_grid_points": 4096,
    "bisection_steps": 40,
    "z_threshold": 3.0,
}

# 命令行配置
CLI_CONFIG = {
    "threads_env": "WAVECRIT_THREADS",
    "default_threads": 1,
    "default_format": "csv",
    "default_pairs": 2000,
}


# 创建必要的目录
def ensure_directories():
    """确保所有必要的目录存在"""
    for path in DATA_PATHS.values():
        if isinstance(path, Path):
            path.mkdir(parents=True, exist_ok=True)
