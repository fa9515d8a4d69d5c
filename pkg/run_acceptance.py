#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
验收检查 - 按桌面规模重放临界半径、Weyl 律、管状公式与蒙特卡洛的各项检查
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent / "src"))
sys.path.insert(0, str(Path(__file__).parent))


def _dense_grid_minimum(profile, d: int, step: float = 1e-5, u_max: float = 300.0, chunk: int = 1_000_000) -> float:
    """(0, u_max] 上等距网格的最小比值"""
    n_points = int(round(u_max / step))
    best = float("inf")
    for start in range(1, n_points + 1, chunk):
        u = np.arange(start, min(start + chunk, n_points + 1)) * step
        best = min(best, float(np.min(profile(d, u)[2])))
    return best


def run_acceptance(mc_samples: int = 1_000_000, euler_samples: int = 100_000, threads: int = 8) -> bool:
    print("🔧 开始验收检查...")
    failures = []

    def check(name: str, ok: bool, detail: str):
        mark = "✅" if ok else "❌"
        print(f"   {mark} {name}: {detail}")
        if not ok:
            failures.append(name)

    try:
        from embedding import SearchConfig, critical_radius, local_ratio_inf
        from manifolds import ManifoldSpec, enumerate_basis, weyl_diagnostics
        from montecarlo import MCConfig, estimate_excursion, euler_char_circle
        from specfun import FAR_FIELD_LIMIT, crit_limit, near_diagonal_limit, ratio_profile, ratio_profile_values
        from tube import excursion_prob_exact, ldp_curve

        t1, t2 = ManifoldSpec.torus(1), ManifoldSpec.torus(2)

        # 1. 普适极限：与 (0, 300] 上步长 1e-5 的稠密网格对照
        print("📐 普适极限 crit_limit...")
        for d in range(1, 6):
            value, argmin = crit_limit(d)
            dense = _dense_grid_minimum(ratio_profile_values, d)
            oracle = min(dense, near_diagonal_limit(d), FAR_FIELD_LIMIT)
            check(f"crit_limit(d={d}) 稠密网格", abs(value - oracle) <= 1e-6, f"{value:.10f} vs {oracle:.10f} @ u={argmin}")
            near = ratio_profile(d, 1e-6).ratio
            check(f"u→0 候选(d={d})", abs(near - near_diagonal_limit(d)) <= 1e-12, f"{near:.15f}")

        # 2. 近对角线极限
        print("📏 近对角线下确界...")
        devs = []
        for n in (100, 200):
            value = local_ratio_inf(t1, enumerate_basis(t1, bigN=n))
            devs.append(abs(value - near_diagonal_limit(1)))
        check("T^1 N=200", devs[-1] / near_diagonal_limit(1) <= 0.02, f"偏差 {devs[-1]:.3e}")
        check("T^1 偏差随 N 减小", devs[-1] < devs[0], f"{devs[0]:.3e} → {devs[-1]:.3e}")
        t2_devs = [abs(local_ratio_inf(t2, enumerate_basis(t2, bigN=n)) - math.sqrt(0.5)) for n in (30, 60)]
        check("T^2 N=60", t2_devs[-1] / math.sqrt(0.5) <= 0.05, f"偏差 {t2_devs[-1]:.3e}")
        check("T^2 偏差随 N 减小", t2_devs[-1] < t2_devs[0], f"{t2_devs[0]:.3e} → {t2_devs[-1]:.3e}")

        # 3. 临界半径收敛
        print("🔍 临界半径收敛...")
        limit = crit_limit(1).value
        errs = []
        for n in (25, 50, 100, 200):
            est = critical_radius(t1, enumerate_basis(t1, bigN=n), SearchConfig(threads=threads))
            errs.append(abs(est.r_lambda - limit) / limit)
            print(f"   N={n}: r_λ={est.r_lambda:.8f} ({est.regime.value}), rel_err={errs[-1]:.3e}")
        check("r_λ → crit_limit(1)", errs[-1] <= 0.03 and all(a > b for a, b in zip(errs, errs[1:])), f"{errs}")

        # 4. 局部 Weyl 律
        print("📊 局部 Weyl 律...")
        for spec in (t1, t2):
            reports = [weyl_diagnostics(spec, bigN=n, n_pairs=2000, seed=7) for n in (25, 50, 100)]
            ratio = reports[2].offdiag_sup_err / reports[1].offdiag_sup_err
            check(f"{spec.name} offdiag 衰减", 0.3 < ratio < 0.8, f"比值 {ratio:.3f}")
            errors = [abs(r.k_ratio - 1) for r in reports]
            check(f"{spec.name} |k_ratio−1| 减小", errors[0] > errors[1] > errors[2], f"{errors}")
            if spec is t1:
                ratios = [b / a for a, b in zip(errors, errors[1:])]
                check("T^1 k_ratio 衰减比", all(0.3 < r < 0.8 for r in ratios), f"{ratios}")
            else:
                # 圆内格点余项不单调，改查 |k − πN²| ≤ 2·N^{2/3}
                remainders = [e * math.pi * n * n for e, n in zip(errors, (25, 50, 100))]
                ok = all(r <= 2 * n ** (2 / 3) for r, n in zip(remainders, (25, 50, 100)))
                check("T^2 格点余项包络", ok, f"{remainders}")
        report = weyl_diagnostics(t1, bigN=100, n_pairs=200, seed=7)
        check("T^1 gram_dev = 1/N", abs(report.gram_dev - 0.01) < 1e-12, f"{report.gram_dev:.15f}")

        # 5. 管状公式 vs 蒙特卡洛
        print("🎲 管状公式 vs 蒙特卡洛...")
        cutoff = enumerate_basis(t1, bigN=8)
        p_exact = excursion_prob_exact(t1, cutoff, 0.7).p
        est = estimate_excursion(t1, cutoff, MCConfig(seed=42, n_samples=mc_samples, theta=0.7, threads=threads, show_progress=True))
        check("MC 与精确概率", abs(est.z_score(p_exact)) <= 3, f"p̂={est.p_hat:.6g}, p={p_exact:.6g}, z={est.z_score(p_exact):.2f}")

        # 6. 大偏差速率
        print("📉 大偏差速率...")
        points = ldp_curve(t1, 0.5, bigNs=[25, 50, 100, 200])
        gaps = [p.abs_gap for p in points]
        check("LDP 收敛", gaps[-1] <= 0.1 * abs(points[-1].ldp_rate), f"gap={gaps[-1]:.4e}")
        scaled = [p.scaled_log_p for p in points]
        steps = [abs(b - a) for a, b in zip(scaled, scaled[1:])]
        check("LDP 相邻差分缩小", all(b < a for a, b in zip(steps, steps[1:])), f"{steps}")

        # 7. Euler 示性数
        print("⭕ Euler 示性数...")
        euler = euler_char_circle(t1, cutoff, MCConfig(seed=42, n_samples=euler_samples, theta=0.7, threads=threads, refine=True))
        check("E[χ] 与精确概率", abs(euler.z_score(p_exact)) <= 3, f"E[χ]={euler.mean_chi:.6g}, z={euler.z_score(p_exact):.2f}")

    except Exception as e:
        print(f"❌ 验收检查出错: {e}")
        import traceback
        traceback.print_exc()
        return False

    if failures:
        print(f"❌ 未通过: {', '.join(failures)}")
        return False
    return True


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="重放验收检查")
    parser.add_argument("--mc-samples", type=int, default=1_000_000)
    parser.add_argument("--euler-samples", type=int, default=100_000)
    parser.add_argument("--threads", type=int, default=8)
    args = parser.parse_args()
    success = run_acceptance(args.mc_samples, args.euler_samples, args.threads)
    if success:
        print("\n🎉 全部验收检查通过！")
    else:
        print("\n❌ 验收检查未通过，请检查错误信息。")
    sys.exit(0 if success else 1)
