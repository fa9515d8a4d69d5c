#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
命令行接口
解析子命令与配置文件，分发到各计算模块，原子地写出结果表与 manifest
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pydantic
from dotenv import dotenv_values, load_dotenv

from config.config import CLI_CONFIG
from embedding import SearchConfig, critical_radius, local_ratio_inf, pullback_check
from errors import UsageError, ValidationError, WaveCritError
from manifolds import ManifoldSpec, enumerate_basis, sample_points, weyl_diagnostics
from montecarlo import MCConfig, estimate_excursion, euler_char_circle, validity_scan
from result_store import get_result_store
from run_config import RunConfig, Subcommand
from specfun import crit_limit, near_diagonal_limit
from tube import excursion_prob_exact, ldp_curve

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# 配置文件中允许的别名
_KEY_ALIASES = {
    "lambda": "lam",
    "samples": "n_samples",
    "bign": "bigN",
    "bigns": "bigNs",
}

# 值本身无法解析（而不是超出范围）时按用法错误处理
_MALFORMED_ERRORS = {
    "int_parsing",
    "int_from_float",
    "float_parsing",
    "bool_parsing",
    "enum",
    "path_type",
}


class _Parser(argparse.ArgumentParser):
    """参数错误时抛出 UsageError，而不是直接退出"""

    def error(self, message):
        raise UsageError(message)


@dataclass
class RunResult:
    """一个子命令的结果表"""

    columns: List[str]
    rows: List[Dict] = field(default_factory=list)
    extra: Dict = field(default_factory=dict)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value 配置文件")
    common.add_argument("--manifold", help="torus1 | torus2 | torus3 | sphere2")
    common.add_argument("--dim", type=int, help="crit-limit 的维数 d")
    common.add_argument("--lambda", dest="lam", type=float, help="谱截断 λ")
    common.add_argument("--bigN", dest="bigN", type=int, help="整数频率上限（环面 λ=2πN，球面 ℓ_max）")
    common.add_argument("--lambdas", help="逗号分隔的 λ 列表")
    common.add_argument("--bigNs", dest="bigNs", help="逗号分隔的 N 列表")
    common.add_argument("--theta", type=float, help="管半径 θ，阈值为 cos θ")
    common.add_argument("--thetas", help="逗号分隔的 θ 列表")
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", dest="n_samples", type=int, help="蒙特卡洛样本数")
    common.add_argument("--grid-points", dest="grid_points", type=int)
    common.add_argument(
        "--refine", action=argparse.BooleanOptionalAction, help="在网格极大值附近做局部上升（--no-refine 关闭）"
    )
    common.add_argument("--pairs", type=int, help="Weyl 诊断的随机点对数")
    common.add_argument("--u-max", dest="u_max", type=float)
    common.add_argument("--coarse-step", dest="coarse_step", type=float)
    common.add_argument("--threads", type=int)
    common.add_argument("--output", help="输出目录")
    common.add_argument("--format", help="csv | json")
    return common


def build_parser() -> argparse.ArgumentParser:
    """构造带全部子命令的解析器"""
    parser = _Parser(prog="wavecrit", description="谱嵌入临界半径与随机波超越概率")
    common = _common_flags()
    subparsers = parser.add_subparsers(dest="subcommand")
    for sub in Subcommand:
        subparsers.add_parser(sub.value, parents=[common], argument_default=argparse.SUPPRESS)
    return parser


def _read_config_file(path: str) -> Dict[str, str]:
    """读取扁平 key=value 配置文件，键名归一化"""
    if not Path(path).is_file():
        raise UsageError(f"配置文件不存在: {path}", key="config")
    values = {}
    for raw_key, value in dotenv_values(path).items():
        key = raw_key.strip().lower().replace("-", "_")
        key = _KEY_ALIASES.get(key, key)
        if key in ("config", "subcommand") or key not in RunConfig.model_fields:
            raise UsageError(f"配置文件中的未知键: {raw_key}", key=raw_key)
        if value is None or value == "":
            raise UsageError(f"配置文件中的键缺少值: {raw_key}", key=raw_key)
        values[key] = value
    return values


def parse_config(argv: Sequence[str], environ: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    合并命令行、配置文件与环境变量，得到校验过的 RunConfig

    优先级：命令行 > 配置文件 > 环境变量 WAVECRIT_THREADS > 默认值

    Raises:
        UsageError: 未知子命令/参数、格式错误的配置文件或无法解析的值
        ValidationError: 数值超出允许范围
    """
    parser = build_parser()
    namespace = vars(parser.parse_args(list(argv)))
    subcommand = namespace.pop("subcommand", None)
    if subcommand is None:
        raise UsageError("缺少子命令")
    config_file = namespace.pop("config", None)

    if environ is None:
        load_dotenv(override=False)
        environ = dict(os.environ)

    merged: Dict = {}
    sources: Dict[str, str] = {}
    threads_env = environ.get(CLI_CONFIG["threads_env"])
    if threads_env:
        merged["threads"] = threads_env
        sources["threads"] = CLI_CONFIG["threads_env"]
    if config_file:
        file_values = _read_config_file(config_file)
        merged.update(file_values)
        sources.update({key: config_file for key in file_values})
    merged.update(namespace)
    for key in namespace:
        sources.pop(key, None)
    merged["subcommand"] = subcommand

    try:
        return RunConfig(**merged)
    except pydantic.ValidationError as e:
        for err in e.errors():
            loc = err.get("loc", ())
            if loc and err.get("type") in _MALFORMED_ERRORS:
                key = str(loc[0])
                origin = sources.get(key, "命令行")
                logger.error(f"❌ 无法解析 {key}={merged.get(key)!r}（来自 {origin}）")
                raise UsageError(f"无法解析的值 {key}={merged.get(key)!r}（来自 {origin}）", key=key)
        first = e.errors()[0]
        key = ".".join(str(part) for part in first.get("loc", ())) or "subcommand"
        message = first.get("msg", str(e))
        logger.error(f"❌ 参数校验失败 {key}: {message}")
        raise ValidationError(key, message)


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------


def _spec(config: RunConfig) -> ManifoldSpec:
    return ManifoldSpec.from_name(config.manifold)


def _run_crit_limit(config: RunConfig) -> RunResult:
    result = crit_limit(config.dim, u_max=config.u_max, coarse_step=config.coarse_step)
    return RunResult(
        columns=["d", "value", "argmin_u"],
        rows=[{"d": config.dim, "value": result.value, "argmin_u": result.argmin_u}],
    )


def _run_crit_radius(config: RunConfig) -> RunResult:
    spec = _spec(config)
    limit = crit_limit(spec.dim).value
    search = SearchConfig(threads=config.threads)
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        est = critical_radius(spec, cutoff, search)
        rows.append(
            {
                "lambda": est.lam,
                "r_lambda": est.r_lambda,
                "regime": est.regime.value,
                "argmin_dg": est.argmin.geodesic,
                "limit_d": limit,
                "rel_err": abs(est.r_lambda - limit) / limit,
            }
        )
    return RunResult(columns=["lambda", "r_lambda", "regime", "argmin_dg", "limit_d", "rel_err"], rows=rows)


def _run_local_ratio(config: RunConfig) -> RunResult:
    spec = _spec(config)
    limit = near_diagonal_limit(spec.dim)
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        value = local_ratio_inf(spec, cutoff)
        rows.append(
            {
                "lambda": cutoff.lam,
                "k_lambda": cutoff.k_lambda,
                "local_inf": value,
                "limit": limit,
                "rel_err": abs(value - limit) / limit,
            }
        )
    return RunResult(columns=["lambda", "k_lambda", "local_inf", "limit", "rel_err"], rows=rows)


def _run_weyl_check(config: RunConfig) -> RunResult:
    spec = _spec(config)
    rows = [
        weyl_diagnostics(spec, n_pairs=config.pairs, seed=config.seed, **kwargs).to_row()
        for kwargs in config.cutoff_args()
    ]
    columns = ["lambda", "k_lambda", "k_ratio", "diag_ratio", "gram_dev", "offdiag_sup_err", "far_pair_ratio"]
    return RunResult(columns=columns, rows=rows)


def _run_pullback(config: RunConfig) -> RunResult:
    spec = _spec(config)
    points = sample_points(spec, config.pairs, np.random.default_rng(config.seed))
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        rows.append({"lambda": cutoff.lam, "k_lambda": cutoff.k_lambda, "gram_dev": pullback_check(spec, cutoff, points)})
    return RunResult(columns=["lambda", "k_lambda", "gram_dev"], rows=rows)


def _run_tube_prob(config: RunConfig) -> RunResult:
    spec = _spec(config)
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        log_p = excursion_prob_exact(spec, cutoff, config.theta).log_p
        rows.append(
            {
                "theta": config.theta,
                "lambda": cutoff.lam,
                "k_lambda": cutoff.k_lambda,
                "log_p_exact": log_p,
                "p_exact": math.exp(log_p),
            }
        )
    return RunResult(columns=["theta", "lambda", "k_lambda", "log_p_exact", "p_exact"], rows=rows)


def _run_ldp(config: RunConfig) -> RunResult:
    spec = _spec(config)
    args = config.cutoff_args()
    if "bigN" in args[0]:
        points = ldp_curve(spec, config.theta, bigNs=[a["bigN"] for a in args], threads=config.threads)
    else:
        points = ldp_curve(spec, config.theta, lambdas=[a["lam"] for a in args], threads=config.threads)
    columns = ["theta", "lambda", "k_lambda", "log_p_exact", "scaled_log_p", "ldp_rate", "abs_gap"]
    return RunResult(columns=columns, rows=[p.to_row() for p in points])


def _mc_config(config: RunConfig, theta: Optional[float] = None) -> MCConfig:
    return MCConfig(
        seed=config.seed,
        n_samples=config.n_samples,
        grid_points=config.grid_points,
        refine=config.refine,
        theta=theta if theta is not None else config.theta,
        threads=config.threads,
    )


def _exact_log_p(spec: ManifoldSpec, cutoff, theta: float) -> float:
    """环面上的精确对数概率；球面或超出有效范围时为 NaN"""
    if not spec.is_torus:
        return math.nan
    try:
        return excursion_prob_exact(spec, cutoff, theta).log_p
    except WaveCritError as e:
        logger.warning(f"⚠️ 无法计算精确概率: {e}")
        return math.nan


def _run_mc(config: RunConfig) -> RunResult:
    spec = _spec(config)
    cfg = _mc_config(config)
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        est = estimate_excursion(spec, cutoff, cfg)
        log_p = _exact_log_p(spec, cutoff, cfg.theta)
        rows.append(
            {
                "seed": est.seed,
                "n": est.n,
                "k_lambda": cutoff.k_lambda,
                "theta": cfg.theta,
                "p_hat": est.p_hat,
                "stderr": est.stderr,
                "log_p_exact": log_p,
                "z_score": est.z_score(math.exp(log_p)) if math.isfinite(log_p) else math.nan,
            }
        )
    columns = ["seed", "n", "k_lambda", "theta", "p_hat", "stderr", "log_p_exact", "z_score"]
    return RunResult(columns=columns, rows=rows, extra={"mc_config": cfg.to_dict()})


def _run_euler(config: RunConfig) -> RunResult:
    spec = _spec(config)
    cfg = _mc_config(config)
    rows = []
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        est = euler_char_circle(spec, cutoff, cfg)
        log_p = _exact_log_p(spec, cutoff, cfg.theta)
        rows.append(
            {
                "seed": est.seed,
                "n": est.n,
                "k_lambda": cutoff.k_lambda,
                "theta": cfg.theta,
                "mean_chi": est.mean_chi,
                "stderr": est.stderr,
                "log_p_exact": log_p,
                "z_score": est.z_score(math.exp(log_p)) if math.isfinite(log_p) else math.nan,
                "whole_circle": est.whole_circle,
                "mean_length": est.mean_length,
            }
        )
    columns = [
        "seed", "n", "k_lambda", "theta", "mean_chi", "stderr", "log_p_exact", "z_score", "whole_circle", "mean_length",
    ]
    return RunResult(columns=columns, rows=rows, extra={"mc_config": cfg.to_dict()})


def _run_validity(config: RunConfig) -> RunResult:
    spec = _spec(config)
    thetas = sorted(config.thetas)
    cfg = _mc_config(config, theta=thetas[-1])
    rows = []
    rho = {}
    for kwargs in config.cutoff_args():
        cutoff = enumerate_basis(spec, **kwargs)
        report = validity_scan(spec, cutoff, cfg, thetas)
        for row in report.rows:
            rows.append({"lambda": cutoff.lam, "k_lambda": cutoff.k_lambda, **row})
        rho[f"{cutoff.lam:.12g}"] = report.rho_hat
    columns = ["lambda", "k_lambda", "theta", "p_hat", "stderr", "log_p_exact", "z_score"]
    return RunResult(columns=columns, rows=rows, extra={"rho_hat": rho, "mc_config": cfg.to_dict()})


_HANDLERS: Dict[Subcommand, Callable[[RunConfig], RunResult]] = {
    Subcommand.CRIT_LIMIT: _run_crit_limit,
    Subcommand.CRIT_RADIUS: _run_crit_radius,
    Subcommand.LOCAL_RATIO: _run_local_ratio,
    Subcommand.WEYL_CHECK: _run_weyl_check,
    Subcommand.PULLBACK: _run_pullback,
    Subcommand.TUBE_PROB: _run_tube_prob,
    Subcommand.LDP: _run_ldp,
    Subcommand.MC: _run_mc,
    Subcommand.EULER: _run_euler,
    Subcommand.VALIDITY: _run_validity,
}


def run(config: RunConfig) -> int:
    """
    执行一次运行并写出结果表与 manifest

    Returns:
        退出码：0 成功，2 定义域/校验错误，3 资源错误
    """
    name = config.subcommand.value.replace("-", "_")
    logger.info(f"🚀 运行 {config.subcommand.value}（{config.manifold}）")
    try:
        result = _HANDLERS[config.subcommand](config)
        store = get_result_store(str(config.output), config.format.value)
        store.save_run(
            name,
            result.rows,
            result.columns,
            subcommand=config.subcommand.value,
            parameters=config.effective_parameters(),
            extra=result.extra,
        )
    except WaveCritError as e:
        logger.error(f"❌ {config.subcommand.value} 失败: {e}")
        return e.exit_code
    logger.info(f"✅ {config.subcommand.value} 完成")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行入口，返回退出码"""
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code
    try:
        config = parse_config(argv)
    except UsageError as e:
        logger.error(f"❌ 用法错误{f'（{e.key}）' if e.key else ''}: {e}")
        parser.print_usage(sys.stderr)
        return e.exit_code
    except ValidationError as e:
        return e.exit_code
    return run(config)
