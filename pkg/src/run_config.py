#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
运行配置模型
命令行与 key=value 配置文件合并后的参数，字段校验与各模块的前置条件一致
"""

import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config.config import CLI_CONFIG, DATA_PATHS, MC_CONFIG, SPECFUN_CONFIG


class Subcommand(str, Enum):
    CRIT_LIMIT = "crit-limit"
    CRIT_RADIUS = "crit-radius"
    LOCAL_RATIO = "local-ratio"
    WEYL_CHECK = "weyl-check"
    PULLBACK = "pullback"
    TUBE_PROB = "tube-prob"
    LDP = "ldp"
    MC = "mc"
    EULER = "euler"
    VALIDITY = "validity"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


MANIFOLD_NAMES = ("torus1", "torus2", "torus3", "sphere2")

# 需要谱截断（λ 或 N）的子命令
_NEEDS_CUTOFF = {
    Subcommand.CRIT_RADIUS,
    Subcommand.LOCAL_RATIO,
    Subcommand.WEYL_CHECK,
    Subcommand.PULLBACK,
    Subcommand.TUBE_PROB,
    Subcommand.LDP,
    Subcommand.MC,
    Subcommand.EULER,
    Subcommand.VALIDITY,
}

# 需要 θ 的子命令
_NEEDS_THETA = {Subcommand.TUBE_PROB, Subcommand.LDP, Subcommand.MC, Subcommand.EULER}

# 只对平坦环面有定义的子命令
_TORUS_ONLY = {Subcommand.TUBE_PROB, Subcommand.LDP, Subcommand.VALIDITY}


def _split_list(value):
    if isinstance(value, str):
        return [v for v in value.replace(";", ",").split(",") if v.strip()]
    return value


class RunConfig(BaseModel):
    """一次运行的全部有效参数"""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    subcommand: Subcommand
    manifold: str = "torus1"
    dim: Optional[int] = None
    lam: Optional[float] = None
    bigN: Optional[int] = None
    lambdas: Optional[List[float]] = None
    bigNs: Optional[List[int]] = None
    theta: Optional[float] = None
    thetas: Optional[List[float]] = None
    seed: int = MC_CONFIG["seed"]
    n_samples: int = MC_CONFIG["n_samples"]
    grid_points: int = MC_CONFIG["grid_points"]
    refine: bool = MC_CONFIG["refine"]
    pairs: int = CLI_CONFIG["default_pairs"]
    u_max: float = SPECFUN_CONFIG["default_u_max"]
    coarse_step: float = SPECFUN_CONFIG["default_coarse_step"]
    threads: int = CLI_CONFIG["default_threads"]
    output: Path = DATA_PATHS["output"]
    format: OutputFormat = OutputFormat.CSV

    @field_validator("manifold")
    @classmethod
    def _check_manifold(cls, v: str) -> str:
        if v not in MANIFOLD_NAMES:
            raise ValueError(f"必须是 {', '.join(MANIFOLD_NAMES)} 之一")
        return v

    @field_validator("dim")
    @classmethod
    def _check_dim(cls, v):
        if v is not None and not (1 <= v <= SPECFUN_CONFIG["max_dim"]):
            raise ValueError(f"维数必须在 1..{SPECFUN_CONFIG['max_dim']} 内")
        return v

    @field_validator("lam")
    @classmethod
    def _check_lam(cls, v):
        if v is not None and not (v > 0 and math.isfinite(v)):
            raise ValueError("λ 必须为正")
        return v

    @field_validator("bigN")
    @classmethod
    def _check_bign(cls, v):
        if v is not None and v < 1:
            raise ValueError("bigN 必须 ≥ 1")
        return v

    @field_validator("lambdas", "bigNs", "thetas", mode="before")
    @classmethod
    def _parse_lists(cls, v):
        return _split_list(v)

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, v):
        if v is not None and (not v or any(not (x > 0 and math.isfinite(x)) for x in v)):
            raise ValueError("λ 列表中的值必须为正")
        return v

    @field_validator("bigNs")
    @classmethod
    def _check_bigns(cls, v):
        if v is not None and (not v or any(x < 1 for x in v)):
            raise ValueError("bigN 列表中的值必须 ≥ 1")
        return v

    @field_validator("theta")
    @classmethod
    def _check_theta(cls, v):
        if v is not None and not (0.0 < v < 0.5 * math.pi):
            raise ValueError("θ 必须在 (0, π/2) 内")
        return v

    @field_validator("thetas")
    @classmethod
    def _check_thetas(cls, v):
        if v is not None and (not v or any(not (0.0 < t < 0.5 * math.pi) for t in v)):
            raise ValueError("θ 列表中的值必须在 (0, π/2) 内")
        return v

    @field_validator("n_samples", "pairs", "threads")
    @classmethod
    def _check_positive(cls, v):
        if v < 1:
            raise ValueError("必须 ≥ 1")
        return v

    @field_validator("grid_points")
    @classmethod
    def _check_grid(cls, v):
        if v < 64:
            raise ValueError("必须 ≥ 64")
        return v

    @field_validator("u_max")
    @classmethod
    def _check_u_max(cls, v):
        if v < 100:
            raise ValueError("必须 ≥ 100")
        return v

    @field_validator("coarse_step")
    @classmethod
    def _check_step(cls, v):
        if not (0 < v <= 0.01):
            raise ValueError("必须在 (0, 0.01] 内")
        return v

    @model_validator(mode="after")
    def _check_subcommand(self) -> "RunConfig":
        sub = self.subcommand
        if sub == Subcommand.CRIT_LIMIT and self.dim is None:
            self.dim = 1
        if sub in _NEEDS_CUTOFF and not self.cutoff_args():
            raise ValueError(f"{sub.value} 需要 --lambda、--bigN 或其列表形式")
        if sub in _NEEDS_THETA and self.theta is None:
            raise ValueError(f"{sub.value} 需要 --theta")
        if sub == Subcommand.VALIDITY and not self.thetas:
            raise ValueError("validity 需要 --thetas")
        if sub in _TORUS_ONLY and not self.manifold.startswith("torus"):
            raise ValueError(f"{sub.value} 只支持平坦环面")
        if sub == Subcommand.EULER and self.manifold != "torus1":
            raise ValueError("euler 只支持 torus1")
        return self

    def cutoff_args(self) -> List[Dict[str, Any]]:
        """每个谱截断对应的 enumerate_basis 关键字参数"""
        if self.bigNs:
            return [{"bigN": int(n)} for n in self.bigNs]
        if self.lambdas:
            return [{"lam": float(v)} for v in self.lambdas]
        if self.bigN is not None:
            return [{"bigN": int(self.bigN)}]
        if self.lam is not None:
            return [{"lam": float(self.lam)}]
        return []

    def effective_parameters(self) -> Dict[str, Any]:
        """写入 manifest 的参数"""
        data = self.model_dump(mode="json")
        return data
