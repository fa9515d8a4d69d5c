#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
结果存储管理器
负责把计算结果写成 CSV/JSON，并为每次运行写出 manifest；所有写入都是原子的
"""

import json
import logging
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from config.config import ARTIFACT_VERSION

# 设置日志
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _json_safe(value):
    """把 inf/nan 与 numpy 标量转成 JSON 可写的值"""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


class ResultStore:
    """结果存储管理器"""

    def __init__(self, store_path: str, output_format: str = "csv"):
        """
        初始化结果存储

        Args:
            store_path: 输出目录
            output_format: csv 或 json
        """
        if output_format not in ("csv", "json"):
            raise ValueError(f"未知的输出格式: {output_format}")
        self.store_path = Path(store_path)
        self.output_format = output_format

        # 确保目录存在
        self.store_path.mkdir(parents=True, exist_ok=True)

        logger.debug(f"🗄️ 结果存储: {self.store_path}（{output_format}）")

    def _stage(self, path: Path, writer: Callable[[Path], None]) -> Path:
        """写到 path 同目录下的临时文件；失败时删除临时文件"""
        fd, tmp = tempfile.mkstemp(dir=str(self.store_path), prefix=f".{path.name}.", suffix=".tmp")
        os.close(fd)
        tmp_path = Path(tmp)
        try:
            writer(tmp_path)
        except BaseException:
            tmp_path.unlink(missing_ok=True)
            raise
        return tmp_path

    def table_path(self, name: str) -> Path:
        return self.store_path / f"{name}.{self.output_format}"

    def manifest_path(self, name: str) -> Path:
        return self.store_path / f"{name}.manifest.json"

    def _table_writer(self, rows: List[Dict], columns: Sequence[str]) -> Callable[[Path], None]:
        frame = pd.DataFrame(rows, columns=list(columns))
        if self.output_format == "csv":
            return lambda p: frame.to_csv(p, index=False)
        records = [_json_safe(r) for r in frame.to_dict(orient="records")]
        text = json.dumps(records, ensure_ascii=False, indent=2)
        return lambda p: p.write_text(text, encoding="utf-8")

    def _manifest_text(self, subcommand: str, parameters: Dict, outputs: List[Path], extra: Optional[Dict]) -> str:
        manifest = {
            "subcommand": subcommand,
            "artifact_version": ARTIFACT_VERSION,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "parameters": parameters,
            "outputs": [p.name for p in outputs],
            "status": "ok",
        }
        if extra:
            manifest["results"] = extra
        return json.dumps(_json_safe(manifest), ensure_ascii=False, indent=2)

    def save_run(
        self,
        name: str,
        rows: List[Dict],
        columns: Sequence[str],
        subcommand: str,
        parameters: Dict,
        extra: Optional[Dict] = None,
    ) -> Tuple[Path, Path]:
        """
        保存一次运行的结果表与 manifest

        两个文件都先写成临时文件，全部成功后才依次 os.replace；
        任何一个写失败都不会留下结果表或 manifest。

        Args:
            name: 文件名（不含扩展名）
            rows: 每行一个字典
            columns: 列顺序（CSV 表头）
            subcommand: 子命令名
            parameters: 全部有效参数
            extra: 写入 manifest 的附加结果

        Returns:
            (结果表路径, manifest 路径)
        """
        table = self.table_path(name)
        manifest = self.manifest_path(name)
        staged: List[Tuple[Path, Path]] = []
        try:
            staged.append((self._stage(table, self._table_writer(rows, columns)), table))
            text = self._manifest_text(subcommand, parameters, [table], extra)
            staged.append((self._stage(manifest, lambda p: p.write_text(text, encoding="utf-8")), manifest))
        except BaseException:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        logger.info(f"💾 结果已保存: {table}（{len(rows)} 行），manifest: {manifest.name}")
        return table, manifest

    def load_table(self, name: str) -> pd.DataFrame:
        """读取结果表"""
        path = self.table_path(name)
        if not path.exists():
            logger.warning(f"⚠️ 结果文件不存在: {path}")
            return pd.DataFrame()
        if self.output_format == "csv":
            return pd.read_csv(path)
        return pd.DataFrame(json.loads(path.read_text(encoding="utf-8")))

    def load_manifest(self, name: str) -> Dict:
        """读取 manifest"""
        path = self.manifest_path(name)
        if not path.exists():
            logger.warning(f"⚠️ manifest 不存在: {path}")
            return {}
        return json.loads(path.read_text(encoding="utf-8"))


# 全局结果存储实例（按目录与格式区分）
_result_stores: Dict = {}


def get_result_store(store_path: Optional[str] = None, output_format: str = "csv") -> ResultStore:
    """获取结果存储实例"""
    if store_path is None:
        from config.config import DATA_PATHS

        store_path = str(DATA_PATHS["output"])
    key = (str(Path(store_path).resolve()), output_format)
    if key not in _result_stores:
        _result_stores[key] = ResultStore(store_path, output_format)
    return _result_stores[key]
