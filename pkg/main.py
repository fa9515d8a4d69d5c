#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
谱嵌入临界半径与随机波超越概率计算主程序
计算嵌入流形的临界半径，并用管状公式与蒙特卡洛检验超越概率
"""

import sys
import logging
from pathlib import Path

# 添加src目录到路径
sys.path.insert(0, str(Path(__file__).parent / "src"))
sys.path.insert(0, str(Path(__file__).parent))

from config.config import DATA_PATHS, ensure_directories

# 确保日志目录存在
ensure_directories()

# 设置日志
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(DATA_PATHS["logs"] / 'wavecrit.log', encoding='utf-8'),
        logging.StreamHandler()
    ],
    force=True,
)
logger = logging.getLogger(__name__)

import cli  # noqa: E402


def main():
    """主函数"""
    exit_code = cli.main(sys.argv[1:])
    if exit_code == 0:
        logger.info("👋 运行结束")
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
