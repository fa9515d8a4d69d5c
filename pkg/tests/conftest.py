"""
测试公共配置：把仓库根目录与 src/ 加入 sys.path，并提供常用流形与谱截断
"""

import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(_ROOT, "src"))
sys.path.insert(0, _ROOT)

import pytest  # noqa: E402

from manifolds import ManifoldSpec, enumerate_basis  # noqa: E402


@pytest.fixture(scope="session")
def torus1():
    return ManifoldSpec.torus(1)


@pytest.fixture(scope="session")
def torus2():
    return ManifoldSpec.torus(2)


@pytest.fixture(scope="session")
def sphere():
    return ManifoldSpec.sphere2()


@pytest.fixture(scope="session")
def circle8(torus1):
    """T^1, N=8（k_λ=17），管状公式与蒙特卡洛的标准算例"""
    return enumerate_basis(torus1, bigN=8)
