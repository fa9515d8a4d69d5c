"""
管状公式测试：G_{q,b} 积分、F_{N,j} 系数、环面 Lipschitz-Killing 曲率、精确超越概率与大偏差曲线
"""

import math

import pytest
from scipy import integrate, special

from errors import DomainError
from manifolds import ManifoldSpec, enumerate_basis
from specfun import excursion_rate, log_sphere_area
from tube import (
    TubeQuery,
    excursion_prob_exact,
    f_coeff,
    g_integral,
    g_integral_laplace,
    ldp_curve,
    torus_lk,
    tube_probability,
)


def _g_direct(q, b, theta):
    """不经对数变换的直接求积（小 b 时的参照值）"""
    value, _ = integrate.quad(
        lambda r: math.cos(r) ** q * math.sin(r) ** (b - 1), 0.0, theta, epsabs=0.0, epsrel=1e-13, limit=200
    )
    return math.exp(log_sphere_area(b)) * value


def _f_direct(N, j, theta):
    total = 0.0
    for k in range(j // 2 + 1):
        coef = (-4 * math.pi) ** (-k) / math.factorial(k) * math.factorial(j) / math.factorial(j - 2 * k)
        total += coef * _g_direct(j - 2 * k, N - 1 + 2 * k - j, theta)
    return total


# ---------------------------------------------------------------------------
# G_{q,b}
# ---------------------------------------------------------------------------


def test_g_integral_at_zero_is_zero():
    assert g_integral(0, 2, 0.0).sign == 0
    assert g_integral(3, 7, 0.0).value == 0.0


def test_g_integral_circle_cap():
    for theta in (0.1, 0.7, 1.5):
        assert g_integral(0, 2, theta).value == pytest.approx(2 * math.pi * (1 - math.cos(theta)), rel=1e-10)


def test_g_integral_power_closed_form():
    theta = 0.7
    expected = math.exp(log_sphere_area(25)) * math.sin(theta) ** 25 / 25
    assert g_integral(1, 25, theta).value == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("b", [2, 3, 10, 25, 50])
def test_g_integral_half_sphere(b):
    log_expected = (
        log_sphere_area(b)
        + 0.5 * math.log(math.pi)
        + special.gammaln(b / 2)
        - math.log(2)
        - special.gammaln((b + 1) / 2)
    )
    result = g_integral(0, b, math.pi / 2)
    assert result.sign == 1
    assert result.log_abs == pytest.approx(log_expected, abs=1e-9)


def test_g_integral_large_b_against_laplace():
    exact = g_integral(0, 1_000_000, 0.7)
    approx = g_integral_laplace(0, 1_000_000, 0.7)
    assert math.isfinite(exact.log_abs)
    assert abs(math.exp(exact.log_abs - approx.log_abs) - 1) < 1e-3


def test_g_integral_domain():
    with pytest.raises(DomainError):
        g_integral(0, 3, -0.1)
    with pytest.raises(DomainError):
        g_integral(0, 3, 1.6)
    with pytest.raises(DomainError):
        g_integral(-1, 3, 0.5)
    with pytest.raises(DomainError):
        g_integral(0, 0, 0.5)


@pytest.mark.parametrize("q,b", [(0, 5), (1, 12), (2, 20), (4, 9)])
def test_g_integral_matches_direct(q, b):
    for theta in (0.2, 0.6, 1.2):
        assert g_integral(q, b, theta).value == pytest.approx(_g_direct(q, b, theta), rel=1e-9)


# ---------------------------------------------------------------------------
# F_{N,j}
# ---------------------------------------------------------------------------


def test_f_coeff_low_orders():
    N, theta = 10, 0.6
    assert f_coeff(N, 0, theta).value == pytest.approx(g_integral(0, N - 1, theta).value, rel=1e-12)
    assert f_coeff(N, 1, theta).value == pytest.approx(g_integral(1, N - 2, theta).value, rel=1e-12)
    expected = g_integral(2, N - 3, theta).value - g_integral(0, N - 1, theta).value / (2 * math.pi)
    assert f_coeff(N, 2, theta).value == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("N", [6, 12, 30])
def test_f_coeff_matches_direct(N):
    theta = 0.5
    for j in range(4):
        tol = 1e-9 if j < 2 else 1e-8
        assert f_coeff(N, j, theta).value == pytest.approx(_f_direct(N, j, theta), rel=tol)


def test_f_coeff_domain():
    with pytest.raises(DomainError):
        f_coeff(5, 4, 0.5)
    with pytest.raises(DomainError):
        f_coeff(5, -1, 0.5)


# ---------------------------------------------------------------------------
# Lipschitz-Killing 曲率
# ---------------------------------------------------------------------------


def test_torus_lk_circle(torus1):
    lk = torus_lk(torus1, enumerate_basis(torus1, bigN=5))
    assert lk[0] == 0.0
    assert lk[1] == pytest.approx(2 * math.pi * math.sqrt(10), rel=1e-12)


def test_torus_lk_torus2(torus2):
    lk = torus_lk(torus2, enumerate_basis(torus2, bigN=6))
    assert lk[0] == 0.0 and lk[1] == 0.0
    assert lk[2] > 0


def test_torus_lk_length_tracks_lambda(torus1):
    cutoff = enumerate_basis(torus1, bigN=1000)
    assert torus_lk(torus1, cutoff)[1] / (cutoff.lam / math.sqrt(3)) == pytest.approx(1.0, abs=1e-3)


def test_torus_lk_rejects_sphere(sphere):
    with pytest.raises(DomainError):
        torus_lk(sphere, enumerate_basis(sphere, bigN=4))


# ---------------------------------------------------------------------------
# 精确超越概率
# ---------------------------------------------------------------------------


def test_exact_probability_circle(circle8, torus1):
    theta = 0.7
    gram = 96 * math.pi**2
    log_expected = (
        0.5 * math.log(gram)
        + log_sphere_area(15)
        + 15 * math.log(math.sin(theta))
        - math.log(15)
        - log_sphere_area(17)
    )
    result = excursion_prob_exact(torus1, circle8, theta)
    assert result.log_p == pytest.approx(log_expected, abs=1e-8)
    assert result.p == pytest.approx(6.69e-3, rel=0.01)


def test_exact_probability_explicit_lk_matches_default(circle8, torus1):
    lk = torus_lk(torus1, circle8)
    assert excursion_prob_exact(torus1, circle8, 0.5, lk=lk).log_p == excursion_prob_exact(torus1, circle8, 0.5).log_p


def test_exact_probability_monotone(torus2):
    cutoff = enumerate_basis(torus2, bigN=4)
    values = [excursion_prob_exact(torus2, cutoff, t).log_p for t in (0.3, 0.5, 0.7, 0.9)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_exact_probability_small_theta(circle8, torus1):
    assert excursion_prob_exact(torus1, circle8, 1e-3).log_p < -90


def test_exact_probability_domain(circle8, torus1, sphere):
    with pytest.raises(DomainError):
        excursion_prob_exact(torus1, circle8, math.pi / 2)
    with pytest.raises(DomainError):
        excursion_prob_exact(torus1, circle8, 0.0)
    with pytest.raises(DomainError):
        excursion_prob_exact(sphere, enumerate_basis(sphere, bigN=5), 0.5)
    with pytest.raises(DomainError):
        excursion_prob_exact(torus1, enumerate_basis(torus1, bigN=1), 0.5)


def test_tube_query_validation():
    with pytest.raises(DomainError):
        TubeQuery(ambient_dim_minus1=10, intrinsic_dim=1, theta=0.5, lk=[0.0])
    with pytest.raises(DomainError):
        TubeQuery(ambient_dim_minus1=10, intrinsic_dim=1, theta=0.5, lk=[0.0, 0.0])
    query = TubeQuery(ambient_dim_minus1=16, intrinsic_dim=1, theta=0.7, lk=[0.0, math.sqrt(96) * math.pi])
    assert tube_probability(query).p == pytest.approx(6.69e-3, rel=0.01)


# ---------------------------------------------------------------------------
# 大偏差曲线
# ---------------------------------------------------------------------------


def test_ldp_curve_converges(torus1):
    points = ldp_curve(torus1, 0.5, bigNs=[25, 50, 100, 200])
    rate = excursion_rate(1, 0.5)
    assert all(p.ldp_rate == rate for p in points)
    assert all(math.isfinite(p.scaled_log_p) and p.scaled_log_p < 0 for p in points)
    gaps = [p.abs_gap for p in points]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.1 * abs(rate)


def test_ldp_successive_differences_shrink(torus1):
    scaled = [p.scaled_log_p for p in ldp_curve(torus1, 0.5, bigNs=[25, 50, 100, 200])]
    steps = [abs(b - a) for a, b in zip(scaled, scaled[1:])]
    for coarse, fine in zip(steps, steps[1:]):
        assert fine < 0.8 * coarse
    # 圆周上 p = √(N(N+1)/3)·sin^{2N−1}θ，差分约为 8.7e-3、5.4e-3、3.3e-3
    assert steps[0] == pytest.approx(8.72e-3, rel=0.02)


def test_ldp_curve_threads_keep_order(torus1):
    serial = ldp_curve(torus1, 0.6, bigNs=[10, 30, 20])
    parallel = ldp_curve(torus1, 0.6, bigNs=[10, 30, 20], threads=3)
    assert [p.k_lambda for p in parallel] == [21, 61, 41]
    assert [p.log_p_exact for p in parallel] == [p.log_p_exact for p in serial]


def test_ldp_near_right_angle(torus1):
    point = ldp_curve(torus1, math.pi / 2 - 1e-6, bigNs=[200])[0]
    assert abs(point.scaled_log_p) < 0.05


def test_ldp_row_columns(torus1):
    row = ldp_curve(torus1, 0.5, lambdas=[2 * math.pi * 20])[0].to_row()
    assert list(row) == ["theta", "lambda", "k_lambda", "log_p_exact", "scaled_log_p", "ldp_rate", "abs_gap"]


def test_ldp_requires_cutoffs(torus1):
    with pytest.raises(DomainError):
        ldp_curve(torus1, 0.5)
    with pytest.raises(DomainError):
        ldp_curve(ManifoldSpec.sphere2(), 0.5, bigNs=[5])
