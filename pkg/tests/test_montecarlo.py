"""
蒙特卡洛测试：系数采样、上确界、并行确定性、超越概率与管状公式的一致性、圆周上的 Euler 示性数
"""

import math

import numpy as np
import pytest

from errors import DomainError
from manifolds import embed, enumerate_basis
from montecarlo import (
    MCConfig,
    MCEstimate,
    block_coeffs,
    block_stream,
    circle_arc_counts,
    estimate_excursion,
    estimate_excursion_curve,
    euler_char_circle,
    fibonacci_sphere,
    grid_stability,
    sample_coeffs,
    sample_suprema,
    sup_normalized_field,
    torus_field_at,
    torus_field_grid,
    validity_scan,
)
from tube import excursion_prob_exact


# ---------------------------------------------------------------------------
# 系数采样
# ---------------------------------------------------------------------------


def test_sample_coeffs_unit_norm():
    stream = block_stream(1, 0)
    for k in (2, 5, 17, 300):
        assert np.linalg.norm(sample_coeffs(k, stream)) == pytest.approx(1.0, abs=1e-12)


def test_sample_coeffs_rejects_small_k():
    with pytest.raises(DomainError):
        sample_coeffs(1, block_stream(0, 0))


def test_block_coeffs_moments():
    n, k = 100_000, 5
    A = block_coeffs(42, 0, n, k)
    assert np.allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(A.mean(axis=0)) <= 4 / math.sqrt(n))
    sq = A[:, 0] ** 2
    assert abs(sq.mean() - 1 / k) <= 5 * sq.std() / math.sqrt(n)


def test_block_coeffs_depend_only_on_seed_and_block():
    assert np.array_equal(block_coeffs(7, 3, 64, 9), block_coeffs(7, 3, 64, 9))
    assert not np.array_equal(block_coeffs(7, 3, 64, 9), block_coeffs(7, 4, 64, 9))
    assert not np.array_equal(block_coeffs(7, 3, 64, 9), block_coeffs(8, 3, 64, 9))


# ---------------------------------------------------------------------------
# 随机波的求值与上确界
# ---------------------------------------------------------------------------


def test_field_grid_matches_pointwise(torus2):
    cutoff = enumerate_basis(torus2, bigN=3)
    A = block_coeffs(0, 0, 4, cutoff.k_lambda)
    M = 16
    F = torus_field_grid(cutoff, A, M)
    for m in ((0, 0), (5, 11), (15, 2)):
        X = np.tile(np.array(m, dtype=float) / M, (4, 1))
        assert np.allclose(F[(slice(None),) + m], torus_field_at(cutoff, A, X), atol=1e-12)


def test_field_is_inner_product_with_embedding(torus1, circle8):
    a = block_coeffs(3, 0, 1, circle8.k_lambda)[0]
    x = np.array([[0.123]])
    value = torus_field_at(circle8, a[None, :], x)[0]
    assert value == pytest.approx(float(a @ embed(torus1, circle8, x[0])), abs=1e-12)


def test_sup_at_embedded_grid_point(torus1, circle8):
    cfg = MCConfig(grid_points=2048)
    a = embed(torus1, circle8, [37 / 2048])
    assert sup_normalized_field(torus1, circle8, a, cfg) >= 1 - 1e-12


def test_sup_of_constant_mode(torus1, circle8):
    a = np.zeros(circle8.k_lambda)
    a[0] = 1.0
    value = sup_normalized_field(torus1, circle8, a, MCConfig(grid_points=2048))
    assert value == pytest.approx(1 / math.sqrt(circle8.k_lambda), abs=1e-12)


def test_sup_rejects_wrong_dimension(torus1, circle8):
    with pytest.raises(DomainError):
        sup_normalized_field(torus1, circle8, np.ones(5) / math.sqrt(5), MCConfig())
    with pytest.raises(DomainError):
        sup_normalized_field(torus1, circle8, np.ones(circle8.k_lambda), MCConfig())


def test_refinement_is_small_at_resolved_grid(torus1, circle8):
    coarse = MCConfig(n_samples=100, grid_points=101, refine=False)
    fine = MCConfig(n_samples=100, grid_points=101, refine=True)
    assert circle8.lam / 101 <= 0.5
    s0 = sample_suprema(torus1, circle8, coarse)
    s1 = sample_suprema(torus1, circle8, fine)
    assert np.all(s1 >= s0)
    assert np.max(s1 - s0) <= 0.01


def test_sphere_sup_at_embedded_grid_point(sphere):
    cutoff = enumerate_basis(sphere, bigN=4)
    cfg = MCConfig(grid_points=1024)
    a = embed(sphere, cutoff, fibonacci_sphere(1024)[10])
    assert sup_normalized_field(sphere, cutoff, a, cfg) >= 1 - 1e-12


def test_sphere_estimate_runs(sphere):
    cutoff = enumerate_basis(sphere, bigN=3)
    est = estimate_excursion(sphere, cutoff, MCConfig(n_samples=200, grid_points=512, theta=0.9))
    assert 0 <= est.p_hat <= 1
    assert est.n == 200


# ---------------------------------------------------------------------------
# 确定性与估计量
# ---------------------------------------------------------------------------


def test_thread_count_does_not_change_results(torus1, circle8):
    single = sample_suprema(torus1, circle8, MCConfig(n_samples=20_000, grid_points=256, threads=1))
    multi = sample_suprema(torus1, circle8, MCConfig(n_samples=20_000, grid_points=256, threads=4))
    assert np.array_equal(single, multi)


def test_samples_independent_of_total(torus1, circle8):
    short = sample_suprema(torus1, circle8, MCConfig(n_samples=5_000, grid_points=256))
    long = sample_suprema(torus1, circle8, MCConfig(n_samples=10_000, grid_points=256))
    assert np.array_equal(short, long[:5_000])


def test_wide_cap_is_almost_sure(torus1, circle8):
    est = estimate_excursion(torus1, circle8, MCConfig(n_samples=10_000, grid_points=256, theta=1.55))
    assert est.p_hat >= 0.99


def test_stderr_halves_with_four_times_samples(torus1, circle8):
    small = estimate_excursion(torus1, circle8, MCConfig(n_samples=2_500, grid_points=256, theta=1.0))
    large = estimate_excursion(torus1, circle8, MCConfig(n_samples=10_000, grid_points=256, theta=1.0))
    assert large.stderr / small.stderr == pytest.approx(0.5, rel=0.2)


def test_excursion_curve_monotone(torus1, circle8):
    thetas = [0.4, 0.6, 0.8, 1.0, 1.2]
    curve = estimate_excursion_curve(torus1, circle8, MCConfig(n_samples=5_000, grid_points=256), thetas)
    hats = [e.p_hat for e in curve]
    assert all(a <= b for a, b in zip(hats, hats[1:]))
    assert [e.theta for e in curve] == thetas


def test_estimate_fields():
    est = MCEstimate.from_counts(0, 1000, 5)
    assert est.p_hat == 0.0 and est.stderr == 0.0
    assert est.wilson_halfwidth > 0
    assert est.z_score(0.0) == 0.0
    est = MCEstimate.from_counts(250, 1000, 5)
    assert est.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 1000))


def test_config_validation():
    with pytest.raises(DomainError):
        MCConfig(n_samples=0)
    with pytest.raises(DomainError):
        MCConfig(grid_points=32)
    with pytest.raises(DomainError):
        MCConfig(theta=0.0)


def test_monte_carlo_agrees_with_tube_formula(torus1, circle8):
    p_exact = excursion_prob_exact(torus1, circle8, 0.7).p
    est = estimate_excursion(torus1, circle8, MCConfig(seed=42, n_samples=20_000, theta=0.7))
    assert abs(est.z_score(p_exact)) <= 4


@pytest.mark.slow
def test_monte_carlo_agrees_with_tube_formula_million(torus1, circle8):
    p_exact = excursion_prob_exact(torus1, circle8, 0.7).p
    est = estimate_excursion(torus1, circle8, MCConfig(seed=42, n_samples=1_000_000, theta=0.7, threads=4))
    assert abs(est.z_score(p_exact)) <= 3


def test_validity_scan_report(torus1, circle8):
    thetas = [0.7, 0.3, 0.5]
    report = validity_scan(torus1, circle8, MCConfig(n_samples=5_000, grid_points=256), thetas)
    assert [r["theta"] for r in report.rows] == [0.3, 0.5, 0.7]
    assert report.rho_hat is None or report.rho_hat in (0.3, 0.5, 0.7)
    for row in report.rows:
        assert set(row) == {"theta", "p_hat", "stderr", "log_p_exact", "z_score"}


# ---------------------------------------------------------------------------
# 圆周上的 Euler 示性数
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("refine", [False, True])
def test_arcs_consistent_with_suprema(torus1, circle8, refine):
    cfg = MCConfig(n_samples=3_000, grid_points=256, theta=0.9, refine=refine)
    counts = circle_arc_counts(circle8, cfg)
    sup = sample_suprema(torus1, circle8, cfg)
    assert np.array_equal(counts["sup"], sup)
    open_set = ~counts["whole"]
    assert np.array_equal(counts["chi"][open_set] >= 1, sup[open_set] > cfg.threshold)
    assert np.all(counts["chi"][~(sup > cfg.threshold)] == 0)


def test_arc_lengths_in_range(circle8):
    counts = circle_arc_counts(circle8, MCConfig(n_samples=2_000, grid_points=512, theta=1.0))
    assert np.all((counts["length"] >= 0) & (counts["length"] <= 1))
    assert np.all(counts["length"][counts["chi"] == 0][~counts["whole"][counts["chi"] == 0]] == 0)


def test_euler_characteristic_matches_tube_formula(torus1, circle8):
    p_exact = excursion_prob_exact(torus1, circle8, 0.7).p
    est = euler_char_circle(torus1, circle8, MCConfig(seed=42, n_samples=20_000, theta=0.7, refine=True))
    assert abs(est.z_score(p_exact)) <= 4
    assert 0 <= est.mean_length <= 1
    assert est.total_arcs >= 0


@pytest.mark.slow
def test_euler_characteristic_matches_tube_formula_full(torus1, circle8):
    p_exact = excursion_prob_exact(torus1, circle8, 0.7).p
    est = euler_char_circle(torus1, circle8, MCConfig(seed=42, n_samples=100_000, theta=0.7, threads=4, refine=True))
    assert abs(est.z_score(p_exact)) <= 3


def test_euler_only_on_circle(torus2):
    cutoff = enumerate_basis(torus2, bigN=3)
    with pytest.raises(DomainError):
        euler_char_circle(torus2, cutoff, MCConfig(n_samples=10))


def test_arc_counts_stable_under_refinement(circle8):
    cfg = MCConfig(n_samples=5_000, theta=0.7)
    assert grid_stability(circle8, cfg, finer_points=4096) >= 0.999
