import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adastrat.gauss import (DegenerateMatrixError, RandomStream, orthonormalize_svd,
                            rotation_from_direction, sample_hyperplane_conditional,
                            sample_stratum_conditional, std_normal_quantile)
from adastrat.oracle import truncated_normal_moments
from adastrat.strata import build_equiprobable_grid

mpmath.mp.dps = 40


def mp_quantile(u):
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(u) - 1))


# --- quantile -------------------------------------------------------------

def test_quantile_median():
    assert std_normal_quantile(0.5) == 0.0


def test_quantile_975():
    assert abs(std_normal_quantile(0.975) - 1.959964) < 1e-6


def test_quantile_matches_high_precision_reference():
    rng = np.random.default_rng(11)
    us = np.concatenate([
        10.0 ** rng.uniform(-12, -0.3, 300),
        rng.uniform(0.0, 1.0, 300),
        1.0 - 10.0 ** rng.uniform(-12, -0.3, 300),
        [1e-12, 1 - 1e-12, 0.02425, 0.97575],
    ])
    us = us[(us >= 1e-12) & (us <= 1 - 1e-12)]
    got = std_normal_quantile(us)
    ref = np.array([mp_quantile(u) for u in us])
    assert np.max(np.abs(got - ref)) <= 1e-9


def test_quantile_symmetry():
    u = np.random.default_rng(3).uniform(1e-6, 1 - 1e-6, 1000)
    assert np.max(np.abs(std_normal_quantile(1 - u) + std_normal_quantile(u))) < 1e-9


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_quantile_domain(u):
    with pytest.raises(ValueError):
        std_normal_quantile(u)


# --- random streams ---------------------------------------------------------

def test_stream_independent_of_interleaving():
    a1 = RandomStream(5, (1, 2))
    first = a1.normal(10)
    other = RandomStream(5, (1, 3))
    other.normal(1000)
    a2 = RandomStream(5, (1, 2))
    a2.uniform(0)
    assert np.array_equal(first, a2.normal(10))


def test_distinct_substreams_differ_and_look_independent():
    x = RandomStream(5, (0,)).normal(20000)
    y = RandomStream(5, (1,)).normal(20000)
    assert not np.array_equal(x, y)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(20000)


def test_stream_counter_advances():
    s = RandomStream(1)
    c0 = s.counter
    s.uniform(8)
    assert s.counter > c0


# --- orthonormalization -----------------------------------------------------

def test_svd_keeps_canonical_vectors():
    a = np.eye(5)[:, :2]
    assert np.allclose(orthonormalize_svd(a), a)


def test_svd_normalizes_single_column():
    v = np.array([3.0, 4.0, 0.0])
    assert np.allclose(orthonormalize_svd(2.5 * v)[:, 0], v / 5)


def test_svd_span_matches_qr():
    a = np.random.default_rng(0).normal(size=(4, 2))
    o = orthonormalize_svd(a)
    q, _ = np.linalg.qr(a)
    assert np.abs(o.T @ o - np.eye(2)).max() <= 1e-10
    assert np.abs(o @ o.T - q @ q.T).max() <= 1e-8


@given(st.integers(2, 8), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_svd_idempotent_and_sign_convention(d, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, d))
    o = orthonormalize_svd(rng.normal(size=(d, m)))
    assert np.abs(orthonormalize_svd(o) - o).max() <= 1e-12
    for k in range(m):
        first = o[np.flatnonzero(np.abs(o[:, k]) > 1e-12)[0], k]
        assert first > 0


def test_svd_rank_deficient():
    a = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    with pytest.raises(DegenerateMatrixError):
        orthonormalize_svd(a)


# --- rotation -----------------------------------------------------------------

def test_rotation_e1():
    o = rotation_from_direction(np.eye(4)[0])
    assert np.allclose(o[:, 0], np.eye(4)[0])
    assert np.allclose(np.abs(o), np.eye(4))


def test_rotation_2d():
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    o = rotation_from_direction(v)
    assert np.allclose(o.T @ o, np.eye(2))
    assert np.allclose(np.abs(o[:, 1]), [1 / np.sqrt(2)] * 2)
    assert o[0, 1] * o[1, 1] < 0


def test_rotation_random_16():
    v = np.random.default_rng(4).normal(size=16)
    v /= np.linalg.norm(v)
    o = rotation_from_direction(v)
    assert np.abs(o.T @ o - np.eye(16)).max() <= 1e-10
    assert np.array_equal(o[:, 0], v)


def test_rotation_uses_first_vector_when_last_is_dependent():
    o = rotation_from_direction(np.eye(3)[2])
    assert np.abs(o.T @ o - np.eye(3)).max() <= 1e-12
    assert np.allclose(np.abs(o[:, 2]), np.eye(3)[0])


def test_rotation_rejects_non_unit():
    with pytest.raises(ValueError):
        rotation_from_direction(np.array([1.0, 1.0]))


# --- conditional samplers -----------------------------------------------------

def _random_mu(d, m, seed):
    return orthonormalize_svd(np.random.default_rng(seed).normal(size=(d, m)))


def test_full_cell_is_unconditioned():
    mu = _random_mu(4, 1, 1)
    y = sample_stratum_conditional(mu, [[0.0, 1.0]], 100_000, RandomStream(2))
    s = y @ mu[:, 0]
    assert abs(s.mean()) < 3 / np.sqrt(s.size)


def test_upper_half_cell_mean():
    mu = _random_mu(3, 1, 2)
    y = sample_stratum_conditional(mu, [[0.5, 1.0]], 100_000, RandomStream(3))
    s = y @ mu[:, 0]
    mean, var = truncated_normal_moments(0.0, np.inf)
    assert abs(s.mean() - mean) < 3 * np.sqrt(var / s.size)
    assert abs(mean - 0.7978845608) < 1e-9


def test_orthogonal_part_is_standard_normal():
    d = 4
    mu = _random_mu(d, 1, 5)
    y = sample_stratum_conditional(mu, [[0.9, 0.95]], 50_000, RandomStream(6))
    basis = rotation_from_direction(mu[:, 0])[:, 1:]
    w = y @ basis
    n = w.shape[0]
    assert np.all(np.abs(w.mean(axis=0)) < 3 / np.sqrt(n))
    assert np.all(np.abs(w.var(axis=0) - 1) < 3 * np.sqrt(2 / n))


def test_sampler_budget_and_reuse():
    mu = _random_mu(5, 2, 7)
    cell = [[0.1, 0.2], [0.6, 0.7]]
    y, g = sample_stratum_conditional(mu, cell, 10, RandomStream(1), return_normals=True)
    s = RandomStream(1)
    s.uniform((10, 2))
    assert np.array_equal(g, s.normal((10, 5)))
    proj = y @ mu
    lo = std_normal_quantile(np.array([0.1, 0.6]))
    hi = std_normal_quantile(np.array([0.2, 0.7]))
    assert np.all((proj > lo - 1e-12) & (proj <= hi + 1e-12))


def test_aggregated_cells_match_unconditioned_moments():
    d, I = 3, 10
    mu = _random_mu(d, 1, 8)
    grid = build_equiprobable_grid(1, I)
    root = RandomStream(9)
    y = np.vstack([sample_stratum_conditional(mu, grid.cell_bounds(i), 10_000, root.substream(i))
                   for i in range(I)])
    n = y.shape[0]
    assert np.all(np.abs(y.mean(axis=0)) < 3 / np.sqrt(n))
    assert np.all(np.abs(y.var(axis=0) - 1) < 3 * np.sqrt(2 / n))


def test_unconditioned_cell_frequencies():
    d, m, I = 4, 2, 5
    mu = _random_mu(d, m, 10)
    grid = build_equiprobable_grid(m, I)
    y = RandomStream(11).normal((1_000_000, d))
    counts = np.bincount(grid.locate(y @ mu), minlength=grid.n_cells)
    p = 1.0 / grid.n_cells
    se = np.sqrt(y.shape[0] * p * (1 - p))
    assert np.all(np.abs(counts - y.shape[0] * p) < 4 * se)


def test_hyperplane_z0_e1():
    y = sample_hyperplane_conditional(np.eye(3)[0], 0.0, 1000, RandomStream(1))
    assert np.all(y[:, 0] == 0.0)
    assert abs(y[:, 1].std() - 1) < 0.1


@given(st.floats(-5, 5), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_hyperplane_exact_projection(z, seed):
    mu = _random_mu(6, 1, seed)[:, 0]
    y = sample_hyperplane_conditional(mu, z, 100, RandomStream(seed))
    assert np.max(np.abs(y @ mu - z)) <= 1e-12


def test_hyperplane_orthogonal_coordinate():
    mu = np.array([1.0, 1.0]) / np.sqrt(2)
    y = sample_hyperplane_conditional(mu, 1.0, 100_000, RandomStream(2))
    w = y @ np.array([1.0, -1.0]) / np.sqrt(2)
    assert abs(w.mean()) < 3 / np.sqrt(w.size)
    assert abs(w.var() - 1) < 3 * np.sqrt(2 / w.size)
