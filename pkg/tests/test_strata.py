from fractions import Fraction
from math import floor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adastrat.strata import (Allocation, DegenerateAllocationError, build_equiprobable_grid,
                             draws_from_allocation, fixed_I_variance, floored_allocation,
                             large_M_variance, optimal_allocation)


def exact_counts(q, M):
    """Cumulative-floor counts in exact rational arithmetic.

    ``q`` is renormalized exactly. Cumulative products within 1e-9 (relative)
    of an integer count as that integer, matching the engine's guard against
    float sums such as ten 0.1's landing just below 1.
    """
    fr = [Fraction(float(x)) for x in q]
    total = sum(fr)
    cum = Fraction(0)
    uppers = []
    for x in fr:
        cum += x / total
        v = M * cum
        r = round(v)
        uppers.append(r if abs(v - r) <= Fraction(1, 10**9) * max(1, v) else floor(v))
    lowers = [0] + uppers[:-1]
    return np.array([u - l for u, l in zip(uppers, lowers)])


# --- grid -------------------------------------------------------------------

def test_grid_two_strata():
    g = build_equiprobable_grid(1, 2)
    assert np.array_equal(g.boundaries, [-np.inf, 0.0, np.inf])


def test_grid_quartiles():
    g = build_equiprobable_grid(1, 4)
    assert np.allclose(g.interior, [-0.6744897502, 0.0, 0.6744897502], atol=1e-9)


def test_grid_hundred():
    g = build_equiprobable_grid(1, 100)
    assert g.n_cells == 100
    assert np.allclose(g.probabilities, 0.01)
    assert np.all(np.diff(g.boundaries) > 0)


def test_grid_m2_cells_and_order():
    g = build_equiprobable_grid(2, 3)
    assert g.n_cells == 9
    assert abs(g.probabilities.sum() - 1) < 1e-15
    assert np.array_equal(g.multi_index(5), [1, 2])
    assert g.flat_index([1, 2]) == 5
    assert np.allclose(g.cell_bounds(5), [[1 / 3, 2 / 3], [2 / 3, 1.0]])


def test_boundary_value_goes_to_lower_cell():
    g = build_equiprobable_grid(1, 4)
    z = g.interior[1]
    assert g.locate(np.array([z]))[0] == 1
    assert g.locate(np.array([np.nextafter(z, 1)]))[0] == 2


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_equiprobable_grid(1, 1)


# --- draw counts --------------------------------------------------------------

def test_counts_example():
    assert np.array_equal(draws_from_allocation([0.25, 0.25, 0.5], 10), [2, 3, 5])


def test_counts_uniform_multiple():
    q = np.full(100, 0.01)
    assert np.all(draws_from_allocation(q, 20000) == 200)
    q = np.full(16, 1 / 16)
    assert np.all(draws_from_allocation(q, 160) == 10)


def test_counts_property_1000_cases():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        q = rng.dirichlet(np.full(n, rng.uniform(0.1, 3)))
        if rng.random() < 0.3:
            q[rng.random(n) < 0.3] = 0.0
            if q.sum() == 0:
                q[0] = 1.0
            q /= q.sum()
        M = int(rng.integers(1, 100_000))
        counts = draws_from_allocation(q, M)
        assert counts.sum() == M
        assert np.all(np.abs(counts - M * q) < 1)
        assert np.array_equal(counts, exact_counts(q, M))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 10**6))
@settings(max_examples=200, deadline=None)
def test_counts_hypothesis(raw, M):
    q = np.asarray(raw)
    if q.sum() <= 0:
        q = np.ones_like(q)
    q = q / q.sum()
    counts = draws_from_allocation(q, M)
    assert counts.sum() == M
    assert np.all(counts >= 0)
    assert np.all(np.abs(counts - M * q) < 1 + 1e-6)


def test_counts_zero_weight_gets_no_draws():
    counts = draws_from_allocation([0.5, 0.0, 0.5], 7)
    assert counts[1] == 0


def test_allocation_object():
    a = Allocation.from_q(np.full(4, 0.25), 10)
    assert a.counts.sum() == 10


# --- optimal allocation ---------------------------------------------------------

def test_optimal_equal_sigma_is_proportional():
    p = np.array([0.2, 0.3, 0.5])
    assert np.allclose(optimal_allocation(p, np.full(3, 2.0)), p)


def test_optimal_zero_sigma_stratum():
    assert optimal_allocation([0.5, 0.5], [0.0, 1.0])[0] == 0.0


def test_optimal_example():
    assert np.allclose(optimal_allocation([0.5, 0.5], [1.0, 3.0]), [0.25, 0.75])


def test_optimal_degenerate():
    with pytest.raises(DegenerateAllocationError):
        optimal_allocation([0.5, 0.5], [0.0, 0.0])


@given(st.integers(1, 40), st.integers(0, 10**6), st.floats(1e-3, 1e3))
@settings(max_examples=100, deadline=None)
def test_optimal_sum_and_scale_invariance(n, seed, c):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    s = rng.uniform(0.01, 5, n)
    q = optimal_allocation(p, s)
    assert abs(q.sum() - 1) < 1e-15
    assert np.allclose(optimal_allocation(p, c * s), q, rtol=1e-12, atol=1e-15)


def test_floor():
    q = floored_allocation([0.0, 0.5, 0.5], 0.1)
    assert abs(q.sum() - 1) < 1e-15
    assert q.min() > 0


# --- variances ---------------------------------------------------------------------

def test_large_M_variance_at_optimum():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(8))
    s = rng.uniform(0.1, 2, 8)
    assert np.isclose(large_M_variance(p, s, optimal_allocation(p, s)), np.sum(p * s) ** 2)


def test_single_stratum_variance():
    assert np.isclose(fixed_I_variance([1.0], [2.0], [1.0], 50), 4.0 / 50)
    assert np.isclose(large_M_variance([1.0], [2.0], [1.0], 50), 4.0 / 50)


def test_large_M_zero_division_convention():
    assert large_M_variance([0.5, 0.5], [1.0, 0.0], [1.0, 0.0]) == 0.25
    assert large_M_variance([0.5, 0.5], [1.0, 1.0], [1.0, 0.0]) == np.inf


def test_optimal_beats_random_allocations():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(6))
    s = rng.uniform(0.1, 3, 6)
    best = large_M_variance(p, s, optimal_allocation(p, s))
    qs = rng.dirichlet(np.ones(6), size=10_000)
    others = np.sum(p ** 2 * s ** 2 / qs, axis=1)
    assert np.all(best <= others * (1 + 1e-12))


def _lemma1_i_gap(p, s, q, M):
    return abs(M * fixed_I_variance(p, s, q, M) - large_M_variance(p, s, q))


def test_rounding_error_bound_on_discrete_payoffs():
    from adastrat.oracle import lemma1_bound

    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(2, 40))
        p = np.full(n, 1 / n)
        s = rng.uniform(0, 2, n)
        means = rng.normal(0, 1, n)
        eps = rng.uniform(0.2, 1.0) / n
        q = eps + rng.dirichlet(np.ones(n)) * (1 - n * eps)
        M = int(rng.integers(int(1 / eps) + 1, 30 * int(1 / eps)))
        gap, bound = lemma1_bound("i", p, s, means, q, M, eps)
        assert gap == pytest.approx(_lemma1_i_gap(p, s, q, M))
        assert gap <= bound
