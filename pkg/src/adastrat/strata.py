"""Strata geometry and allocation arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss import std_normal_quantile

__all__ = [
    "StrataGrid",
    "Allocation",
    "DegenerateAllocationError",
    "build_equiprobable_grid",
    "draws_from_allocation",
    "optimal_allocation",
    "floored_allocation",
    "fixed_I_variance",
    "large_M_variance",
]


class DegenerateAllocationError(ValueError):
    """All stratum standard deviations vanish; no optimal allocation exists."""


@dataclass(frozen=True)
class StrataGrid:
    """Equiprobable quantile grid with ``I**m`` cells.

    Cells are half-open ``(lower, upper]`` along each direction and are
    ordered lexicographically over multi-indices in ``{0, ..., I-1}^m``.
    """

    m: int
    I: int
    boundaries: np.ndarray  # (I + 1,) shared by every direction

    @property
    def n_cells(self) -> int:
        return self.I ** self.m

    @property
    def interior(self) -> np.ndarray:
        return self.boundaries[1:-1]

    @property
    def probabilities(self) -> np.ndarray:
        return np.full(self.n_cells, 1.0 / self.n_cells)

    def multi_index(self, flat) -> np.ndarray:
        """Multi-indices (row-major) of flat cell indices; shape ``(..., m)``."""
        return np.stack(np.unravel_index(np.asarray(flat), (self.I,) * self.m), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), (self.I,) * self.m)

    def cell_bounds(self, flat: int) -> np.ndarray:
        """Probability interval ``(j/I, (j+1)/I]`` per direction, shape ``(m, 2)``."""
        idx = self.multi_index(flat)
        return np.column_stack([idx / self.I, (idx + 1) / self.I])

    def cell_limits(self, flat: int) -> np.ndarray:
        """Boundary abscissae ``(lower, upper]`` per direction, shape ``(m, 2)``."""
        idx = self.multi_index(flat)
        return np.column_stack([self.boundaries[idx], self.boundaries[idx + 1]])

    def locate(self, x) -> np.ndarray:
        """Flat cell index of projected points ``x`` of shape ``(n, m)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        per_dir = np.searchsorted(self.interior, x, side="left")
        return self.flat_index(per_dir)


def build_equiprobable_grid(m: int, I: int) -> StrataGrid:
    """Quantile grid of the standard normal: boundaries ``G^{-1}(j/I)``."""
    if m < 1 or I < 2:
        raise ValueError("need m >= 1 and I >= 2")
    inner = std_normal_quantile(np.arange(1, I) / I)
    bounds = np.concatenate([[-np.inf], np.atleast_1d(inner), [np.inf]])
    return StrataGrid(m=m, I=I, boundaries=bounds)


def _snap_floor(x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # Values within tol of an integer are treated as that integer so that
    # e.g. ten float 0.1's still produce ten draws of M/10.
    r = np.round(x)
    x = np.where(np.abs(x - r) <= tol * np.maximum(1.0, np.abs(x)), r, x)
    return np.floor(x)


def draws_from_allocation(q, M: int) -> np.ndarray:
    """Integer draw counts by the cumulative-floor rule.

    ``M_i = floor(M * sum_{j<=i} q_j) - floor(M * sum_{j<i} q_j)``; the
    counts sum to ``M`` and satisfy ``|M_i - M q_i| < 1``.
    """
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("allocation has negative entries")
    total = q.sum()
    if not np.isclose(total, 1.0, rtol=0, atol=1e-8):
        raise ValueError(f"allocation sums to {total}, not 1")
    cum = np.cumsum(q)
    cum[-1] = 1.0
    upper = _snap_floor(M * cum).astype(np.int64)
    upper[-1] = M
    lower = np.concatenate([[0], upper[:-1]])
    return upper - lower


def optimal_allocation(p, sigma) -> np.ndarray:
    """``q*_i = p_i sigma_i / sum_j p_j sigma_j``."""
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    w = p * sigma
    total = w.sum()
    if not total > 0:
        raise DegenerateAllocationError("all strata have zero standard deviation")
    q = w / total
    return q / q.sum()


def floored_allocation(q, floor: float) -> np.ndarray:
    """Raise every entry of ``q`` to at least ``floor`` and renormalize."""
    q = np.maximum(np.asarray(q, dtype=float), floor)
    return q / q.sum()


def fixed_I_variance(p, sigma, q, M: int) -> float:
    """Variance of the stratified estimator with integer draws from ``q``."""
    p, sigma = np.asarray(p, float), np.asarray(sigma, float)
    counts = draws_from_allocation(q, M)
    pos = counts > 0
    return float(np.sum(p[pos] ** 2 * sigma[pos] ** 2 / counts[pos]))


def large_M_variance(p, sigma, q, M: int = 1) -> float:
    """``M^{-1} sum_{q_i > 0} p_i^2 sigma_i^2 / q_i``; ``z/0`` is ``inf`` unless ``z = 0``."""
    p, sigma, q = (np.asarray(a, float) for a in (p, sigma, q))
    num = p ** 2 * sigma ** 2
    if np.any((q == 0) & (num > 0)):
        return float("inf")
    pos = q > 0
    return float(np.sum(num[pos] / q[pos]) / M)


@dataclass
class Allocation:
    q: np.ndarray
    M: int
    counts: np.ndarray

    @classmethod
    def from_q(cls, q, M: int) -> "Allocation":
        q = np.asarray(q, dtype=float)
        return cls(q=q, M=M, counts=draws_from_allocation(q, M))
