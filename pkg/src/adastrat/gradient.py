"""Gradient of the stratification criterion with respect to the directions.

The criterion is ``V(mu) = sum_i p_i(mu) sigma_i(mu)``. The derivative of a
stratum integral ``nu_i(h, mu)`` with respect to direction ``mu_k`` reduces to
surface integrals over the two hyperplanes bounding the cell along ``mu_k``:

    d nu_i / d mu_k = -J_h(upper) + J_h(lower),
    J_h(z) = int y 1{other directions in cell} h(y) d lambda_z(y).

For ``|mu_k| = 1`` and ``h = f w`` with ``f`` the standard normal density,
``J_h(z) = phi_N(z) E[Y w(Y) 1{...} | mu_k^T Y = z]``, estimated by Monte
Carlo on the hyperplane or by quadrature in the oracle module.
"""

from __future__ import annotations

import numpy as np

from .gauss import RandomStream, sample_hyperplane_conditional, std_normal_pdf
from .strata import StrataGrid

__all__ = [
    "split_budget",
    "hyperplane_moments",
    "boundary_integral",
    "grad_nu",
    "grad_nu_all",
    "grad_V",
]


def split_budget(M: int, m: int, I: int) -> np.ndarray:
    """Split ``M`` hyperplane draws equally over the ``m (I-1)`` boundaries.

    The remainder goes one draw at a time to the boundaries closest to the
    median, direction by direction. Returns an ``(m, I-1)`` integer array.
    """
    nb = m * (I - 1)
    base, rem = divmod(M, nb)
    counts = np.full((m, I - 1), base, dtype=np.int64)
    centre = (I - 2) / 2.0
    order = sorted(((abs(j - centre), j, k) for k in range(m) for j in range(I - 1)))
    for _, j, k in order[:rem]:
        counts[k, j] += 1
    return counts


def _other_cells(grid: StrataGrid, mu: np.ndarray, k: int, y: np.ndarray) -> np.ndarray:
    """Flat index over the ``I**(m-1)`` cells of the directions other than ``k``."""
    m = mu.shape[1]
    if m == 1:
        return np.zeros(y.shape[0], dtype=np.int64)
    others = [j for j in range(m) if j != k]
    proj = y @ mu[:, others]
    per_dir = np.searchsorted(grid.interior, proj, side="left")
    return np.ravel_multi_index(tuple(per_dir.T), (grid.I,) * (m - 1))


def hyperplane_moments(grid: StrataGrid, mu, k: int, z: float, y, values) -> np.ndarray:
    """Monte Carlo surface integrals on the hyperplane ``mu_k^T y = z``.

    Parameters
    ----------
    y : (n, d) ndarray
        Draws from ``Y | mu_k^T Y = z``.
    values : (n,) ndarray
        Payoff at ``y``.

    Returns
    -------
    ndarray, shape ``(3, I**(m-1), d)``
        ``J_h`` for ``h`` in ``(f, f phi, f phi^2)``, split by the cell of the
        remaining directions (rejection weighting).
    """
    mu = np.asarray(mu, dtype=float)
    n, d = y.shape
    n_other = grid.I ** (mu.shape[1] - 1)
    out = np.zeros((3, n_other, d))
    if n == 0:
        raise ValueError("hyperplane estimate needs at least one draw")
    other = _other_cells(grid, mu, k, y)
    scale = std_normal_pdf(z) / n
    for h, w in enumerate((np.ones_like(values), values, values * values)):
        wy = y * w[:, None]
        for c in range(n_other):
            sel = other == c
            if np.any(sel):
                out[h, c] = scale * wy[sel].sum(axis=0)
    return out


def boundary_integral(mu, k: int, z: float, payoff, n: int, stream: RandomStream,
                      other_cell_constraints=None, aux: RandomStream = None) -> np.ndarray:
    """Estimate ``J_h(z)`` for ``h`` in ``(f, f phi, f phi^2)`` along direction ``k``.

    ``other_cell_constraints`` maps a direction index ``j != k`` to an
    abscissa interval ``(lo, hi]`` that ``mu_j^T y`` must satisfy.
    Returns an array of shape ``(3, d)``.
    """
    if n <= 0:
        raise ValueError("boundary_integral needs n > 0")
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    if not np.isfinite(z):
        return np.zeros((3, mu.shape[0]))
    y = sample_hyperplane_conditional(mu[:, k], z, n, stream)
    vals = np.asarray(payoff(y, aux), dtype=float)
    keep = np.ones(n, dtype=bool)
    for j, (lo, hi) in (other_cell_constraints or {}).items():
        s = y @ mu[:, j]
        keep &= (s > lo) & (s <= hi)
    scale = std_normal_pdf(z) / n
    out = np.empty((3, mu.shape[0]))
    for h, w in enumerate((np.ones(n), vals, vals * vals)):
        out[h] = scale * (y * (w * keep)[:, None]).sum(axis=0)
    return out


def grad_nu(grid: StrataGrid, flat: int, J: np.ndarray) -> np.ndarray:
    """Gradient of ``nu_i(h, mu)`` for one stratum.

    ``J`` has shape ``(m, I-1, 3, I**(m-1), d)``: surface integrals for every
    direction and finite boundary. Returns shape ``(3, d, m)``.
    """
    m = grid.m
    I = grid.I
    idx = grid.multi_index(flat)
    d = J.shape[-1]
    out = np.zeros((3, d, m))
    for k in range(m):
        other = [idx[j] for j in range(m) if j != k]
        c = int(np.ravel_multi_index(tuple(other), (I,) * (m - 1))) if other else 0
        ik = int(idx[k])
        if ik < I - 1:  # finite upper boundary
            out[:, :, k] -= J[k, ik, :, c, :]
        if ik > 0:  # finite lower boundary
            out[:, :, k] += J[k, ik - 1, :, c, :]
    return out


def grad_nu_all(grid: StrataGrid, J: np.ndarray) -> np.ndarray:
    """``grad_nu`` for every stratum, shape ``(n_cells, 3, d, m)``."""
    if grid.m == 1:
        # Vectorized: cell j has upper boundary j (if j < I-1), lower j-1.
        Jk = J[0, :, :, 0, :]  # (I-1, 3, d)
        zero = np.zeros((1,) + Jk.shape[1:])
        g = -np.concatenate([Jk, zero]) + np.concatenate([zero, Jk])
        return g[..., None]
    return np.stack([grad_nu(grid, i, J) for i in range(grid.n_cells)])


def grad_V(p, nu_phi, nu_phi2, sigma, gnu: np.ndarray, tol: float = 1e-12):
    """Gradient of ``V(mu) = sum_i p_i sigma_i`` with respect to ``mu``.

    Parameters
    ----------
    p, nu_phi, nu_phi2, sigma : (n_cells,) ndarray
        Stratum probabilities, integrals of ``f phi`` and ``f phi^2``, and
        within-stratum standard deviations.
    gnu : (n_cells, 3, d, m) ndarray
        Gradients of the stratum integrals of ``f``, ``f phi``, ``f phi^2``.

    Returns
    -------
    grad : (d, m) ndarray
    degenerate : bool
        True when every stratum was masked (``p_i sigma_i`` below ``tol``).
    """
    p = np.asarray(p, dtype=float)
    ps = p * np.nan_to_num(np.asarray(sigma, dtype=float))
    keep = ps >= tol
    if not np.any(keep):
        return np.zeros(gnu.shape[2:]), True
    denom = 2.0 * ps[keep]
    a = np.asarray(nu_phi2, float)[keep] / denom
    b = p[keep] / denom
    c = -2.0 * np.asarray(nu_phi, float)[keep] / denom
    g = gnu[keep]
    grad = (np.tensordot(a, g[:, 0], axes=1) + np.tensordot(b, g[:, 2], axes=1)
            + np.tensordot(c, g[:, 1], axes=1))
    return grad, False
