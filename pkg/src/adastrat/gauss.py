"""Standard-normal primitives.

Quantile and CDF evaluation, keyed random streams, orthonormalization of
stratification matrices and exact samplers for a standard Gaussian vector
conditioned on its projection.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "RandomStream",
    "DegenerateMatrixError",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "fix_signs",
    "orthonormalize_svd",
    "rotation_from_direction",
    "sample_stratum_conditional",
    "sample_hyperplane_conditional",
    "project_out",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Acklam's rational approximation of the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


class DegenerateMatrixError(ValueError):
    """Raised when a matrix cannot be orthonormalized (rank deficient)."""


class RandomStream:
    """Counter-based random stream keyed by ``(seed, substream_id)``.

    Backed by the Philox generator, so a stream's sequence depends only on
    its key and not on how calls to other streams are interleaved.

    Parameters
    ----------
    seed : int
        Root seed of the experiment.
    substream_id : sequence of int, optional
        Path identifying the substream (e.g. ``(iteration, stratum)``).
    """

    def __init__(self, seed: int, substream_id: Sequence[int] = ()):
        self.seed = int(seed)
        self.substream_id = tuple(int(s) for s in substream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.substream_id)
        self._bitgen = np.random.Philox(seq)
        self.generator = np.random.Generator(self._bitgen)

    def substream(self, *ids: int) -> "RandomStream":
        return RandomStream(self.seed, self.substream_id + tuple(ids))

    @property
    def counter(self) -> int:
        words = self._bitgen.state["state"]["counter"]
        return int(sum(int(w) << (64 * k) for k, w in enumerate(words)))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, substream_id={self.substream_id})"


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def std_normal_cdf(x):
    return ndtr(np.asarray(x, dtype=float))


def _acklam_lower(u: np.ndarray) -> np.ndarray:
    """Quantile for ``0 < u <= 0.5`` with one Newton correction."""
    x = np.empty_like(u)
    tail = u < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(u[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    mid = ~tail
    if np.any(mid):
        q = u[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    # Newton step on the CDF; x <= 0 here so ndtr keeps full relative accuracy.
    x -= (ndtr(x) - u) / std_normal_pdf(x)
    return x


def std_normal_quantile(u):
    """Inverse of the standard normal CDF.

    Parameters
    ----------
    u : float or array_like
        Probabilities in the open interval (0, 1).

    Returns
    -------
    float or ndarray
        ``Phi^{-1}(u)``, absolute error below 1e-9 on ``[1e-12, 1 - 1e-12]``.

    Raises
    ------
    ValueError
        If any ``u`` lies outside (0, 1).
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("std_normal_quantile requires 0 < u < 1")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    upper = flat > 0.5
    lower = ~upper
    if np.any(lower):
        out[lower] = _acklam_lower(flat[lower])
    if np.any(upper):
        # 1 - u is exact for u > 0.5.
        out[upper] = -_acklam_lower(1.0 - flat[upper])
    out[flat == 0.5] = 0.0
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def fix_signs(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so that their first non-negligible entry is positive."""
    mat = np.array(mat, dtype=float, copy=True)
    if mat.ndim == 1:
        return fix_signs(mat[:, None], tol)[:, 0]
    for k in range(mat.shape[1]):
        nz = np.flatnonzero(np.abs(mat[:, k]) > tol)
        if nz.size and mat[nz[0], k] < 0:
            mat[:, k] = -mat[:, k]
    return mat


def orthonormalize_svd(a: np.ndarray, rank_tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of the left singular subspace of ``a``.

    With ``a = U S V^T`` (thin SVD) this returns ``U V^T``: the same column
    span as the ``m`` left singular vectors, but with the columns matched
    to those of ``a`` (it is the closest orthonormal matrix to ``a``), so
    an orthonormal input comes back unchanged.  The positive first
    component sign convention is then applied per column.

    Raises
    ------
    DegenerateMatrixError
        If ``a`` is not of full column rank.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if not np.all(np.isfinite(a)):
        raise DegenerateMatrixError("non-finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[-1] <= rank_tol * max(s[0], 1.0):
        raise DegenerateMatrixError(f"matrix is rank deficient (singular values {s})")
    return fix_signs(u @ vt)


def rotation_from_direction(v: np.ndarray, dep_tol: float = 1e-8) -> np.ndarray:
    """Orthogonal ``d x d`` matrix whose first column is ``v``.

    The remaining columns come from Gram-Schmidt on the last ``d - 1``
    canonical basis vectors; a vector that becomes numerically dependent
    is replaced by the first canonical vector.
    """
    v = np.asarray(v, dtype=float).ravel()
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("rotation_from_direction requires a unit vector")
    d = v.size
    cols = [v.copy()]
    eye = np.eye(d)
    candidates = [eye[:, j] for j in range(1, d)]
    used_first = False
    for cand in candidates:
        w = _gram_schmidt(cand, cols)
        if np.linalg.norm(w) < dep_tol:
            if used_first:
                raise DegenerateMatrixError("cannot complete the basis")
            used_first = True
            w = _gram_schmidt(eye[:, 0], cols)
            if np.linalg.norm(w) < dep_tol:
                raise DegenerateMatrixError("cannot complete the basis")
        cols.append(w / np.linalg.norm(w))
    return np.column_stack(cols)


def _gram_schmidt(w: np.ndarray, basis: list) -> np.ndarray:
    w = w.copy()
    for _ in range(2):  # re-orthogonalize once for stability
        for b in basis:
            w -= (b @ w) * b
    return w


def project_out(g: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Rows of ``g`` with their components along the columns of ``mu`` removed."""
    return g - (g @ mu) @ mu.T


def sample_stratum_conditional(mu, cell, n, stream: RandomStream, return_normals=False):
    """Draw ``Y ~ N(0, I_d)`` conditioned on ``mu^T Y`` lying in a cell.

    Parameters
    ----------
    mu : (d, m) ndarray
        Orthonormal stratification matrix.
    cell : (m, 2) array_like
        Probability interval ``(lo, hi]`` of the cell along each direction.
    n : int
        Number of draws.
    stream : RandomStream
        Source of randomness; each draw uses ``m`` uniforms and ``d`` normals.
    return_normals : bool
        Also return the unconditioned normals ``G`` used for the draws.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    d, m = mu.shape
    cell = np.asarray(cell, dtype=float).reshape(m, 2)
    lo, hi = cell[:, 0], cell[:, 1]
    u = stream.uniform((n, m))
    # hi - u*(hi-lo) lies in (lo, hi]; clip away from the endpoints 0 and 1.
    p = hi - u * (hi - lo)
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    s = std_normal_quantile(p).reshape(n, m)
    g = stream.normal((n, d))
    y = s @ mu.T + project_out(g, mu)
    if return_normals:
        return y, g
    return y


def sample_hyperplane_conditional(mu_k, z, n, stream: RandomStream = None, normals=None):
    """Draw ``Y ~ N(0, I_d)`` conditioned on ``mu_k^T Y = z``.

    ``normals`` may supply the unconditioned Gaussian draws to transform
    (for sharing randomness with the stratum sampler); otherwise ``n``
    fresh normals are taken from ``stream``.
    """
    mu_k = np.asarray(mu_k, dtype=float).ravel()
    if abs(np.linalg.norm(mu_k) - 1.0) > 1e-8:
        raise ValueError("hyperplane direction must be a unit vector")
    if normals is None:
        normals = stream.normal((n, mu_k.size))
    g = np.asarray(normals, dtype=float)
    return z * mu_k[None, :] + g - np.outer(g @ mu_k, mu_k)
