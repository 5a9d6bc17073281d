"""Latin Hypercube estimator with an optional rotation of the Gaussian input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gauss import RandomStream, std_normal_quantile

__all__ = ["LhsReplicateSet", "lhs_sample", "lhs_estimate"]


def lhs_sample(M: int, d: int, stream: RandomStream) -> np.ndarray:
    """Latin Hypercube sample of ``M`` standard normal points in ``R^d``.

    Column ``j`` is ``Phi^{-1}((pi_j(i) - U_ij) / M)`` with independent
    uniform permutations ``pi_j`` of ``{1..M}`` and uniforms ``U``.
    """
    if M < 2:
        raise ValueError("Latin Hypercube needs M >= 2")
    gen = stream.generator
    perms = np.column_stack([gen.permutation(M) + 1 for _ in range(d)])
    u = gen.random((M, d))
    p = (perms - u) / M
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return std_normal_quantile(p)


@dataclass
class LhsReplicateSet:
    M: int
    N: int
    rotation: np.ndarray
    estimates: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.estimates.mean())

    @property
    def variance(self) -> float:
        """Per-sample variance ``M (mean(E^2) - mean(E)^2)``."""
        e = self.estimates
        return float(self.M * (np.mean(e * e) - e.mean() ** 2))


def lhs_estimate(payoff, O, M: int, N: int, stream: RandomStream, return_set=False):
    """``N`` independent Latin Hypercube estimates of ``E[phi(O Y)]``.

    Returns ``(mean, variance)`` where ``variance`` is the per-sample
    statistic ``M (mean(E_k^2) - mean(E_k)^2)``.
    """
    d = payoff.dim
    if O is None:
        O = np.eye(d)
    O = np.asarray(O, dtype=float)
    if np.abs(O.T @ O - np.eye(d)).max() > 1e-8:
        raise ValueError("rotation must be orthogonal")
    est = np.empty(N)
    for k in range(N):
        sub = stream.substream(k)
        y = lhs_sample(M, d, sub) @ O.T
        est[k] = payoff(y, sub.substream(1)).mean()
    reps = LhsReplicateSet(M=M, N=N, rotation=O, estimates=est)
    if return_set:
        return reps
    return reps.mean, reps.variance
