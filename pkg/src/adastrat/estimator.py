"""Per-stratum moments, the stratified estimator and the averaged estimate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StratumStats",
    "AveragedEstimate",
    "stratum_moments",
    "collect_stats",
    "stratified_estimate",
    "estimator_variance",
    "update_average",
]

log = logging.getLogger(__name__)


def stratum_moments(samples, p_i: float):
    """Moments of one stratum from its payoff samples.

    Returns ``(nu_phi, nu_phi2, sigma_hat)`` where ``nu_phi = p_i * mean(phi)``,
    ``nu_phi2 = p_i * mean(phi**2)`` and ``sigma_hat`` is the clamped
    within-stratum standard deviation. ``sigma_hat`` is ``nan`` (stale) with
    fewer than two samples; an empty stratum contributes zero moments.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        return 0.0, 0.0, float("nan")
    nu1 = p_i * x.mean()
    nu2 = p_i * np.mean(x * x)
    if n < 2:
        return nu1, nu2, float("nan")
    return nu1, nu2, _clamped_sd(nu1, nu2, p_i)


def _clamped_sd(nu1, nu2, p):
    var = nu2 / p - (nu1 / p) ** 2
    return np.sqrt(np.maximum(var, 0.0))


@dataclass
class StratumStats:
    """Moment estimates for every stratum.

    ``sum_phi``, ``sum_phi2`` and ``draws_used`` are the raw sufficient
    statistics; partial stats from several workers merge by addition.
    """

    p: np.ndarray
    sum_phi: np.ndarray
    sum_phi2: np.ndarray
    draws_used: np.ndarray
    sigma_hat: np.ndarray

    @property
    def nu_phi(self) -> np.ndarray:
        n = np.maximum(self.draws_used, 1)
        return np.where(self.draws_used > 0, self.p * self.sum_phi / n, 0.0)

    @property
    def nu_phi2(self) -> np.ndarray:
        n = np.maximum(self.draws_used, 1)
        return np.where(self.draws_used > 0, self.p * self.sum_phi2 / n, 0.0)

    @property
    def empty(self) -> np.ndarray:
        return self.draws_used == 0

    def merge(self, other: "StratumStats", prev_sigma=None) -> "StratumStats":
        out = StratumStats(
            p=self.p,
            sum_phi=self.sum_phi + other.sum_phi,
            sum_phi2=self.sum_phi2 + other.sum_phi2,
            draws_used=self.draws_used + other.draws_used,
            sigma_hat=self.sigma_hat,
        )
        out.sigma_hat = _sigma_from_sums(out, prev_sigma)
        return out


def _sigma_from_sums(stats: StratumStats, prev_sigma=None) -> np.ndarray:
    fresh = stats.draws_used >= 2
    sigma = np.full(stats.p.shape, np.nan)
    sigma[fresh] = _clamped_sd(stats.nu_phi[fresh], stats.nu_phi2[fresh], stats.p[fresh])
    if prev_sigma is not None:
        prev_sigma = np.asarray(prev_sigma, dtype=float)
        stale = ~fresh
        sigma[stale] = prev_sigma[stale]
    return sigma


def collect_stats(values, cells, n_cells: int, p, prev_sigma=None) -> StratumStats:
    """Aggregate payoff ``values`` drawn in strata ``cells`` into stats.

    Strata with fewer than two draws keep ``prev_sigma`` (or ``nan`` when
    no previous value exists).
    """
    values = np.asarray(values, dtype=float)
    cells = np.asarray(cells)
    stats = StratumStats(
        p=np.asarray(p, dtype=float),
        sum_phi=np.bincount(cells, weights=values, minlength=n_cells),
        sum_phi2=np.bincount(cells, weights=values * values, minlength=n_cells),
        draws_used=np.bincount(cells, minlength=n_cells),
        sigma_hat=np.empty(n_cells),
    )
    stats.sigma_hat = _sigma_from_sums(stats, prev_sigma)
    return stats


def stratified_estimate(stats: StratumStats) -> float:
    """Sum of ``nu_phi`` over strata that received draws."""
    return float(np.sum(stats.nu_phi[stats.draws_used > 0]))


def estimator_variance(p, sigma_hat, M: int) -> float:
    """Variance proxy under optimal allocation, ``(sum_i p_i sigma_i)^2 / M``."""
    p = np.asarray(p, dtype=float)
    s = np.nan_to_num(np.asarray(sigma_hat, dtype=float))
    return float(np.sum(p * s) ** 2 / M)


@dataclass
class AveragedEstimate:
    """Inverse-variance weighted average of per-iteration estimates."""

    weight_sum: float = 0.0
    weighted_value_sum: float = 0.0
    iteration_count: int = 0
    skipped: int = 0
    raw: list = field(default_factory=list)

    @property
    def value(self) -> float:
        if self.weight_sum > 0:
            return self.weighted_value_sum / self.weight_sum
        if self.raw:
            return float(np.mean(self.raw))
        return float("nan")

    @property
    def unweighted_mean(self) -> float:
        return float(np.mean(self.raw)) if self.raw else float("nan")


def update_average(state: AveragedEstimate, estimate: float, variance_proxy: float) -> AveragedEstimate:
    """Fold one iteration into the weighted average.

    Iterations with a zero variance proxy get weight zero; they still enter
    the unweighted diagnostic mean.
    """
    out = AveragedEstimate(
        weight_sum=state.weight_sum,
        weighted_value_sum=state.weighted_value_sum,
        iteration_count=state.iteration_count + 1,
        skipped=state.skipped,
        raw=state.raw + [float(estimate)],
    )
    if variance_proxy > 0 and np.isfinite(variance_proxy):
        w = 1.0 / variance_proxy
        out.weight_sum += w
        out.weighted_value_sum += w * estimate
    else:
        out.skipped += 1
        log.warning("iteration %d has zero variance proxy; excluded from the weighted average",
                    out.iteration_count)
    return out
