"""Adaptive stratification loop.

Each iteration samples the current strata, estimates the per-stratum
moments, estimates the gradient of ``V(mu) = sum_i p_i sigma_i`` from
hyperplane draws, takes a projected gradient step on the directions, moves
the allocation to the estimated optimum and folds the iteration into an
inverse-variance weighted average.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimator import (AveragedEstimate, StratumStats, collect_stats, estimator_variance,
                        stratified_estimate, update_average)
from .gauss import (DegenerateMatrixError, RandomStream, orthonormalize_svd,
                    sample_stratum_conditional)
from .gradient import grad_nu_all, grad_V, hyperplane_moments, split_budget
from .strata import (Allocation, DegenerateAllocationError, StrataGrid, build_equiprobable_grid,
                     floored_allocation, optimal_allocation)

__all__ = ["AdaptConfig", "AdaptState", "AdaptReport", "init_state", "iterate", "run",
           "adaptstr_variance", "stepsize"]

log = logging.getLogger(__name__)

# substream tags
_STRATA, _AUX, _HYPER_AUX, _HYPER, _INIT = 0, 1, 2, 3, 4


@dataclass
class AdaptConfig:
    """Settings of one adaptive run.

    ``step`` is the constant ``c`` of the stepsize ``c / sqrt(N)``; with
    ``stepsize_policy="decreasing"`` the stepsize is ``gamma0 / t**alpha``.
    With ``calibrate_step`` the stepsize is additionally divided by the norm
    of the first nonzero gradient (its component orthogonal to ``mu``), so
    that ``c / sqrt(N)`` is the angle of the first move whatever the scale
    of the payoff.
    """

    d: int
    m: int = 1
    I: int = 100
    M: int = 20000
    N: int = 200
    step: float = 0.3
    stepsize_policy: str = "constant"
    gamma0: float = 1.0
    alpha: float = 0.75
    calibrate_step: bool = True
    seed: int = 0
    floor: float = None
    gradient_mode: str = "shared"
    learn_direction: bool = True
    mu0: np.ndarray = None

    def __post_init__(self):
        if self.I < 2:
            raise ValueError("I must be at least 2")
        if not 1 <= self.m < self.d:
            raise ValueError("need 1 <= m < d")
        if self.floor is None:
            self.floor = 0.1 / self.I ** self.m
        if not 0 <= self.floor < 1.0 / self.I ** self.m:
            raise ValueError("allocation floor must lie in [0, 1/I^m)")
        if self.stepsize_policy not in ("constant", "decreasing"):
            raise ValueError(f"unknown stepsize policy {self.stepsize_policy!r}")
        if self.stepsize_policy == "decreasing" and not 0.5 < self.alpha <= 1.0:
            raise ValueError("decreasing stepsizes need alpha in (0.5, 1]")
        if self.gradient_mode not in ("shared", "independent"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.M < self.m * (self.I - 1):
            raise ValueError("M must cover at least one hyperplane draw per boundary")


def stepsize(config: AdaptConfig, t: int) -> float:
    """Stepsize of iteration ``t`` (1-based)."""
    if config.stepsize_policy == "constant":
        return config.step / np.sqrt(config.N)
    return config.gamma0 / t ** config.alpha


@dataclass
class AdaptState:
    t: int
    mu: np.ndarray
    allocation: Allocation
    sigma: np.ndarray
    grid: StrataGrid
    averaged: AveragedEstimate = field(default_factory=AveragedEstimate)
    step_scale: float = None
    traces: dict = field(default_factory=lambda: {
        "estimate": [], "variance": [], "average": [], "mu": [], "step_angle": [],
        "degenerate_gradient": []})

    @property
    def p(self) -> np.ndarray:
        return self.grid.probabilities


def _initial_mu(config: AdaptConfig) -> np.ndarray:
    if config.mu0 is not None:
        mu0 = np.asarray(config.mu0, dtype=float).reshape(config.d, -1)
        if mu0.shape[1] != config.m:
            raise ValueError("mu0 has the wrong number of columns")
        if np.abs(mu0.T @ mu0 - np.eye(config.m)).max() > 1e-8:
            raise ValueError("mu0 is not orthonormal")
        return orthonormalize_svd(mu0)
    first = np.ones((config.d, 1)) / np.sqrt(config.d)
    if config.m == 1:
        return first
    extra = RandomStream(config.seed, (_INIT,)).normal((config.d, config.m - 1))
    return orthonormalize_svd(np.hstack([first, extra]))


def init_state(config: AdaptConfig, payoff=None) -> AdaptState:
    """Constant initial direction and proportional allocation."""
    grid = build_equiprobable_grid(config.m, config.I)
    mu = _initial_mu(config)
    alloc = Allocation.from_q(grid.probabilities, config.M)
    return AdaptState(t=0, mu=mu, allocation=alloc, sigma=np.full(grid.n_cells, np.nan), grid=grid)


def _sample_strata(state: AdaptState, root: RandomStream, t: int):
    grid = state.grid
    ys, gs, cells = [], [], []
    for i, n in enumerate(state.allocation.counts):
        if n == 0:
            continue
        y, g = sample_stratum_conditional(state.mu, grid.cell_bounds(i), int(n),
                                          root.substream(_STRATA, t, i), return_normals=True)
        ys.append(y)
        gs.append(g)
        cells.append(np.full(n, i))
    return np.vstack(ys), np.vstack(gs), np.concatenate(cells)


def _surface_integrals(state: AdaptState, payoff, root: RandomStream, t: int, normals, config):
    """Surface integrals for every finite boundary, shape ``(m, I-1, 3, I^(m-1), d)``."""
    grid, mu = state.grid, state.mu
    m, I, d = config.m, config.I, config.d
    budget = split_budget(config.M, m, I)
    J = np.zeros((m, I - 1, 3, I ** (m - 1), d))
    for k in range(m):
        n_k = budget[k]
        if config.gradient_mode == "shared":
            start = int(budget[:k].sum())
            g = normals[start:start + n_k.sum()]
        else:
            g = np.vstack([root.substream(_HYPER, t, k, j).normal((int(n), d))
                           for j, n in enumerate(n_k)])
        z = np.repeat(grid.interior, n_k)
        muk = mu[:, k]
        y = z[:, None] * muk[None, :] + g - np.outer(g @ muk, muk)
        vals = payoff(y, root.substream(_HYPER_AUX, t, k))
        if m == 1:
            offsets = np.concatenate([[0], np.cumsum(n_k)[:-1]])
            pdf = np.exp(-0.5 * grid.interior ** 2) / np.sqrt(2 * np.pi)
            scale = (pdf / n_k)[:, None]
            for h, w in enumerate((np.ones_like(vals), vals, vals * vals)):
                J[k, :, h, 0, :] = scale * np.add.reduceat(y * w[:, None], offsets, axis=0)
        else:
            offsets = np.concatenate([[0], np.cumsum(n_k)])
            for j in range(I - 1):
                sl = slice(offsets[j], offsets[j + 1])
                J[k, j] = hyperplane_moments(grid, mu, k, grid.interior[j], y[sl], vals[sl])
    return J


def _fill_sigma(sigma: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(sigma)
    if np.any(bad):
        sigma = sigma.copy()
        sigma[bad] = np.nanmean(sigma) if np.any(~bad) else 0.0
    return sigma


def _pilot_scale(mu, grad) -> float:
    tangent = grad - mu @ (mu.T @ grad)
    norm = np.linalg.norm(tangent)
    return 1.0 / norm if norm > 0 else None


def iterate(state: AdaptState, payoff, config: AdaptConfig, root: RandomStream = None) -> AdaptState:
    """One pass of sampling, gradient step, reallocation and averaging."""
    root = root or RandomStream(config.seed)
    t = state.t + 1
    grid, p = state.grid, state.p

    y, g, cells = _sample_strata(state, root, t)
    vals = payoff(y, root.substream(_AUX, t))
    stats: StratumStats = collect_stats(vals, cells, grid.n_cells, p, prev_sigma=state.sigma)
    sigma = _fill_sigma(stats.sigma_hat)

    mu = state.mu
    degenerate = False
    step_scale = state.step_scale
    if config.learn_direction:
        J = _surface_integrals(state, payoff, root, t, g, config)
        grad, degenerate = grad_V(p, stats.nu_phi, stats.nu_phi2, sigma, grad_nu_all(grid, J))
        if not degenerate and step_scale is None:
            step_scale = _pilot_scale(state.mu, grad) if config.calibrate_step else 1.0
        if degenerate or not step_scale:
            log.info("iteration %d: degenerate gradient, direction kept", t)
        else:
            try:
                mu = orthonormalize_svd(state.mu - step_scale * stepsize(config, t) * grad)
            except DegenerateMatrixError:
                degenerate = True
                log.info("iteration %d: rank-deficient update, direction kept", t)

    try:
        q = optimal_allocation(p, sigma)
    except DegenerateAllocationError:
        q = p.copy()
    q = floored_allocation(q, config.floor)
    alloc = Allocation.from_q(q, config.M)

    estimate = stratified_estimate(stats)
    proxy = estimator_variance(p, sigma, config.M)
    averaged = update_average(state.averaged, estimate, proxy)

    tr = {k: list(v) for k, v in state.traces.items()}
    tr["estimate"].append(estimate)
    tr["variance"].append(proxy * config.M)
    tr["average"].append(averaged.value)
    tr["mu"].append(mu.copy())
    cosines = np.clip(np.abs(np.sum(mu * state.mu, axis=0)), 0.0, 1.0)
    tr["step_angle"].append(float(np.max(np.arccos(cosines))))
    tr["degenerate_gradient"].append(degenerate)
    return AdaptState(t=t, mu=mu, allocation=alloc, sigma=sigma, grid=grid,
                      averaged=averaged, traces=tr, step_scale=step_scale)


def adaptstr_variance(per_sample_variances) -> float:
    """Harmonic mean of the per-iteration variances ``(sum_i p_i sigma_i)^2``."""
    v = np.asarray(per_sample_variances, dtype=float)
    if np.any(v <= 0):
        return 0.0
    return float(v.size / np.sum(1.0 / v))


@dataclass
class AdaptReport:
    estimate: float
    variance: float
    mu: np.ndarray
    allocation: np.ndarray
    traces: dict
    config: AdaptConfig

    @property
    def unweighted_estimate(self) -> float:
        return float(np.mean(self.traces["estimate"]))


def run(config: AdaptConfig, payoff, callback=None) -> AdaptReport:
    """Run ``config.N`` iterations and report the averaged estimate.

    ``callback(state)`` is invoked after every iteration (trace streaming).
    """
    if payoff.dim != config.d:
        raise ValueError("payoff dimension does not match the configuration")
    root = RandomStream(config.seed)
    state = init_state(config, payoff)
    for _ in range(config.N):
        state = iterate(state, payoff, config, root)
        if callback is not None:
            callback(state)
    return AdaptReport(
        estimate=state.averaged.value,
        variance=adaptstr_variance(state.traces["variance"]),
        mu=state.mu,
        allocation=state.allocation.q,
        traces=state.traces,
        config=config,
    )
