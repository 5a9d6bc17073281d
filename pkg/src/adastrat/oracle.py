"""Independent reference computations used to validate the sampling engine.

Everything here is deterministic quadrature or closed-form algebra, except
``brute_force_estimator_variance`` which replicates the estimator.  The test
integrands are linear ``a^T y``, quadratic ``y_c^2`` and exponential
``exp(a^T y)``, for which ``Y | mu^T Y = x ~ N(x mu, I - mu mu^T)`` gives the
conditional moments in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from .gauss import RandomStream, sample_stratum_conditional, std_normal_pdf
from .gradient import grad_nu_all, grad_V
from .payoffs import exponential_payoff, linear_payoff, quadratic_payoff
from .strata import (StrataGrid, build_equiprobable_grid, draws_from_allocation,
                     fixed_I_variance, large_M_variance, optimal_allocation)

__all__ = [
    "ConditionalMomentModel",
    "LinearModel",
    "QuadraticModel",
    "ExponentialModel",
    "truncated_normal_moments",
    "stratum_integrals",
    "limiting_variance",
    "check_prop1",
    "prop2_discrepancy",
    "brute_force_estimator_variance",
    "quadrature_V",
    "quadrature_grad_V",
    "finite_difference_gradV",
    "discrete_variance",
    "lemma1_bound",
]

_QUAD = dict(epsabs=1e-14, epsrel=1e-10, limit=400)
# Gaussian mass beyond this abscissa is below 1e-300 relative; truncating
# keeps exp-type test integrands from overflowing inside the quadrature.
_X_MAX = 38.0


def _log_pdf(x):
    return -0.5 * x * x - 0.5 * np.log(2 * np.pi)


def truncated_normal_moments(a: float, b: float):
    """Mean and variance of a standard normal restricted to ``(a, b]``.

    The interval is reflected into the left half-line when it sits to the
    right of zero, and all ratios are formed from log-CDF differences so
    that far-tail intervals stay accurate.
    """
    a, b = float(a), float(b)
    if not a < b:
        raise ValueError("need a < b")
    sign = 1.0
    if a > 0:
        a, b, sign = -b, -a, -1.0
    # log Z = log(Phi(b) - Phi(a)), with Phi(a) <= Phi(b) and a <= 0
    lb, la = log_ndtr(b), log_ndtr(a)
    logz = lb + np.log1p(-np.exp(la - lb))

    def ratio(x):
        if not np.isfinite(x):
            return 0.0, 0.0
        r = np.exp(_log_pdf(x) - logz)
        return r, x * r

    ra, xa = ratio(a)
    rb, xb = ratio(b)
    mean = ra - rb
    var = 1.0 + xa - xb - mean * mean
    return sign * mean, max(var, 0.0)


class ConditionalMomentModel:
    """Test integrand with closed-form ``E[phi | mu^T Y = x]`` and ``E[phi^2 | ...]``.

    ``mu`` is a unit vector in ``R^d``.  Subclasses implement ``cond_mean``
    and ``cond_second``; both accept arrays of abscissas ``x``.
    """

    dim: int

    def payoff(self):
        raise NotImplementedError

    def cond_mean(self, x, mu):
        raise NotImplementedError

    def cond_second(self, x, mu):
        raise NotImplementedError

    def cond_var(self, x, mu):
        m1 = self.cond_mean(x, mu)
        return np.maximum(self.cond_second(x, mu) - m1 * m1, 0.0)


@dataclass
class LinearModel(ConditionalMomentModel):
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.dim = self.a.size

    def payoff(self):
        return linear_payoff(self.a)

    def _split(self, mu):
        am = float(self.a @ mu)
        return am, float(self.a @ self.a) - am * am

    def cond_mean(self, x, mu):
        am, _ = self._split(mu)
        return am * np.asarray(x, dtype=float)

    def cond_second(self, x, mu):
        am, v = self._split(mu)
        return (am * np.asarray(x, dtype=float)) ** 2 + v


@dataclass
class QuadraticModel(ConditionalMomentModel):
    dim: int
    coord: int = 0

    def payoff(self):
        return quadratic_payoff(self.dim, self.coord)

    def cond_mean(self, x, mu):
        mc = mu[self.coord]
        return (np.asarray(x, dtype=float) * mc) ** 2 + (1.0 - mc * mc)

    def cond_second(self, x, mu):
        mc = mu[self.coord]
        m = np.asarray(x, dtype=float) * mc
        v = 1.0 - mc * mc
        return m ** 4 + 6.0 * m * m * v + 3.0 * v * v


@dataclass
class ExponentialModel(ConditionalMomentModel):
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.dim = self.a.size

    def payoff(self):
        return exponential_payoff(self.a)

    def _split(self, mu):
        am = float(self.a @ mu)
        return am, float(self.a @ self.a) - am * am

    def cond_mean(self, x, mu):
        am, v = self._split(mu)
        return np.exp(am * np.asarray(x, dtype=float) + 0.5 * v)

    def cond_second(self, x, mu):
        am, v = self._split(mu)
        return np.exp(2.0 * am * np.asarray(x, dtype=float) + 2.0 * v)


def _unit(mu):
    mu = np.asarray(mu, dtype=float).ravel()
    if abs(np.linalg.norm(mu) - 1.0) > 1e-10:
        raise ValueError("mu must be a unit vector")
    return mu


def _quad(fn, lo, hi, **kw):
    opts = {**_QUAD, **kw}
    lo, hi = max(lo, -_X_MAX), min(hi, _X_MAX)
    if lo >= hi:
        return 0.0
    val, _ = integrate.quad(fn, lo, hi, points=[0.0] if lo < 0 < hi else None, **opts)
    return val


def stratum_integrals(mu, model: ConditionalMomentModel, I: int):
    """Exact ``p_i``, ``nu_i(phi)`` and ``nu_i(phi^2)`` on ``I`` equiprobable strata."""
    mu = _unit(mu)
    grid = build_equiprobable_grid(1, I)
    edges = grid.boundaries
    p = np.full(I, 1.0 / I)
    nu1 = np.empty(I)
    nu2 = np.empty(I)
    for i in range(I):
        lo, hi = edges[i], edges[i + 1]
        nu1[i] = _quad(lambda x: std_normal_pdf(x) * model.cond_mean(x, mu), lo, hi)
        nu2[i] = _quad(lambda x: std_normal_pdf(x) * model.cond_second(x, mu), lo, hi)
    return p, nu1, nu2


def _sigma(p, nu1, nu2):
    return np.sqrt(np.maximum(nu2 / p - (nu1 / p) ** 2, 0.0))


def limiting_variance(mu, model: ConditionalMomentModel, allocation_density: str = "proportional") -> float:
    """Large-``M``, large-``I`` variance per sample for ``m = 1``.

    Proportional density gives ``E[Var(phi | mu^T Y)]``; the optimal density
    gives ``(E[sqrt(Var(phi | mu^T Y))])^2``.
    """
    mu = _unit(mu)
    if allocation_density == "proportional":
        fn = lambda x: std_normal_pdf(x) * model.cond_var(x, mu)
        power = 1
    elif allocation_density == "optimal":
        fn = lambda x: std_normal_pdf(x) * np.sqrt(model.cond_var(x, mu))
        power = 2
    else:
        raise ValueError(f"unknown allocation density {allocation_density!r}")
    val = _quad(fn, -np.inf, np.inf, epsrel=1e-8)
    if not np.isfinite(val):
        raise ArithmeticError("limiting variance integral diverges")
    return float(val ** power)


def check_prop1(mu, model: ConditionalMomentModel, I_list=(2, 5, 10, 50, 100), M=None,
                allocation: str = "proportional"):
    """Per-sample stratified variance against its limit for each ``I``.

    With ``M=None`` the large-``M`` form ``sum_i p_i^2 sigma_i^2 / q_i`` is
    used; otherwise ``M * fixed_I_variance``.  Returns ``(rows, limit,
    monotone)`` where ``rows`` holds ``(I, value, |value - limit|)`` and
    ``monotone`` says whether the distance to the limit decreases in ``I``.
    """
    density = "proportional" if allocation == "proportional" else "optimal"
    limit = limiting_variance(mu, model, density)
    rows = []
    for I in I_list:
        p, nu1, nu2 = stratum_integrals(mu, model, I)
        sigma = _sigma(p, nu1, nu2)
        q = p if allocation == "proportional" else optimal_allocation(p, sigma)
        if M is None:
            val = large_M_variance(p, sigma, q)
        else:
            val = M * fixed_I_variance(p, sigma, q, M)
        rows.append((I, float(val), float(abs(val - limit))))
    gaps = [r[2] for r in rows]
    monotone = all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
    return rows, limit, monotone


def prop2_discrepancy(mu, model: ConditionalMomentModel, I: int) -> float:
    """``sum_i |q*_i - int_{S_i} chi*|`` with ``chi*`` proportional to ``f sqrt(Var)``."""
    mu = _unit(mu)
    p, nu1, nu2 = stratum_integrals(mu, model, I)
    q_star = optimal_allocation(p, _sigma(p, nu1, nu2))
    dens = lambda x: std_normal_pdf(x) * np.sqrt(model.cond_var(x, mu))
    total = _quad(dens, -np.inf, np.inf)
    edges = build_equiprobable_grid(1, I).boundaries
    mass = np.array([_quad(dens, edges[i], edges[i + 1]) for i in range(I)]) / total
    return float(np.abs(q_star - mass).sum())


def brute_force_estimator_variance(payoff, mu, grid: StrataGrid, allocation, M: int, R: int,
                                   stream: RandomStream) -> float:
    """Empirical variance of ``R`` independent stratified estimates."""
    if R < 100:
        raise ValueError("brute-force variance needs R >= 100 replications")
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    counts = draws_from_allocation(np.asarray(allocation, dtype=float), M)
    p = grid.probabilities
    est = np.empty(R)
    for r in range(R):
        rep = stream.substream(r)
        total = 0.0
        for i, n in enumerate(counts):
            if n == 0:
                continue
            y = sample_stratum_conditional(mu, grid.cell_bounds(i), int(n), rep.substream(i))
            total += p[i] * np.mean(payoff(y))
        est[r] = total
    return float(np.var(est, ddof=1))


# --- criterion and gradient in the plane --------------------------------

def _gh_rule(n=96):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2 * np.pi)


class _PlaneModel:
    """Conditional moments of a payoff on ``R^2`` by Gauss-Hermite in the
    direction orthogonal to ``mu``.  Works for any vectorized payoff."""

    def __init__(self, payoff, n_nodes=96):
        if payoff.dim != 2:
            raise ValueError("plane quadrature needs d = 2")
        self.payoff = payoff
        self.nodes, self.weights = _gh_rule(n_nodes)

    def _points(self, x, mu):
        perp = np.array([-mu[1], mu[0]])
        return x * mu[None, :] + self.nodes[:, None] * perp[None, :]

    def moments(self, x, mu):
        y = self._points(x, mu)
        v = self.payoff(y)
        return self.weights @ v, self.weights @ (v * v)

    def surface(self, z, mu):
        """``E[Y w(Y) | mu^T Y = z]`` for ``w`` in ``(1, phi, phi^2)``, shape (3, 2)."""
        y = self._points(z, mu)
        v = self.payoff(y)
        out = np.empty((3, 2))
        for h, w in enumerate((np.ones_like(v), v, v * v)):
            out[h] = (self.weights * w) @ y
        return out


def _mu_theta(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def _plane_integrals(plane: _PlaneModel, mu, I):
    edges = build_equiprobable_grid(1, I).boundaries
    p = np.full(I, 1.0 / I)
    nu1 = np.empty(I)
    nu2 = np.empty(I)
    for i in range(I):
        lo, hi = edges[i], edges[i + 1]
        nu1[i] = _quad(lambda x: std_normal_pdf(x) * plane.moments(x, mu)[0], lo, hi)
        nu2[i] = _quad(lambda x: std_normal_pdf(x) * plane.moments(x, mu)[1], lo, hi)
    return p, nu1, nu2


def quadrature_V(theta: float, payoff, I: int) -> float:
    """``V(mu(theta)) = sum_i p_i sigma_i`` on ``R^2`` by quadrature."""
    plane = _PlaneModel(payoff)
    p, nu1, nu2 = _plane_integrals(plane, _mu_theta(theta), I)
    return float(np.sum(p * _sigma(p, nu1, nu2)))


def quadrature_grad_V(theta: float, payoff, I: int) -> np.ndarray:
    """Gradient of ``V`` with respect to ``mu`` (shape ``(2, 1)``), assembled
    from quadrature surface integrals through the engine's ``grad_V``."""
    plane = _PlaneModel(payoff)
    mu = _mu_theta(theta)
    grid = build_equiprobable_grid(1, I)
    p, nu1, nu2 = _plane_integrals(plane, mu, I)
    J = np.zeros((1, I - 1, 3, 1, 2))
    for j, z in enumerate(grid.interior):
        J[0, j, :, 0, :] = std_normal_pdf(z) * plane.surface(z, mu)
    grad, _ = grad_V(p, nu1, nu2, _sigma(p, nu1, nu2), grad_nu_all(grid, J))
    return grad


def finite_difference_gradV(theta: float, payoff, I: int, step: float = 1e-3):
    """Fourth-order central difference of ``V(mu(theta))`` and the analytic derivative.

    The five-point stencil keeps the truncation error small near the
    stationary points of ``V``, where the derivative itself is tiny.
    Returns ``(fd, analytic)`` where ``analytic`` is ``grad_V`` projected on
    ``d mu / d theta``.
    """
    v = {k: quadrature_V(theta + k * step, payoff, I) for k in (-2, -1, 1, 2)}
    fd = (v[-2] - 8 * v[-1] + 8 * v[1] - v[2]) / (12 * step)
    dmu = np.array([-np.sin(theta), np.cos(theta)])
    analytic = float(quadrature_grad_V(theta, payoff, I)[:, 0] @ dmu)
    return float(fd), analytic


# --- bounds on the discrete rounding error -------------------------------

def discrete_variance(p, sigma, means) -> float:
    """``Var[phi]`` for a payoff with stratum means ``means`` and spreads ``sigma``."""
    p = np.asarray(p, dtype=float)
    means = np.asarray(means, dtype=float)
    mbar = np.sum(p * means)
    return float(np.sum(p * np.asarray(sigma) ** 2) + np.sum(p * (means - mbar) ** 2))


def lemma1_bound(part: str, p, sigma, means, q, M: int, eps: float):
    """Gap between the finite-``M`` and large-``M`` variances and its bound.

    ``part`` selects the setting: ``"i"`` any allocation with ``min q >= eps``
    and ``M > 1/eps``; ``"ii"`` a piecewise-constant density allocation with
    ``M min_i q_i >= 1 + eps``; ``"iii"`` the optimal allocation, ``eps > 1``.
    Strata are equiprobable. Returns ``(gap, bound)``.
    """
    p = np.asarray(p, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = np.asarray(q, dtype=float)
    var = discrete_variance(p, sigma, means)
    n = p.size
    gap = abs(M * fixed_I_variance(p, sigma, q, M) - large_M_variance(p, sigma, q))
    if part == "i":
        if q.min() < eps or M <= 1.0 / eps:
            raise ValueError("part (i) needs min q >= eps and M > 1/eps")
        bound = var / (M * eps * (eps - 1.0 / M))
    elif part == "ii":
        c = n * q.min()  # essential infimum of chi / g on the unit cube
        if M * c / n < 1 + eps:
            raise ValueError("part (ii) needs M min q >= 1 + eps")
        sup_ratio = np.max(p / q)
        bound = (1 + 1 / eps) * var / c * (n / M) * min(sup_ratio, n / c)
    elif part == "iii":
        if eps <= 1:
            raise ValueError("part (iii) needs eps > 1")
        bound = var * ((1 + eps) * n / M + 1.0 / (eps - 1))
    else:
        raise ValueError(f"unknown part {part!r}")
    return float(gap), float(bound)
