"""Option payoffs as functions of a standard Gaussian vector.

Every payoff is vectorized: it maps an ``(n, d)`` array of Gaussian draws to
``n`` discounted payoff values. The Heston payoff also consumes auxiliary
Bernoulli variables that are not stratified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gauss import RandomStream

__all__ = [
    "GaussianPayoff",
    "FunctionPayoff",
    "AsianParams",
    "BarrierParams",
    "BasketParams",
    "HestonParams",
    "AsianPayoff",
    "BarrierPayoff",
    "BasketPayoff",
    "HestonPayoff",
    "DriftedPayoff",
    "InfeasibleDriftError",
    "apply_drift",
    "optimal_drift",
    "regression_direction",
    "guess_direction_l",
    "matrix_sqrt",
    "equicorrelation",
    "linear_payoff",
    "quadratic_payoff",
    "exponential_payoff",
]

log = logging.getLogger(__name__)


class GaussianPayoff:
    """Base class: ``payoff(y, aux)`` for ``y`` of shape ``(n, dim)``."""

    dim: int
    requires_aux = False

    def __call__(self, y, aux: RandomStream = None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        if single:
            y = y[None, :]
        if y.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {y.shape[1]}")
        out = self.evaluate(y, aux)
        return out[0] if single else out

    def evaluate(self, y: np.ndarray, aux) -> np.ndarray:
        raise NotImplementedError


class FunctionPayoff(GaussianPayoff):
    """Wraps a vectorized callable ``fn(y) -> values``."""

    def __init__(self, fn, dim: int, name: str = "function"):
        self.fn = fn
        self.dim = dim
        self.name = name

    def evaluate(self, y, aux):
        return np.asarray(self.fn(y), dtype=float)

    def __repr__(self):
        return f"FunctionPayoff({self.name}, dim={self.dim})"


def linear_payoff(a) -> FunctionPayoff:
    a = np.asarray(a, dtype=float)
    return FunctionPayoff(lambda y: y @ a, a.size, "linear")


def quadratic_payoff(d: int, coord: int = 0) -> FunctionPayoff:
    return FunctionPayoff(lambda y: y[:, coord] ** 2, d, "quadratic")


def exponential_payoff(a) -> FunctionPayoff:
    a = np.asarray(a, dtype=float)
    return FunctionPayoff(lambda y: np.exp(y @ a), a.size, "exponential")


# --------------------------------------------------------------------------
# Black-Scholes path payoffs


@dataclass
class AsianParams:
    s0: float = 50.0
    r: float = 0.05
    vol: float = 0.1
    T: float = 1.0
    K: float = 45.0
    d: int = 16


@dataclass
class BarrierParams(AsianParams):
    K: float = 50.0
    B: float = 80.0


def _log_path(y, p: AsianParams):
    d = p.d
    dt = p.T / d
    k = np.arange(1, d + 1)
    drift = np.log(p.s0) + (p.r - 0.5 * p.vol ** 2) * k * dt
    return drift[None, :] + p.vol * np.sqrt(dt) * np.cumsum(y, axis=1)


class AsianPayoff(GaussianPayoff):
    """Discounted arithmetic-average Asian call on a discretely monitored path."""

    def __init__(self, params: AsianParams = None, **kw):
        self.params = params or AsianParams(**kw)
        self.dim = self.params.d

    def evaluate(self, y, aux):
        p = self.params
        avg = np.exp(_log_path(y, p)).mean(axis=1)
        return np.exp(-p.r * p.T) * np.maximum(avg - p.K, 0.0)


class BarrierPayoff(GaussianPayoff):
    """Asian payoff knocked out when the terminal price exceeds ``B``."""

    def __init__(self, params: BarrierParams = None, **kw):
        self.params = params or BarrierParams(**kw)
        self.dim = self.params.d

    def evaluate(self, y, aux):
        p = self.params
        path = np.exp(_log_path(y, p))
        avg = path.mean(axis=1)
        alive = path[:, -1] <= p.B
        return np.exp(-p.r * p.T) * np.maximum(avg - p.K, 0.0) * alive


# --------------------------------------------------------------------------
# Basket


def equicorrelation(d: int, c: float) -> np.ndarray:
    return np.full((d, d), c) + (1.0 - c) * np.eye(d)


def matrix_sqrt(cov: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """A matrix ``L`` with ``L L^T = cov``.

    Cholesky when ``cov`` is positive definite, otherwise a symmetric square
    root with eigenvalues clipped at zero.

    Raises
    ------
    ValueError
        If ``cov`` has an eigenvalue below ``-tol`` (not PSD).
    """
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(cov)
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise ValueError("correlation matrix is not positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass
class BasketParams:
    d: int = 40
    c: float = 0.1
    K: float = 45.0
    r: float = 0.05
    T: float = 1.0
    spot_seed: int = 2009
    weights: np.ndarray = None
    spots: np.ndarray = None
    vols: np.ndarray = None
    corr: np.ndarray = None

    def __post_init__(self):
        d = self.d
        if self.weights is None:
            self.weights = np.full(d, 1.0 / d)
        if self.spots is None:
            self.spots = np.random.default_rng(self.spot_seed).uniform(20.0, 80.0, d)
        if self.vols is None:
            self.vols = np.linspace(0.1, 0.4, d)
        if self.corr is None:
            self.corr = equicorrelation(d, self.c)
        self.weights, self.spots, self.vols = (np.asarray(a, dtype=float)
                                               for a in (self.weights, self.spots, self.vols))
        if not np.allclose(np.diag(self.corr), 1.0):
            raise ValueError("correlation matrix must have unit diagonal")


class BasketPayoff(GaussianPayoff):
    """European call on a weighted basket of correlated lognormal assets."""

    def __init__(self, params: BasketParams = None, **kw):
        self.params = params or BasketParams(**kw)
        self.dim = self.params.d
        self.sqrt_corr = matrix_sqrt(self.params.corr)

    def evaluate(self, y, aux):
        p = self.params
        yt = y @ self.sqrt_corr.T
        logs = np.log(p.spots) + (p.r - 0.5 * p.vols ** 2) * p.T + p.vols * np.sqrt(p.T) * yt
        basket = np.exp(logs) @ (p.weights * 1.0)
        return np.exp(-p.r * p.T) * np.maximum(basket - p.K, 0.0)


# --------------------------------------------------------------------------
# Heston


@dataclass
class HestonParams:
    S0: float = 100.0
    xi0: float = 0.01
    k: float = 2.0
    theta: float = 0.01
    sigma: float = 0.2
    rho: float = -0.5
    r: float = 0.095
    T: float = 1.0
    K: float = 100.0
    d: int = 50
    scheme: str = "alfonsi"

    def __post_init__(self):
        if self.sigma ** 2 > 4.0 * self.k * self.theta:
            raise ValueError("Heston parameters must satisfy sigma^2 <= 4 k theta")
        if self.scheme not in ("alfonsi", "euler"):
            raise ValueError(f"unknown Heston scheme {self.scheme!r}")


def _psi(k: float, t: float) -> float:
    return t if k == 0 else (1.0 - np.exp(-k * t)) / k


class HestonPayoff(GaussianPayoff):
    """Asian call on the time-average of a Heston price path.

    ``y[:, :d]`` drive the variance (``W^1``) and ``y[:, d:]`` the independent
    price noise (``W^2``). With the default ``alfonsi`` scheme each step
    composes, in an order chosen by a fair coin, the second-order CIR step
    (with Gaussian increments) carrying ``log S - (rho/sigma) xi`` unchanged,
    and the conditionally Gaussian step for ``log S`` with frozen variance.
    The time integral of ``S`` uses the trapezoidal rule. The ``euler``
    scheme is full-truncation Euler, used as a cross-check.
    """

    requires_aux = True

    def __init__(self, params: HestonParams = None, **kw):
        self.params = params or HestonParams(**kw)
        self.dim = 2 * self.params.d

    def evaluate(self, y, aux):
        p = self.params
        n = y.shape[0]
        d = p.d
        if p.scheme == "alfonsi":
            if aux is None:
                raise ValueError("the Heston payoff needs an auxiliary stream for its Bernoulli variables")
            gen = aux.generator if isinstance(aux, RandomStream) else aux
            coins = gen.random((n, d)) < 0.5
        h = p.T / d
        xi = np.full(n, float(p.xi0))
        logS = np.full(n, np.log(p.S0))
        S = np.full(n, float(p.S0))
        X = np.zeros(n)
        for j in range(d):
            n1, n2 = y[:, j], y[:, d + j]
            if p.scheme == "euler":
                xp = np.maximum(xi, 0.0)
                logS = logS + (p.r - 0.5 * xp) * h + np.sqrt(xp * h) * (
                    p.rho * n1 + np.sqrt(1.0 - p.rho ** 2) * n2)
                xi = xi + p.k * (p.theta - xp) * h + p.sigma * np.sqrt(xp * h) * n1
            else:
                # variance step then price step where the coin is set,
                # price step then variance step otherwise
                first = coins[:, j]
                xi_a, logS_a = self._step_vol(xi, logS, n1, h)
                xi_ab, logS_ab = xi_a, self._step_price(xi_a, logS_a, n2, h)
                logS_b = self._step_price(xi, logS, n2, h)
                xi_ba, logS_ba = self._step_vol(xi, logS_b, n1, h)
                xi = np.where(first, xi_ab, xi_ba)
                logS = np.where(first, logS_ab, logS_ba)
            S_new = np.exp(logS)
            X += 0.5 * h * (S + S_new)
            S = S_new
        return np.exp(-p.r * p.T) * np.maximum(X / p.T - p.K, 0.0)

    def _step_vol(self, xi, logS, n1, h):
        p = self.params
        c = p.k * p.theta - 0.25 * p.sigma ** 2
        e = np.exp(-0.5 * p.k * h)
        ps = _psi(p.k, 0.5 * h)
        x1 = e * xi + c * ps
        x2 = (np.sqrt(x1) + 0.5 * p.sigma * np.sqrt(h) * n1) ** 2
        new = e * x2 + c * ps
        if p.sigma > 0:
            logS = logS + (p.rho / p.sigma) * (new - xi)
        else:
            logS = logS + p.rho * np.sqrt(xi * h) * n1
        return new, logS

    def _step_price(self, xi, logS, n2, h):
        p = self.params
        corr = (p.rho / p.sigma) * p.k * (p.theta - xi) if p.sigma > 0 else 0.0
        drift = (p.r - 0.5 * xi - corr) * h
        return logS + drift + np.sqrt((1.0 - p.rho ** 2) * xi * h) * n2


# --------------------------------------------------------------------------
# Drift


class DriftedPayoff(GaussianPayoff):
    """``y -> Xi(y + nu) exp(-nu^T y - nu^T nu / 2)``; same expectation as ``Xi``."""

    def __init__(self, base: GaussianPayoff, nu):
        self.base = base
        self.nu = np.asarray(nu, dtype=float).ravel()
        self.dim = base.dim
        self.requires_aux = base.requires_aux
        if self.nu.size != self.dim or not np.all(np.isfinite(self.nu)):
            raise ValueError("drift must be a finite vector of the payoff dimension")
        self._half_sq = 0.5 * float(self.nu @ self.nu)

    def evaluate(self, y, aux):
        vals = self.base.evaluate(y + self.nu, aux)
        return vals * np.exp(-(y @ self.nu) - self._half_sq)


def apply_drift(payoff: GaussianPayoff, nu) -> GaussianPayoff:
    nu = np.asarray(nu, dtype=float)
    if not np.any(nu):
        return payoff
    return DriftedPayoff(payoff, nu)


class InfeasibleDriftError(RuntimeError):
    """No point with a positive payoff was found to start the drift search."""


def optimal_drift(payoff: GaussianPayoff, d: int = None, tol: float = 1e-6,
                  max_iter: int = 500, fd_step: float = 1e-5) -> np.ndarray:
    """Maximize ``log Xi(nu) - |nu|^2 / 2`` over ``{Xi > 0}``.

    Steepest ascent with central-difference gradients and a backtracking
    line search that also rejects infeasible trial points. The start is the
    first feasible point found on the ray along ``(1, ..., 1)``.

    Raises
    ------
    InfeasibleDriftError
        If no feasible start is found.
    """
    d = d or payoff.dim

    def objective(nu):
        v = float(payoff(nu[None, :])[0])
        return np.log(v) - 0.5 * nu @ nu if v > 0 else -np.inf

    ones = np.ones(d) / np.sqrt(d)
    nu = None
    for t in np.concatenate([[0.0], np.ravel([[s, -s] for s in np.arange(0.25, 10.01, 0.25)])]):
        cand = t * ones
        if np.isfinite(objective(cand)):
            nu = cand
            break
    if nu is None:
        raise InfeasibleDriftError("no feasible starting drift on the diagonal ray")

    f = objective(nu)
    step = 1.0
    eye = np.eye(d) * fd_step
    for it in range(max_iter):
        grad = np.empty(d)
        for j in range(d):
            fp, fm = objective(nu + eye[j]), objective(nu - eye[j])
            if not (np.isfinite(fp) and np.isfinite(fm)):
                # one-sided difference at the edge of the feasible set
                grad[j] = (fp - f) / fd_step if np.isfinite(fp) else (f - fm) / fd_step
            else:
                grad[j] = (fp - fm) / (2 * fd_step)
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            break
        step = min(1.0, 2.0 * step)
        while step > 1e-14:
            cand = nu + step * grad
            fc = objective(cand)
            if np.isfinite(fc) and fc >= f + 1e-4 * step * gnorm ** 2:
                break
            step *= 0.5
        else:
            log.info("drift search stalled after %d iterations (|grad|=%.2e)", it, gnorm)
            break
        nu, f = cand, fc
    return nu


def regression_direction(payoff: GaussianPayoff, n_pilot: int, stream: RandomStream,
                         aux: RandomStream = None) -> np.ndarray:
    """Unit vector along the pilot estimate of ``E[Y phi(Y)]``.

    Raises
    ------
    ValueError
        If the estimate is not distinguishable from zero: the sum of squared
        per-coordinate t-statistics stays below ``d + 5 sqrt(2d)``, five
        standard deviations above its chi-square mean under a zero vector.
    """
    if n_pilot < 1000:
        raise ValueError("regression pilot needs at least 1000 draws")
    d = payoff.dim
    y = stream.normal((n_pilot, d))
    vals = payoff(y, aux if aux is not None else stream.substream(1))
    prod = y * vals[:, None]
    est = prod.mean(axis=0)
    var = prod.var(axis=0, ddof=1)
    norm = np.linalg.norm(est)
    if norm == 0:
        raise ValueError("regression coefficients vanish; no usable direction")
    live = var > 0
    chi2 = n_pilot * np.sum(est[live] ** 2 / var[live])
    if chi2 <= d + 5.0 * np.sqrt(2.0 * d):
        raise ValueError("regression coefficients vanish; no usable direction")
    return est / norm


def guess_direction_l(model: str, params) -> np.ndarray:
    """Per-model guess of a good stratification direction."""
    if model in ("asian", "barrier", "knockout"):
        v = np.arange(params.d, 0, -1, dtype=float)
    elif model == "basket":
        p = params
        v = p.weights * p.spots * np.exp((p.r - 0.5 * p.vols ** 2) * p.T) * p.vols
        v = v @ matrix_sqrt(p.corr)
    else:
        raise ValueError(f"no guessed direction for model {model!r}")
    return v / np.linalg.norm(v)
