"""Experiment configurations, the variance-reporting protocol and CSV output.

Every method reports a price and a per-sample variance statistic:

* ``mc``: sample variance of the payoff over ``M * N`` independent draws;
* ``adapt``: the harmonic mean of ``(sum_i p_i sigma_i^(t))^2`` over the
  ``N`` iterations of the adaptive loop;
* ``strat-fixed`` with ``prop``: ``sum_i p_i sigma_i^2`` from ``M * N``
  proportionally allocated draws along a fixed direction;
* ``strat-fixed`` with ``opt``: the adaptive loop with the direction frozen,
  so only the allocation is learned (same statistic as ``adapt``);
* ``lhs``: ``M (mean(E^2) - mean(E)^2)`` over ``N`` Latin Hypercube
  estimates of size ``M``, with the input rotated so that its first axis
  is the chosen direction.

Each replication ``r`` draws from its own seed derived from ``(seed, r)``;
reported values are averages over replications.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptConfig, run as run_adapt
from .gauss import (DegenerateMatrixError, RandomStream, rotation_from_direction,
                    sample_stratum_conditional)
from .lhs import lhs_estimate
from .payoffs import (AsianParams, AsianPayoff, BarrierParams, BarrierPayoff, BasketParams,
                      BasketPayoff, HestonParams, HestonPayoff, InfeasibleDriftError, apply_drift,
                      exponential_payoff, guess_direction_l, linear_payoff, optimal_drift,
                      quadratic_payoff, regression_direction)
from .strata import DegenerateAllocationError, build_equiprobable_grid, draws_from_allocation

__all__ = [
    "ConfigError",
    "DegeneracyError",
    "ExperimentConfig",
    "ResultRow",
    "CSV_HEADER",
    "build_payoff",
    "load_configs",
    "resolve_direction",
    "run_experiment",
    "emit_csv",
    "format_rows",
    "replication_seed",
    "adapt_config",
    "drift_vector",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["model", "params", "drift", "method", "direction", "allocation",
              "price", "variance", "seed", "I", "M", "N"]

METHODS = ("mc", "adapt", "strat-fixed", "lhs")
DIRECTIONS = ("adapt", "reg", "star", "l", "custom", "none")
DRIFTS = ("none", "optimal", "vector")
ALLOCATIONS = ("prop", "opt")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegeneracyError(ArithmeticError):
    """A numerical step could not proceed (no usable direction, drift, ...)."""


# --- models ---------------------------------------------------------------

_MODEL_PARAMS = {
    "asian": AsianParams,
    "barrier": BarrierParams,
    "knockout": BarrierParams,
    "basket": BasketParams,
    "heston": HestonParams,
}
_ANALYTIC = ("linear", "quadratic", "exponential")


def _param_types(model):
    if model in _ANALYTIC:
        return {"d": int, "a": "vector", "coord": int}
    cls = _MODEL_PARAMS[model]
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in ("weights", "spots", "vols", "corr"):
            out[f.name] = "vector"
        elif f.name == "scheme":
            out[f.name] = str
        elif f.type in ("int", int):
            out[f.name] = int
        else:
            out[f.name] = float
    return out


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()], dtype=float)


def build_payoff(model: str, params: dict):
    """Payoff object for ``model`` with keyword ``params`` (already typed)."""
    if model in _ANALYTIC:
        d = int(params.get("d", len(params["a"]) if "a" in params else 2))
        if model == "quadratic":
            return quadratic_payoff(d, int(params.get("coord", 0)))
        a = np.asarray(params.get("a", np.ones(d)), dtype=float)
        if a.size != d:
            raise ConfigError("a", f"expected {d} coefficients, got {a.size}")
        return linear_payoff(a) if model == "linear" else exponential_payoff(a)
    cls = _MODEL_PARAMS[model]
    try:
        p = cls(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError("params", str(exc)) from exc
    if model == "asian":
        return AsianPayoff(p)
    if model in ("barrier", "knockout"):
        return BarrierPayoff(p)
    if model == "basket":
        return BasketPayoff(p)
    return HestonPayoff(p)


# --- configuration --------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One experiment: a model, a method and the sampling budget."""

    model: str = "asian"
    params: dict = field(default_factory=dict)
    drift: str = "none"
    drift_vector: np.ndarray = None
    method: str = "adapt"
    direction: str = "adapt"
    direction_matrix: np.ndarray = None
    allocation: str = "opt"
    I: int = 100
    M: int = 20000
    N: int = 200
    m: int = 1
    reps: int = 1
    seed: int = 0
    step: float = 0.3
    floor: float = None
    out: str = None
    name: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def dim(self) -> int:
        return build_payoff(self.model, self.params).dim

    def validate(self):
        if self.model not in _MODEL_PARAMS and self.model not in _ANALYTIC:
            raise ConfigError("model", f"unknown model {self.model!r}")
        types = _param_types(self.model)
        for key in self.params:
            if key not in types:
                raise ConfigError(f"params.{key}", f"not a parameter of {self.model}")
        if self.method not in METHODS:
            raise ConfigError("method", f"unknown method {self.method!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError("direction", f"unknown direction {self.direction!r}")
        if self.allocation not in ALLOCATIONS:
            raise ConfigError("allocation", f"unknown allocation {self.allocation!r}")
        if self.drift not in DRIFTS:
            raise ConfigError("drift", f"unknown drift {self.drift!r}")
        if self.method == "adapt" and self.direction != "adapt":
            raise ConfigError("direction", "the adapt method learns its own direction")
        if self.method == "strat-fixed" and self.direction in ("adapt", "none"):
            raise ConfigError("direction", "strat-fixed needs a fixed direction (reg, star, l, custom)")
        if self.method == "mc" and self.direction not in ("none", "adapt"):
            raise ConfigError("direction", "plain Monte Carlo takes no direction")
        if self.I < 2:
            raise ConfigError("I", "need at least 2 strata per direction")
        if self.M < 2 or self.N < 1 or self.reps < 1:
            raise ConfigError("M", "need M >= 2, N >= 1 and reps >= 1")
        d = self.dim
        if not 1 <= self.m < d:
            raise ConfigError("m", f"need 1 <= m < d = {d}")
        if self.method != "adapt" and self.m != 1 and self.method != "mc":
            raise ConfigError("m", "fixed-direction methods use a single direction")
        if self.floor is not None and not 0 <= self.floor < 1.0 / self.I ** self.m:
            raise ConfigError("floor", f"allocation floor must lie in [0, 1/I^m) = [0, {1.0 / self.I ** self.m:.6g})")
        if self.method in ("adapt", "strat-fixed") and self.M < self.m * (self.I - 1):
            raise ConfigError("M", "too few draws for the hyperplane estimates")
        if self.drift == "vector":
            v = np.asarray(self.drift_vector, dtype=float).ravel() if self.drift_vector is not None else None
            if v is None or v.size != d or not np.all(np.isfinite(v)):
                raise ConfigError("drift", f"explicit drift must be a finite vector of length {d}")
        if self.drift == "optimal" and self.model == "heston":
            raise ConfigError("drift", "no optimal drift for the Heston payoff")
        if self.direction == "l" and self.model not in ("asian", "barrier", "knockout", "basket"):
            raise ConfigError("direction", f"no guessed direction for {self.model}")
        if self.direction == "star" and self.model == "heston":
            raise ConfigError("direction", "no optimal drift, hence no star direction, for heston")
        if self.direction == "custom":
            mat = self.direction_matrix
            if mat is None:
                raise ConfigError("direction", "custom direction needs a matrix")
            mat = np.asarray(mat, dtype=float).reshape(d, -1)
            if np.abs(mat.T @ mat - np.eye(mat.shape[1])).max() > 1e-8:
                raise ConfigError("direction", "custom direction is not orthonormal (tolerance 1e-8)")
            self.direction_matrix = mat

    def payoff(self):
        return build_payoff(self.model, self.params)

    def params_label(self) -> str:
        return ";".join(f"{k}={_fmt_param(v)}" for k, v in sorted(self.params.items()))


def _fmt_param(v):
    if isinstance(v, np.ndarray):
        return " ".join(f"{x:.6g}" for x in v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _typed(model: str, key: str, raw: str):
    kind = _param_types(model).get(key)
    if kind is None:
        raise ConfigError(f"params.{key}", f"not a parameter of {model}")
    try:
        if kind == "vector":
            return _parse_vector(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"params.{key}", str(exc)) from exc


_TOP_KEYS = {"model", "drift", "method", "direction", "allocation", "I", "M", "N", "m",
             "reps", "seed", "step", "floor", "out"}


def config_from_mapping(section: dict, name: str = "") -> ExperimentConfig:
    """Build a config from string key-value pairs (one INI section)."""
    kw = {"name": name}
    params = {}
    model = section.get("model", "asian")
    for key, raw in section.items():
        where = f"{name}.{key}" if name else key
        try:
            if key in ("I", "M", "N", "m", "reps", "seed"):
                kw[key] = int(raw)
            elif key in ("step", "floor"):
                kw[key] = float(raw)
            elif key == "drift":
                if raw in DRIFTS:
                    kw["drift"] = raw
                else:
                    kw["drift"] = "vector"
                    kw["drift_vector"] = _parse_vector(raw)
            elif key == "direction":
                if raw.startswith("custom="):
                    kw["direction"] = "custom"
                    kw["direction_matrix"] = np.loadtxt(raw.split("=", 1)[1], ndmin=2, delimiter=None)
                else:
                    kw["direction"] = raw
            elif key in _TOP_KEYS:
                kw[key] = raw
            else:
                params[key] = _typed(model, key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{name}.{exc.field}" if name else exc.field, str(exc).split(": ", 1)[-1]) from exc
        except (ValueError, OSError) as exc:
            raise ConfigError(where, str(exc)) from exc
    kw["params"] = params
    try:
        return ExperimentConfig(**kw)
    except ConfigError as exc:
        if name:
            raise ConfigError(f"{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from exc
        raise


def load_configs(path_or_text: str, is_text: bool = False) -> list:
    """Parse an INI file: one experiment per section, in file order."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (K, B, I, M, N)
    try:
        if is_text:
            parser.read_string(path_or_text)
        else:
            with open(path_or_text, encoding="utf-8") as fh:
                parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from exc
    return [config_from_mapping(dict(parser[s]), s) for s in parser.sections()]


# --- running ----------------------------------------------------------------

@dataclass
class ResultRow:
    model: str
    params: str
    drift: str
    method: str
    direction: str
    allocation: str
    price: float
    variance: float
    seed: int
    I: int
    M: int
    N: int

    def as_list(self):
        return [self.model, self.params, self.drift, self.method, self.direction, self.allocation,
                f"{self.price:.6g}", f"{self.variance:.6g}", str(self.seed), str(self.I),
                str(self.M), str(self.N)]


def replication_seed(seed: int, r: int) -> int:
    """Deterministic 32-bit seed of replication ``r``."""
    return int(np.random.SeedSequence(seed, spawn_key=(r,)).generate_state(1)[0])


def drift_vector(config: ExperimentConfig, base) -> np.ndarray:
    if config.drift == "none":
        return np.zeros(base.dim)
    if config.drift == "vector":
        return np.asarray(config.drift_vector, dtype=float).ravel()
    try:
        return optimal_drift(base)
    except InfeasibleDriftError as exc:
        log.warning("%s; proceeding without drift", exc)
        return np.zeros(base.dim)


def resolve_direction(config: ExperimentConfig, base, payoff, seed: int) -> np.ndarray:
    """Fixed ``(d, m)`` direction matrix for ``reg``, ``star``, ``l``, ``custom``."""
    kind = config.direction
    if kind == "custom":
        return config.direction_matrix
    if kind == "l":
        v = guess_direction_l(config.model, base.params)
    elif kind == "star":
        nu = drift_vector(dataclasses.replace(config, drift="optimal"), base)
        n = np.linalg.norm(nu)
        if n == 0:
            raise DegeneracyError("optimal drift is zero; no star direction")
        v = nu / n
    elif kind == "reg":
        stream = RandomStream(seed, (7,))
        try:
            v = regression_direction(payoff, max(config.M, 1000), stream)
        except ValueError as exc:
            log.warning("%s; using the constant direction instead", exc)
            v = np.ones(payoff.dim)
    else:
        raise ConfigError("direction", f"{kind!r} is not a fixed direction")
    return v[:, None]


def adapt_config(config: ExperimentConfig, seed: int, d: int, mu0=None) -> AdaptConfig:
    return AdaptConfig(d=d, m=config.m, I=config.I, M=config.M, N=config.N, step=config.step,
                       floor=config.floor, seed=seed, mu0=mu0, learn_direction=mu0 is None)


def _mc(payoff, config, seed):
    root = RandomStream(seed)
    total = total2 = 0.0
    n = 0
    for t in range(config.N):
        sub = root.substream(t)
        v = payoff(sub.normal((config.M, payoff.dim)), sub.substream(1))
        total += v.sum()
        total2 += (v * v).sum()
        n += v.size
    mean = total / n
    return mean, (total2 - n * mean * mean) / (n - 1)


def _strat_proportional(payoff, mu, config, seed):
    """Proportional allocation along ``mu``: price and ``sum_i p_i sigma_i^2``."""
    grid = build_equiprobable_grid(1, config.I)
    p = grid.probabilities
    counts = draws_from_allocation(p, config.M)
    root = RandomStream(seed)
    s1 = np.zeros(grid.n_cells)
    s2 = np.zeros(grid.n_cells)
    n = np.zeros(grid.n_cells)
    for t in range(config.N):
        for i, c in enumerate(counts):
            if c == 0:
                continue
            sub = root.substream(t, i)
            v = payoff(sample_stratum_conditional(mu, grid.cell_bounds(i), int(c), sub),
                       sub.substream(1))
            s1[i] += v.sum()
            s2[i] += (v * v).sum()
            n[i] += c
    mean = s1 / n
    var = np.maximum(s2 / n - mean ** 2, 0.0) * n / np.maximum(n - 1, 1)
    return float(p @ mean), float(p @ var)


def _one_replication(config: ExperimentConfig, r: int):
    seed = replication_seed(config.seed, r)
    base = config.payoff()
    nu = drift_vector(config, base)
    payoff = apply_drift(base, nu)
    d = payoff.dim
    try:
        if config.method == "mc":
            return _mc(payoff, config, seed)
        if config.method == "adapt":
            rep = run_adapt(adapt_config(config, seed, d), payoff)
            return rep.estimate, rep.variance
        if config.method == "lhs":
            if config.direction == "none":
                O = np.eye(d)
            else:
                if config.direction == "adapt":
                    mu = run_adapt(adapt_config(config, seed, d), payoff).mu
                else:
                    mu = resolve_direction(config, base, payoff, seed)
                O = rotation_from_direction(mu[:, 0])
            return lhs_estimate(payoff, O, config.M, config.N, RandomStream(seed, (9,)))
        mu = resolve_direction(config, base, payoff, seed)
        if config.allocation == "prop":
            return _strat_proportional(payoff, mu, config, seed)
        rep = run_adapt(adapt_config(config, seed, d, mu0=mu), payoff)
        return rep.estimate, rep.variance
    except (DegenerateMatrixError, DegenerateAllocationError) as exc:
        raise DegeneracyError(str(exc)) from exc


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list:
    """Run ``config.reps`` replications; returns one averaged ``ResultRow``.

    With ``jobs > 1`` replications run in worker processes. Each uses its
    own derived seed, so the result does not depend on ``jobs``.
    """
    if jobs > 1 and config.reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replication, [config] * config.reps, range(config.reps)))
    else:
        results = [_one_replication(config, r) for r in range(config.reps)]
    prices, variances = np.array(results, dtype=float).T
    direction = "none" if config.method == "mc" else config.direction
    allocation = "-" if config.method in ("mc", "lhs") else config.allocation
    if config.method == "adapt":
        allocation = "opt"
    drift = config.drift if config.drift != "vector" else "vector"
    return [ResultRow(model=config.model, params=config.params_label(), drift=drift,
                      method=config.method, direction=direction, allocation=allocation,
                      price=float(prices.mean()), variance=float(variances.mean()),
                      seed=config.seed, I=config.I, M=config.M, N=config.N)]


def format_rows(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_list())
    return buf.getvalue()


def emit_csv(rows, path) -> None:
    """Write ``rows`` with the fixed header to ``path`` (UTF-8)."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_rows(rows))
