"""Experiment grids behind the published result tables.

Each table is a list of experiments over the model parameters, the drift
and the allocation, with one experiment per reported cell.
"""

from __future__ import annotations

from .experiments import ExperimentConfig

__all__ = ["TABLES", "table_configs"]

_ASIAN = [dict(vol=0.1, K=45.0), dict(vol=0.5, K=45.0), dict(vol=0.5, K=65.0),
          dict(vol=1.0, K=45.0), dict(vol=1.0, K=65.0)]
_BARRIER = [dict(K=50.0, B=60.0), dict(K=50.0, B=80.0)]
_BASKET = [dict(c=0.1, K=45.0), dict(c=0.5, K=45.0), dict(c=0.9, K=45.0)]
_HESTON = [dict(xi0=0.01, K=120.0), dict(xi0=0.01, K=100.0), dict(xi0=0.01, K=80.0),
           dict(xi0=0.04, K=130.0), dict(xi0=0.04, K=100.0), dict(xi0=0.04, K=70.0)]

# name: (model, parameter grid, drifts, fixed directions, lhs?)
TABLES = {
    "asian": ("asian", _ASIAN, ("none", "optimal"), ("reg", "star", "l"), False),
    "asian-lhs": ("asian", _ASIAN, ("none", "optimal"), ("none", "reg", "star", "adapt"), True),
    "barrier": ("barrier", _BARRIER, ("none", "optimal"), ("reg", "star", "l"), False),
    "barrier-lhs": ("barrier", _BARRIER, ("none", "optimal"), ("none", "reg", "star", "adapt"), True),
    "basket": ("basket", _BASKET, ("none", "optimal"), ("reg", "star", "l"), False),
    "basket-lhs": ("basket", _BASKET, ("none", "optimal"), ("none", "reg", "star", "adapt"), True),
    "heston": ("heston", _HESTON, ("none",), ("reg",), False),
    "heston-lhs": ("heston", _HESTON, ("none",), ("none", "reg", "adapt"), True),
}
# numbered aliases in publication order
for _i, _name in enumerate(["asian", "asian-lhs", "barrier", "barrier-lhs", "basket",
                            "basket-lhs", "heston", "heston-lhs"], start=1):
    TABLES[str(_i)] = TABLES[_name]


def _matches(params: dict, only: dict) -> bool:
    return all(k not in params or float(params[k]) == float(v) for k, v in only.items())


def table_configs(name: str, reps: int = 10, seed: int = 0, I: int = 100, M: int = 20000,
                  N: int = 200, only: dict = None) -> list:
    """Experiments for table ``name`` in row order.

    For a stratification table each ``(params, drift)`` pair yields one
    Monte Carlo experiment, then for each allocation the fixed-direction
    experiments, plus the adaptive one for the optimal allocation. ``only``
    restricts the parameter grid (e.g. ``{"vol": 0.1}``).
    """
    if name not in TABLES:
        raise KeyError(f"unknown table {name!r}; choose from {sorted(TABLES)}")
    model, grid, drifts, directions, lhs = TABLES[name]
    only = only or {}
    common = dict(model=model, I=I, M=M, N=N, reps=reps, seed=seed)
    out = []
    for params in grid:
        if not _matches(params, only):
            continue
        for drift in drifts:
            base = dict(common, params=dict(params), drift=drift)
            if lhs:
                for direction in directions:
                    out.append(ExperimentConfig(method="lhs", direction=direction, **base))
                continue
            out.append(ExperimentConfig(method="mc", direction="none", **base))
            for allocation in ("prop", "opt"):
                if allocation == "opt":
                    out.append(ExperimentConfig(method="adapt", direction="adapt",
                                                allocation="opt", **base))
                for direction in directions:
                    out.append(ExperimentConfig(method="strat-fixed", direction=direction,
                                                allocation=allocation, **base))
    return out
