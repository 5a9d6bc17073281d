"""Command line entry point.

Subcommands: ``adapt`` (adaptive loop with an optional iteration trace),
``price`` (one method, or every section of a config file), ``table``
(a published results grid), ``oracle`` (verification suite) and ``drift``
(optimal Cameron-Martin drift).

Exit codes: 0 on success, 1 when an oracle check fails, 2 on a
configuration error, 3 on numerical degeneracy.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys

import numpy as np

from .adapt import run as run_adapt
from .experiments import (ConfigError, DegeneracyError, ResultRow, adapt_config,
                          config_from_mapping, drift_vector, emit_csv, format_rows,
                          replication_seed, run_experiment)
from .gauss import DegenerateMatrixError
from .oracle_suite import run_suite
from .payoffs import InfeasibleDriftError, apply_drift, optimal_drift
from .strata import DegenerateAllocationError
from .tables import table_configs

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser, method_flags=True):
    p.add_argument("--model", default=None,
                   help="asian, barrier, knockout, basket, heston, linear, quadratic, exponential")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="model parameter, repeatable (e.g. --param vol=0.1 --param K=45)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strata", type=int, default=None, metavar="I")
    p.add_argument("--draws", type=int, default=None, metavar="M")
    p.add_argument("--iters", type=int, default=None, metavar="N")
    p.add_argument("--reps", type=int, default=None, metavar="R")
    p.add_argument("--drift", default=None, help="none, optimal, or comma-separated vector")
    if method_flags:
        p.add_argument("--direction", default=None, help="adapt, reg, star, l, none or custom=FILE")
        p.add_argument("--allocation", default=None, choices=("prop", "opt"))
    p.add_argument("--out", default=None, metavar="FILE")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replications")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adastrat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("adapt", help="run the adaptive stratification loop")
    _common(p, method_flags=False)
    p.add_argument("--dirs", type=int, default=None, metavar="m", help="number of directions")
    p.add_argument("--trace", default=None, metavar="FILE", help="per-iteration CSV trace")

    p = sub.add_parser("price", help="price with one method, or every section of --config")
    _common(p)
    p.add_argument("--method", default=None, choices=("mc", "adapt", "strat-fixed", "lhs"))
    p.add_argument("--config", default=None, metavar="FILE", help="INI file, one experiment per section")
    p.add_argument("--section", action="append", default=None, help="run only these sections")

    p = sub.add_parser("table", help="reproduce a results table")
    p.add_argument("name", help="1-8 or asian, asian-lhs, barrier, barrier-lhs, basket, "
                                "basket-lhs, heston, heston-lhs")
    _common(p, method_flags=False)
    p.add_argument("--full", action="store_true", help="50 replications instead of 10")
    p.add_argument("--only", action="append", default=[], metavar="KEY=VALUE",
                   help="restrict the parameter grid")

    p = sub.add_parser("oracle", help="run the quadrature verification suite")
    p.add_argument("--out", default=None, metavar="FILE")

    p = sub.add_parser("drift", help="print the optimal drift")
    p.add_argument("--model", default="asian")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _overrides(args) -> dict:
    """Section-style string mapping built from command-line flags."""
    out = {}
    if getattr(args, "model", None):
        out["model"] = args.model
    for item in getattr(args, "param", []):
        if "=" not in item:
            raise ConfigError("param", f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("seed", "seed"), ("strata", "I"), ("draws", "M"), ("iters", "N"),
                      ("reps", "reps"), ("drift", "drift"), ("direction", "direction"),
                      ("allocation", "allocation"), ("method", "method"), ("dirs", "m")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def _write(rows, out):
    if out:
        emit_csv(rows, out)
    else:
        sys.stdout.write(format_rows(rows))


def _cmd_price(args) -> int:
    flags = _overrides(args)
    if args.config:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(args.config, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError("config", str(exc)) from exc
        sections = args.section or parser.sections()
        configs = []
        for s in sections:
            if s not in parser:
                raise ConfigError("section", f"no section {s!r} in {args.config}")
            configs.append(config_from_mapping({**dict(parser[s]), **flags}, s))
    else:
        flags.setdefault("method", "mc")
        if flags["method"] == "mc":
            flags.setdefault("direction", "none")
        configs = [config_from_mapping(flags)]
    rows = []
    for cfg in configs:
        rows.extend(run_experiment(cfg, jobs=args.jobs))
    out = args.out or next((c.out for c in configs if c.out), None)
    _write(rows, out)
    return EXIT_OK


def _cmd_adapt(args) -> int:
    flags = _overrides(args)
    flags["method"] = "adapt"
    flags["direction"] = "adapt"
    cfg = config_from_mapping(flags)
    base = cfg.payoff()
    payoff = apply_drift(base, drift_vector(cfg, base))
    trace_rows = []

    def record(state):
        mu = state.mu
        trace_rows.append([state.t, state.traces["estimate"][-1], state.traces["average"][-1],
                           state.traces["variance"][-1], state.traces["step_angle"][-1],
                           int(state.traces["degenerate_gradient"][-1])] + list(mu.T.ravel()))

    rows = []
    for r in range(cfg.reps):
        seed = replication_seed(cfg.seed, r)
        report = run_adapt(adapt_config(cfg, seed, payoff.dim), payoff,
                           callback=record if r == 0 else None)
        rows.append((report.estimate, report.variance))
    if args.trace:
        d, m = payoff.dim, cfg.m
        header = ["t", "estimate", "average", "variance", "step_angle", "degenerate"]
        header += [f"mu_{k + 1}_{j + 1}" if m > 1 else f"mu_{j + 1}" for k in range(m) for j in range(d)]
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in trace_rows:
                w.writerow([row[0]] + [f"{x:.6g}" for x in row[1:]])
    prices, variances = np.array(rows).T
    result = ResultRow(model=cfg.model, params=cfg.params_label(), drift=cfg.drift,
                       method="adapt", direction="adapt", allocation="opt",
                       price=float(prices.mean()), variance=float(variances.mean()),
                       seed=cfg.seed, I=cfg.I, M=cfg.M, N=cfg.N)
    _write([result], args.out)
    return EXIT_OK


def _cmd_table(args) -> int:
    only = {}
    for item in args.only:
        k, _, v = item.partition("=")
        try:
            only[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"only.{k}", str(exc)) from exc
    reps = args.reps or (50 if args.full else 10)
    kw = dict(reps=reps, seed=args.seed or 0, only=only)
    for flag, key in (("strata", "I"), ("draws", "M"), ("iters", "N")):
        if getattr(args, flag) is not None:
            kw[key] = getattr(args, flag)
    try:
        configs = table_configs(args.name, **kw)
    except KeyError as exc:
        raise ConfigError("name", str(exc)) from exc
    if not configs:
        raise ConfigError("only", "filter leaves no experiments")
    rows = []
    for cfg in configs:
        logging.getLogger(__name__).info("running %s %s %s %s", cfg.params_label(), cfg.drift,
                                         cfg.method, cfg.direction)
        rows.extend(run_experiment(cfg, jobs=args.jobs))
    _write(rows, args.out)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    lines, ok = run_suite()
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_drift(args) -> int:
    flags = _overrides(args)
    flags.update(method="mc", direction="none")
    cfg = config_from_mapping(flags)
    if cfg.model == "heston":
        raise ConfigError("model", "no optimal drift for the Heston payoff")
    nu = optimal_drift(cfg.payoff())
    sys.stdout.write(f"norm {np.linalg.norm(nu):.6g}\n")
    sys.stdout.write(" ".join(f"{x:.6g}" for x in nu) + "\n")
    return EXIT_OK


_COMMANDS = {"adapt": _cmd_adapt, "price": _cmd_price, "table": _cmd_table,
             "oracle": _cmd_oracle, "drift": _cmd_drift}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegeneracyError, DegenerateMatrixError, DegenerateAllocationError,
            InfeasibleDriftError, FloatingPointError) as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
