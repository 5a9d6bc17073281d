"""Deterministic verification checks run by ``adastrat oracle``."""

from __future__ import annotations

import numpy as np

from .oracle import (ExponentialModel, LinearModel, check_prop1, finite_difference_gradV,
                     limiting_variance, prop2_discrepancy, truncated_normal_moments)
from .payoffs import exponential_payoff, linear_payoff, quadratic_payoff

__all__ = ["GRADIENT_INTEGRANDS", "gradient_agrees", "run_suite"]

PROP2_I = (5, 10, 20, 50, 100)

GRADIENT_INTEGRANDS = {
    "y1": linear_payoff(np.array([1.0, 0.0])),
    "y1^2": quadratic_payoff(2, 0),
    "exp(y1+y2)": exponential_payoff(np.array([1.0, 1.0])),
}


def gradient_agrees(fd: float, analytic: float, rel: float = 1e-3, floor: float = 1e-8) -> bool:
    """Relative agreement; derivatives both below ``floor`` count as equal zeros."""
    scale = max(abs(fd), abs(analytic))
    return scale < floor or abs(fd - analytic) <= rel * scale


def run_suite(seed: int = 2024):
    """Run every check; returns ``(report lines, all passed)``."""
    lines, ok = [], True

    def report(name, passed, detail):
        nonlocal ok
        ok &= bool(passed)
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")

    m, v = truncated_normal_moments(0.0, np.inf)
    report("truncated moments half-line", abs(m - np.sqrt(2 / np.pi)) < 1e-12
           and abs(v - (1 - 2 / np.pi)) < 1e-12, f"mean={m:.10f} var={v:.10f}")

    e1 = np.array([1.0, 0.0])
    rows, limit, mono = check_prop1(e1, LinearModel([1.0, 1.0]))
    val100 = rows[-1][1]
    report("stratified variance approach, linear", mono and abs(val100 - limit) <= 0.05 * limit,
           ", ".join(f"I={I}:{v:.6f}" for I, v, _ in rows) + f" limit={limit:.6f}")

    model = ExponentialModel([1.0, 0.5])
    rows, limit, mono = check_prop1(e1, model)
    report("stratified variance approach, exponential", mono,
           ", ".join(f"I={I}:{v:.5f}" for I, v, _ in rows) + f" limit={limit:.5f}")
    rows, limit, mono = check_prop1(e1, model, allocation="optimal")
    report("optimal allocation approach, exponential", mono,
           ", ".join(f"I={I}:{v:.5f}" for I, v, _ in rows) + f" limit={limit:.5f}")

    disc = [prop2_discrepancy(e1, model, I) for I in PROP2_I]
    report("optimal allocation vs density", all(a > b for a, b in zip(disc, disc[1:])),
           ", ".join(f"I={I}:{x:.5f}" for I, x in zip(PROP2_I, disc)))

    prop = limiting_variance(e1, model, "proportional")
    opt = limiting_variance(e1, model, "optimal")
    report("optimal limit below proportional", opt < prop, f"{opt:.6f} < {prop:.6f}")

    rng = np.random.default_rng(seed)
    thetas = rng.uniform(0.0, np.pi, 10)
    for name, payoff in GRADIENT_INTEGRANDS.items():
        worst = 0.0
        good = True
        for th in thetas:
            for I in (2, 4):
                fd, an = finite_difference_gradV(th, payoff, I)
                good &= gradient_agrees(fd, an)
                scale = max(abs(fd), abs(an))
                if scale >= 1e-8:
                    worst = max(worst, abs(fd - an) / scale)
        report(f"gradient vs finite differences, {name}", good, f"max rel err {worst:.2e}")
    return lines, ok
