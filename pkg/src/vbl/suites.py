"""Randomised property sweeps over the analytic-norm lemmas."""

from __future__ import annotations

import numpy as np

from .analytic_norms import (
    check_lemma_shift,
    check_power_identity,
    check_product_inequalities,
    combinatorial_A,
    combinatorial_B,
    random_table,
)

POWER_RELTOL = 1e-12


def lemma_shift_sweep(rng: np.random.Generator, trials: int = 100, orders=(0, 1, 2)) -> list[dict]:
    out = []
    for i in range(trials):
        t = random_table(rng, int(rng.integers(4, 10)), int(rng.integers(0, 6)))
        lam = float(rng.uniform(0.05, 1.5))
        for n in orders:
            r = check_lemma_shift(t, lam, n)
            out.append(r.record("lemma_shift", lam, n) | {"trial": i})
    return out


def power_identity_sweep(rng: np.random.Generator, trials: int = 100, qs=(1, 2, 3, 4)) -> list[dict]:
    out = []
    for i in range(trials):
        t = random_table(rng, int(rng.integers(2, 16)), 0)
        lam = float(rng.uniform(0.05, 1.5))
        for q in qs:
            r = check_power_identity(t, lam, q)
            out.append({"name": "power_identity", "lambda": lam, "n": q, "value": r.lhs,
                        "tail_bound": r.tail_bound, "relerr": r.relerr,
                        "pass": r.relerr <= POWER_RELTOL, "trial": i})
    return out


def product_inequality_sweep(rng: np.random.Generator, trials: int = 50, qs=(0, 1, 2, 3)) -> list[dict]:
    out = []
    for i in range(trials):
        for q in qs:
            # caps keep every factor's series at order >= 12
            ts = random_table(rng, int(rng.integers(12, 17)), 0)
            tg = random_table(rng, int(rng.integers(6, 10)), int(rng.integers(6, 10)))
            ta = random_table(rng, 0, int(rng.integers(12, 17)))
            lam = float(rng.uniform(0.05, 1.0))
            rep = check_product_inequalities(ts, tg, ta, lam, q)
            out.append(rep.lemma_I.record("product_inequality_I", lam, q) | {"trial": i})
            out.append(rep.lemma_II.record("product_inequality_II", lam, q) | {"trial": i})
    return out


def combinatorial_sweep(nmax: int = 50) -> list[dict]:
    a_max = max(combinatorial_A(n, m) for n in range(2, nmax + 1) for m in range(2, nmax + 1))
    b_max = max(combinatorial_B(n, m) for n in range(nmax + 1) for m in range(nmax + 1))
    return [
        {"name": "combinatorial_A_max", "lambda": None, "n": nmax, "value": a_max,
         "tail_bound": 0.0, "pass": a_max <= 24.0},
        {"name": "combinatorial_B_max", "lambda": None, "n": nmax, "value": b_max,
         "tail_bound": 0.0, "pass": b_max <= 1.0},
    ]


def norm_suite(seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    return (lemma_shift_sweep(rng) + power_identity_sweep(rng)
            + product_inequality_sweep(rng) + combinatorial_sweep())
