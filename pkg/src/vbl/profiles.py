"""Library of analytic profiles with closed-form derivative sup norms.

Each profile can be sampled on a grid and can report the exact table
``sup(k, l) = ||d_x^k d_v^l f||_inf``.  Sup norms of the v-factors are found
by scanning the closed-form derivative on a fine grid and polishing the
maximiser with a bounded scalar search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .phase_space import GridSpec, alpha_values, weight_values

PROFILE_NAMES = ("gauss_v_trig_x", "weight_omega", "alpha", "sin_x", "cos_x", "constant")


def _polished_sup(fn, v: np.ndarray) -> float:
    """``max |fn|`` over the real line, given a scan grid that brackets the maximiser."""
    vals = np.abs(fn(v))
    j = int(np.argmax(vals))
    best = float(vals[j])
    lo = v[max(j - 1, 0)]
    hi = v[min(j + 1, v.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda s: -abs(float(fn(np.array([s]))[0])),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        best = max(best, -float(res.fun))
    return best


@lru_cache(maxsize=None)
def hermite_function_sups(lmax: int) -> tuple[float, ...]:
    """``||d^l/dv^l exp(-v^2/2)||_inf`` for ``l = 0..lmax``.

    Uses ``d^l exp(-v^2/2) = (-1)^l He_l(v) exp(-v^2/2)`` with the
    three-term recurrence ``psi_{l+1} = v psi_l - l psi_{l-1}``.
    """
    out = []
    for l in range(lmax + 1):
        reach = math.sqrt(2 * l + 1) + 6.0
        v = np.linspace(-reach, reach, 40001 + 400 * l)

        def psi(s, l=l):
            s = np.asarray(s, dtype=float)
            g = np.exp(-0.5 * s * s)
            prev, cur = np.zeros_like(s), g
            for n in range(l):
                prev, cur = cur, s * cur - n * prev
            return cur

        out.append(_polished_sup(psi, v))
    return tuple(out)


@lru_cache(maxsize=None)
def _pole_sups(lmax: int, part: str) -> tuple[float, ...]:
    """``sup_v |Re or Im of (v - i)^{-(l+1)}|`` for ``l = 0..lmax``."""
    v = np.linspace(-8.0, 8.0, 160001)
    out = []
    for l in range(lmax + 1):
        def fn(s, l=l):
            z = (np.asarray(s, dtype=float) - 1j) ** (-(l + 1))
            return z.real if part == "re" else z.imag
        out.append(_polished_sup(fn, v))
    return tuple(out)


def alpha_derivative_sups(lmax: int) -> np.ndarray:
    """``||d^l alpha||_inf``; ``alpha = -2 Re 1/(v - i)`` so the l-th derivative is
    ``-2 (-1)^l l! Re (v - i)^{-(l+1)}``."""
    s = np.array(_pole_sups(lmax, "re"))
    fact = np.array([float(math.factorial(l)) for l in range(lmax + 1)])
    return 2.0 * fact * s


def omega_derivative_sups(lmax: int) -> np.ndarray:
    """``||d^l omega||_inf`` with ``omega = Im 1/(v - i) / pi``."""
    s = np.array(_pole_sups(lmax, "im"))
    fact = np.array([float(math.factorial(l)) for l in range(lmax + 1)])
    return fact * s / math.pi


@dataclass(frozen=True)
class Profile:
    """A named analytic profile ``f(x, v)`` with parameters."""

    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in PROFILE_NAMES:
            raise ValueError(f"unknown profile {self.name!r}; expected one of {PROFILE_NAMES}")

    def sample(self, grid: GridSpec) -> np.ndarray:
        X, V = grid.mesh()
        L = grid.x_period
        if self.name == "gauss_v_trig_x":
            amp, eps, m = self.params
            return amp * np.exp(-0.5 * V * V) * (1.0 + eps * np.cos(2 * np.pi * m * X / L))
        if self.name == "weight_omega":
            return weight_values(V)
        if self.name == "alpha":
            return alpha_values(V)
        if self.name == "sin_x":
            return np.sin(2 * np.pi * X / L)
        if self.name == "cos_x":
            return np.cos(2 * np.pi * X / L)
        (c,) = self.params
        return np.full_like(X, float(c))

    def sup_table(self, kmax: int, lmax: int, x_period: float = 2.0 * math.pi) -> np.ndarray:
        """Exact ``sup(k, l)`` array of shape ``(kmax + 1, lmax + 1)``."""
        out = np.zeros((kmax + 1, lmax + 1))
        k = np.arange(kmax + 1)
        if self.name == "gauss_v_trig_x":
            amp, eps, m = self.params
            wave = 2 * np.pi * m / x_period
            xs = abs(eps) * wave ** k if m != 0 else np.zeros(kmax + 1)
            xs[0] = 1.0 + abs(eps) if m != 0 else abs(1.0 + eps)
            vs = np.array(hermite_function_sups(lmax))
            out[:] = abs(amp) * np.outer(xs, vs)
        elif self.name == "weight_omega":
            out[0, :] = omega_derivative_sups(lmax)
        elif self.name == "alpha":
            out[0, :] = alpha_derivative_sups(lmax)
        elif self.name in ("sin_x", "cos_x"):
            out[:, 0] = (2 * np.pi / x_period) ** k
        else:
            out[0, 0] = abs(float(self.params[0]))
        return out


def gauss_v_trig_x(amplitude: float, epsilon: float, mode: int = 1) -> Profile:
    """``A exp(-v^2/2) (1 + eps cos(2 pi m x / L))``."""
    return Profile("gauss_v_trig_x", (float(amplitude), float(epsilon), int(mode)))


def weight_omega() -> Profile:
    return Profile("weight_omega")


def alpha() -> Profile:
    return Profile("alpha")


def sin_x() -> Profile:
    return Profile("sin_x")


def cos_x() -> Profile:
    return Profile("cos_x")


def constant(c: float) -> Profile:
    return Profile("constant", (float(c),))
