"""Derivative tables and the analytic norm stack built on them.

A :class:`DerivativeTable` stores ``sup(k, l) = ||d_x^k d_v^l f||_inf``.  Every
norm here is a function of the diagonal coefficients

    p_d = sum_{k + l = d} sup(k, l) / (k! l!),

because ``||f||_lam = sum_d p_d lam^d`` and its n-th lambda-derivative is

    |f|_{lam, n} = sum_{d >= n} d!/(d - n)! p_d lam^(d - n).

Truncation at the table caps always comes with a geometric tail estimate taken
from the last complete diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import DivergentSeriesError
from .phase_space import DERIVATIVE_CAP, PhaseField
from .profiles import Profile

CLOSED_FORM = "closed-form"
SPECTRAL = "spectral-estimated"
NEAR_DIVERGENCE_RATIO = 0.9
ROUNDING_FLOOR = 1e-14
MAX_TOTAL_ORDER = 170  # factorials overflow float64 beyond this


@dataclass(frozen=True)
class DerivativeTable:
    """Sup norms of mixed derivatives up to ``(kmax, lmax)``."""

    sup: np.ndarray
    provenance: str = CLOSED_FORM

    def __post_init__(self):
        arr = np.array(self.sup, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError("sup must be a 2-D array indexed (k, l)")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("derivative table entries must be finite and nonnegative")
        if self.provenance not in (CLOSED_FORM, SPECTRAL):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        kmax, lmax = arr.shape[0] - 1, arr.shape[1] - 1
        if self.provenance == SPECTRAL and kmax + lmax > DERIVATIVE_CAP:
            raise ValueError("spectral-estimated tables are limited to kmax + lmax <= 8")
        if kmax + lmax > MAX_TOTAL_ORDER:
            raise ValueError(f"kmax + lmax must not exceed {MAX_TOTAL_ORDER}")
        arr.setflags(write=False)
        object.__setattr__(self, "sup", arr)

    @property
    def kmax(self) -> int:
        return self.sup.shape[0] - 1

    @property
    def lmax(self) -> int:
        return self.sup.shape[1] - 1

    @property
    def max_order(self) -> int:
        return self.kmax + self.lmax

    @property
    def full_diagonal(self) -> int:
        """Largest ``d`` whose diagonal ``k + l = d`` lies entirely inside the table."""
        if self.kmax == 0 or self.lmax == 0:
            return self.kmax + self.lmax
        return min(self.kmax, self.lmax)

    def diagonal_coefficients(self) -> np.ndarray:
        inv_fact = np.array([1.0 / math.factorial(i) for i in range(max(self.sup.shape))])
        weighted = self.sup * np.outer(inv_fact[: self.kmax + 1], inv_fact[: self.lmax + 1])
        p = np.zeros(self.max_order + 1)
        for k in range(self.kmax + 1):
            p[k : k + self.lmax + 1] += weighted[k]
        return p

    def shift_x(self) -> "DerivativeTable":
        """Table of ``d_x f``: ``sup'(k, l) = sup(k + 1, l)``."""
        if self.kmax < 1:
            raise ValueError("cannot shift a table with kmax = 0")
        return DerivativeTable(self.sup[1:], self.provenance)

    def __add__(self, other: "DerivativeTable") -> "DerivativeTable":
        if self.sup.shape != other.sup.shape:
            raise ValueError("tables have different caps")
        prov = CLOSED_FORM if self.provenance == other.provenance == CLOSED_FORM else SPECTRAL
        return DerivativeTable(self.sup + other.sup, prov)

    def scaled(self, c: float) -> "DerivativeTable":
        return DerivativeTable(abs(c) * self.sup, self.provenance)


@dataclass(frozen=True)
class NormParams:
    lam: float
    n: int = 0
    tail_policy: str = "report"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.n < 0:
            raise ValueError("seminorm order must be nonnegative")
        if self.tail_policy not in ("reject", "report"):
            raise ValueError("tail_policy must be 'reject' or 'report'")


@dataclass(frozen=True)
class NormValue:
    """A truncated series value with its tail diagnostics."""

    value: float
    tail_bound: float = 0.0
    ratio: float = 0.0
    divergent: bool = False
    near_divergent: bool = False

    def __float__(self) -> float:
        return self.value

    def record(self, name: str, lam: float, n: int | None = None, passed: bool | None = None) -> dict:
        return {
            "name": name,
            "lambda": lam,
            "n": n,
            "value": self.value,
            "tail_bound": self.tail_bound if math.isfinite(self.tail_bound) else None,
            "pass": (not self.divergent) if passed is None else bool(passed),
        }


def table_from_closed_form(profile: Profile, kmax: int, lmax: int,
                           x_period: float = 2.0 * math.pi) -> DerivativeTable:
    """Exact sup-norm table of a library profile."""
    if not isinstance(profile, Profile):
        raise ValueError(f"unknown profile {profile!r}")
    return DerivativeTable(profile.sup_table(kmax, lmax, x_period), CLOSED_FORM)


def _series_terms(t: DerivativeTable, lam: float, n: int) -> np.ndarray:
    p = t.diagonal_coefficients()
    terms = np.zeros_like(p)
    for d in range(n, p.size):
        if p[d] != 0.0:
            terms[d] = float(math.perm(d, n)) * p[d] * lam ** (d - n)
    return terms


def _tail(t: DerivativeTable, terms: np.ndarray, n: int) -> tuple[float, float]:
    d = t.full_diagonal
    last = terms[d]
    if last == 0.0:
        return 0.0, 0.0
    if d - 1 < n or terms[d - 1] == 0.0:
        return math.inf, math.inf
    r = float(last / terms[d - 1])
    if r >= 1.0:
        return math.inf, r
    return float(last * r / (1.0 - r)), float(r)


def seminorm_lambda_n(t: DerivativeTable, p: NormParams) -> NormValue:
    """``|f|_{lam, n}``, the n-th lambda-derivative of ``||f||_lam``."""
    terms = _series_terms(t, p.lam, p.n)
    tail, r = _tail(t, terms, p.n)
    out = NormValue(math.fsum(terms), tail, r, divergent=not math.isfinite(tail),
                    near_divergent=bool(r > NEAR_DIVERGENCE_RATIO))
    if out.divergent and p.tail_policy == "reject":
        raise DivergentSeriesError(
            f"series at lambda={p.lam} shows ratio {r:.3g} >= 1 on the last diagonal; "
            "lambda is at or beyond the radius of convergence"
        )
    return out


def norm_lambda(t: DerivativeTable, p: NormParams) -> NormValue:
    """``||f||_lam = sum lam^(k+l)/(k! l!) sup(k, l)``.

    ``p.n`` is ignored; this is the n = 0 member of :func:`seminorm_lambda_n`.
    """
    return seminorm_lambda_n(t, NormParams(p.lam, 0, p.tail_policy))


def _h_weights(max_order: int, lam: float, first: int, weight) -> np.ndarray:
    """``w_d = sum_{first <= n <= d} weight(n) d!/(d-n)! lam^(d-n)``."""
    w = np.zeros(max_order + 1)
    for d in range(max_order + 1):
        w[d] = math.fsum(weight(n) * float(math.perm(d, n)) * lam ** (d - n)
                         for n in range(first, d + 1))
    return w


def _h_series(t: DerivativeTable, lam: float, first: int, weight, tail_policy: str) -> NormValue:
    # Summing over n first turns the double series into one series over
    # diagonals d, so a single last-diagonal tail estimate covers every n.
    p = t.diagonal_coefficients()
    terms = p * _h_weights(t.max_order, lam, first, weight)
    tail, r = _tail(t, terms, 0)
    out = NormValue(math.fsum(terms), tail, r, divergent=not math.isfinite(tail),
                    near_divergent=bool(r > NEAR_DIVERGENCE_RATIO))
    if out.divergent and tail_policy == "reject":
        raise DivergentSeriesError(f"H-series at lambda={lam} has last-diagonal ratio {r:.3g} >= 1")
    return out


def norm_H(t: DerivativeTable, lam: float, tail_policy: str = "report") -> NormValue:
    """``||f||_{H, lam} = sum_{n >= 0} |f|_{lam, n} / (n!)^2``."""
    return _h_series(t, lam, 0, lambda n: 1.0 / math.factorial(n) ** 2, tail_policy)


def seminorm_H(t: DerivativeTable, lam: float, tail_policy: str = "report") -> NormValue:
    """``|f|_{H, lam} = sum_{n >= 1} n^2 |f|_{lam, n} / (n!)^2``."""
    return _h_series(t, lam, 1, lambda n: n * n / math.factorial(n) ** 2, tail_policy)


def lambda_schedule(t, lambda0: float, K: float):
    """``lam(t) = lam0 - (K + 1) t``."""
    return lambda0 - (K + 1.0) * np.asarray(t, dtype=float)


def _check_schedule(lambda0: float, K: float, T: float) -> None:
    if not lambda0 > (K + 1.0) * T:
        raise ValueError(
            f"lambda schedule hits zero on [0, T]: need lambda0 > (K+1) T, "
            f"got {lambda0} <= {(K + 1.0) * T}"
        )


def z_norm(tables: Sequence[DerivativeTable], times: Sequence[float],
           lambda0: float, K: float, T: float) -> float:
    """``sup_t ||f(t)||_lam0 + int_0^T |f(t)|_{lam(t), 1} dt`` on sampled slices.

    The time integral uses the trapezoid rule on the sample times.
    """
    _check_schedule(lambda0, K, T)
    times = np.asarray(times, dtype=float)
    if len(tables) != times.size:
        raise ValueError("one table per time sample is required")
    if times.size == 0:
        return 0.0
    sup_part = max(norm_lambda(tb, NormParams(lambda0)).value for tb in tables)
    lam_t = lambda_schedule(times, lambda0, K)
    integrand = np.array([seminorm_lambda_n(tb, NormParams(float(lt), 1)).value
                          for tb, lt in zip(tables, lam_t)])
    integral = float(trapezoid(integrand, times)) if times.size > 1 else 0.0
    return sup_part + integral


def finiteness_bound(C: float, radius: float, lam: float, n: int) -> float:
    """Upper bound ``C R^2 (n+1)! / (R - lam)^(n+2)`` on ``|f|_{lam, n}`` for an
    analytic f with constants ``(C, R)``."""
    if not 0 < lam < radius:
        raise ValueError("need 0 < lambda < radius")
    return C * radius ** 2 * math.factorial(n + 1) / (radius - lam) ** (n + 2)


def table_from_field(f: PhaseField, kcap: int, lcap: int, refine: bool = False,
                     check_padding: bool = True) -> DerivativeTable:
    """Sup norms of spectral derivatives of a grid field.

    With ``refine=True`` each grid maximum is polished by maximising the
    trigonometric interpolant of the derivative around the best grid nodes; the
    plain grid maximum underestimates the sup by O(h^2).  ``check_padding=False``
    is for difference fields whose operands were already checked.
    """
    if kcap < 0 or lcap < 0 or kcap + lcap > DERIVATIVE_CAP:
        raise ValueError(f"kcap + lcap must be <= {DERIVATIVE_CAP}")
    if lcap > 0 and check_padding:
        f.check_padding()
    g = f.grid
    nx, nv = g.nx, g.nv
    fhat = np.fft.fft2(f.values)
    # rounding-level modes would be amplified by |k|^(k+l); drop them once
    fhat[np.abs(fhat) < ROUNDING_FLOOR * np.max(np.abs(fhat))] = 0.0
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=g.x_period / nx)
    kv = 2 * np.pi * np.fft.fftfreq(nv, d=2 * g.v_halfwidth / nv)
    kx[nx // 2] = 0.0
    kv[nv // 2] = 0.0
    out = np.zeros((kcap + 1, lcap + 1))
    for l in range(lcap + 1):
        for k in range(kcap + 1):
            mult = np.outer((1j * kx) ** k, (1j * kv) ** l)
            dkl = np.fft.ifft2(fhat * mult).real
            out[k, l] = _refined_sup(dkl, g) if refine else float(np.max(np.abs(dkl)))
    return DerivativeTable(out, SPECTRAL)


def _refined_sup(values: np.ndarray, grid, candidates: int = 3) -> float:
    from scipy.optimize import minimize

    nx, nv = values.shape
    coef = np.fft.fft2(values) / (nx * nv)
    kx = np.fft.fftfreq(nx, d=1.0 / nx) * 2 * np.pi / grid.x_period
    kv = np.fft.fftfreq(nv, d=1.0 / nv) * 2 * np.pi / (2 * grid.v_halfwidth)
    kx[nx // 2] = 0.0
    kv[nv // 2] = 0.0
    coef[nx // 2, :] = 0.0
    coef[:, nv // 2] = 0.0

    def interp(z):
        ex = np.exp(1j * kx * z[0])
        ev = np.exp(1j * kv * (z[1] + grid.v_halfwidth))
        return float((ex @ coef @ ev).real)

    flat = np.abs(values).ravel()
    best = float(flat.max()) if flat.size else 0.0
    if best == 0.0:
        return 0.0
    for idx in np.argsort(flat)[::-1][:candidates]:
        i, j = divmod(int(idx), nv)
        z0 = np.array([grid.x[i], grid.v[j]])
        sign = 1.0 if values[i, j] >= 0 else -1.0
        res = minimize(lambda z: -sign * interp(z), z0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-16 * best, "maxiter": 400,
                                "initial_simplex": np.array([z0, z0 + [grid.dx / 2, 0], z0 + [0, grid.dv / 2]])})
        best = max(best, -float(res.fun))
    return best


def random_table(rng: np.random.Generator, kmax: int, lmax: int) -> DerivativeTable:
    """``sup(k, l) = c r^(k+l) k! l! / (k+l)!`` with c, r log-uniform.

    ``c`` is drawn from [0.1, 10] and ``r`` from [0.05, 0.5]; every norm of
    the result is finite for all lambda.
    """
    c = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
    r = math.exp(rng.uniform(math.log(0.05), math.log(0.5)))
    k = np.arange(kmax + 1)[:, None]
    l = np.arange(lmax + 1)[None, :]
    binom = np.vectorize(lambda a, b: float(math.comb(a + b, a)))(k, l)
    return DerivativeTable(c * r ** (k + l) / binom, CLOSED_FORM)


def _tail_sum(*values: NormValue) -> float:
    return math.fsum(v.tail_bound for v in values)


@dataclass(frozen=True)
class CheckResult:
    lhs: float
    rhs: float
    passed: bool
    slack: float = 0.0

    def record(self, name: str, lam: float, n: int | None = None) -> dict:
        return {"name": name, "lambda": lam, "n": n, "value": self.lhs,
                "tail_bound": self.slack, "pass": self.passed, "rhs": self.rhs}


def check_lemma_shift(t: DerivativeTable, lam: float, n: int) -> CheckResult:
    """``|d_x f|_{lam, n} <= |f|_{lam, n + 1}``."""
    if t.kmax < 1 or t.max_order < n + 2:
        raise ValueError(f"table caps ({t.kmax}, {t.lmax}) too small for n = {n}")
    lhs = seminorm_lambda_n(t.shift_x(), NormParams(lam, n))
    rhs = seminorm_lambda_n(t, NormParams(lam, n + 1))
    slack = _tail_sum(lhs, rhs)
    return CheckResult(lhs.value, rhs.value, lhs.value <= rhs.value * (1 + 1e-14) + slack, slack)


@dataclass(frozen=True)
class PowerIdentity:
    lhs: float
    rhs: float
    relerr: float
    tail_bound: float


def check_power_identity(t: DerivativeTable, lam: float, q: int) -> PowerIdentity:
    """``||f||_lam^q`` against the q-fold convolution of ``a_k = lam^k sup(k, 0)/k!``."""
    if q < 1:
        raise ValueError("q must be >= 1 for the power identity")
    if t.lmax != 0:
        raise ValueError("power identity applies to x-only tables (lmax = 0)")
    base = norm_lambda(t, NormParams(lam))
    a = np.array([lam ** k * t.sup[k, 0] / math.factorial(k) for k in range(t.kmax + 1)])
    conv = np.array([1.0])
    for _ in range(q):
        conv = np.convolve(conv, a)
    lhs = base.value ** q
    rhs = math.fsum(conv)
    relerr = abs(lhs - rhs) / lhs if lhs != 0 else abs(rhs)
    # (N + tail)^q - N^q bounds the truncation effect on both sides
    tail = (base.value + base.tail_bound) ** q - lhs if math.isfinite(base.tail_bound) else math.inf
    return PowerIdentity(lhs, rhs, relerr, tail)


def _log_factorial(n: int) -> float:
    return math.lgamma(n + 1)


def combinatorial_A(n: int, m: int) -> float:
    """``C(n+m, m) ((n+1)!)^2 ((m+1)!)^2 / ((n+m)!)^2`` evaluated in log space."""
    if n < 0 or m < 0:
        raise ValueError("n and m must be nonnegative")
    lf = _log_factorial
    log_a = (lf(n + m) - lf(n) - lf(m)) + 2 * lf(n + 1) + 2 * lf(m + 1) - 2 * lf(n + m)
    return math.exp(log_a)


def combinatorial_B(n: int, m: int) -> float:
    """``n! m! / (n+m)!`` evaluated in log space."""
    if n < 0 or m < 0:
        raise ValueError("n and m must be nonnegative")
    lf = _log_factorial
    return math.exp(lf(n) + lf(m) - lf(n + m))


def _taylor(t: DerivativeTable, lam: float, shift: int, order: int) -> np.ndarray:
    """Coefficients ``P^(m + shift)(lam) / m!`` for ``m = 0..order`` of ``P(lam) = ||f||_lam``."""
    p = t.diagonal_coefficients()
    out = np.zeros(order + 1)
    for m in range(order + 1):
        j = m + shift
        acc = [math.comb(d, j) * float(math.factorial(j)) / math.factorial(m) * p[d] * lam ** (d - j)
               for d in range(j, p.size) if p[d] != 0.0]
        out[m] = math.fsum(acc)
    return out


def _product_lhs(factors: Sequence[np.ndarray], order: int) -> float:
    prod = np.array([1.0])
    for c in factors:
        prod = np.convolve(prod, c)[: order + 1]
    # sum_n (1/(n!)^2) d^n/dlam^n(product) = sum_n coef_n / n!
    return math.fsum(prod[n] / math.factorial(n) for n in range(prod.size))


@dataclass(frozen=True)
class InequalityReport:
    lemma_I: CheckResult
    lemma_II: CheckResult

    @property
    def passed(self) -> bool:
        return self.lemma_I.passed and self.lemma_II.passed


def check_product_inequalities(t_sigma: DerivativeTable, t_g: DerivativeTable,
                               t_alpha: DerivativeTable, lam: float, q: int) -> InequalityReport:
    """Both sides of the two product inequalities that drive the contraction estimate.

    The lambda-derivatives of the norm products are expanded with the product
    rule, identifying ``d^n/dlam^n ||f||_lam`` with ``|f|_{lam, n}``.  Since the
    truncated norms are polynomials in lambda the series terminate.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    if t_sigma.lmax != 0:
        raise ValueError("sigma must be an x-only table")
    if t_alpha.kmax != 0:
        raise ValueError("alpha must be a v-only table")
    order = (q + 1) * t_sigma.max_order + t_g.max_order + t_alpha.max_order
    s1 = _taylor(t_sigma, lam, 1, order)
    s0 = _taylor(t_sigma, lam, 0, order)
    g1 = _taylor(t_g, lam, 1, order)
    g0 = _taylor(t_g, lam, 0, order)
    a0 = _taylor(t_alpha, lam, 0, order)

    nh_s, sh_s = norm_H(t_sigma, lam), seminorm_H(t_sigma, lam)
    nh_g, sh_g = norm_H(t_g, lam), seminorm_H(t_g, lam)
    nh_a = norm_H(t_alpha, lam)
    flagged = any(v.divergent for v in (nh_s, sh_s, nh_g, sh_g, nh_a))
    if flagged:
        raise DivergentSeriesError("an H-norm in the product inequality diverges at this lambda")

    lhs1 = _product_lhs([s1] + [s0] * q + [g1], order)
    rhs1 = (16 * nh_s.value ** (q + 1) * sh_g.value
            + 16 * sh_s.value * nh_s.value ** q * nh_g.value)
    lhs2 = _product_lhs([s1] + [s0] * q + [a0, g0], order)
    rhs2 = sh_s.value * nh_s.value ** q * nh_a.value * nh_g.value
    tol = 1e-12
    return InequalityReport(
        CheckResult(lhs1, rhs1, lhs1 <= rhs1 * (1 + tol)),
        CheckResult(lhs2, rhs2, lhs2 <= rhs2 * (1 + tol)),
    )
