"""Parameter gate, the linearised solution map and Picard iteration.

The unknown is ``g = f / omega``.  Given a trajectory ``h`` the map ``psi``
forms ``sigma = int omega h dv``, the drift ``a = sigma^q sigma_x``, and solves
the linear transport problem for ``g`` from ``g0 = f0 / omega``.  Distances
between trajectories are measured in the Z-norm of their difference, built
from spectral derivative tables of every stored slice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid

from .analytic_norms import (
    DerivativeTable,
    NormParams,
    lambda_schedule,
    norm_H,
    norm_lambda,
    seminorm_H,
    table_from_closed_form,
    table_from_field,
    z_norm,
)
from .errors import GateError, VblError
from .phase_space import GridSpec, PhaseField, weight_values
from .profiles import alpha as alpha_profile_spec
from .transport import (
    LINEAR,
    NONLINEAR,
    Trajectory,
    constant_extension,
    density_series,
    solve_linear,
)

log = logging.getLogger(__name__)

ALPHA_LMAX = 60
Z_CAPS = (3, 3)
M_STEP = 0.05


@lru_cache(maxsize=None)
def alpha0_at(lambda0: float) -> float:
    """``||alpha||_lambda0`` from the closed-form table of alpha (lmax = 60)."""
    t = table_from_closed_form(alpha_profile_spec(), 0, ALPHA_LMAX)
    return norm_lambda(t, NormParams(lambda0, 0, "reject")).value


@dataclass(frozen=True)
class SolverParams:
    lambda0: float
    K: float
    T: float
    M: float
    q: int = 0
    picard_tol: float = 1e-9
    max_iter: int = 40

    def __post_init__(self):
        for name in ("lambda0", "K", "T", "M", "picard_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.q < 0 or int(self.q) != self.q:
            raise ValueError("q must be a nonnegative integer")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def alpha0(self) -> float:
        return alpha0_at(float(self.lambda0))

    def with_M(self, M: float) -> "SolverParams":
        return SolverParams(self.lambda0, self.K, self.T, M, self.q, self.picard_tol, self.max_iter)

    def as_dict(self) -> dict:
        return {"lambda0": self.lambda0, "K": self.K, "T": self.T, "M": self.M, "q": self.q,
                "alpha0": self.alpha0, "picard_tol": self.picard_tol, "max_iter": self.max_iter}


def kappa(p: SolverParams) -> float:
    """``(1 + qT)(1 + alpha0) M^(q+1) exp(alpha0 M^(q+1) T)``."""
    mq = p.M ** (p.q + 1)
    return (1 + p.q * p.T) * (1 + p.alpha0) * mq * math.exp(p.alpha0 * mq * p.T)


def m_right(p: SolverParams) -> float:
    """``K - lambda0 - 16 M^(q+1)``; must exceed 1."""
    return p.K - p.lambda0 - 16 * p.M ** (p.q + 1)


def f0_size_bound(p: SolverParams) -> float:
    """``M exp(-(16 + alpha0) M^(q+1))``."""
    return p.M * math.exp(-(16 + p.alpha0) * p.M ** (p.q + 1))


@dataclass(frozen=True)
class Condition:
    value: float
    threshold: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.threshold - self.value

    def as_dict(self) -> dict:
        return {"value": self.value, "threshold": self.threshold,
                "margin": self.margin, "pass": self.passed}


@dataclass(frozen=True)
class GateReport:
    condition_parameters: dict
    condition_M_left: Condition
    condition_M_right: Condition
    condition_f0: Condition
    f0_provenance: str = "closed-form"

    @property
    def parameters_pass(self) -> bool:
        return all(c.passed for c in self.condition_parameters.values())

    @property
    def passed(self) -> bool:
        return (self.parameters_pass and self.condition_M_left.passed
                and self.condition_M_right.passed and self.condition_f0.passed)

    def as_dict(self) -> dict:
        return {
            "condition_parameters": {k: c.as_dict() for k, c in self.condition_parameters.items()},
            "condition_M_left": self.condition_M_left.as_dict(),
            "condition_M_right": self.condition_M_right.as_dict(),
            "condition_f0": dict(self.condition_f0.as_dict(), provenance=self.f0_provenance),
            "pass": self.passed,
        }


def _parameter_chain(p: SolverParams) -> dict:
    # margins are threshold - value for "<" conditions, value - threshold for ">"
    lim = p.lambda0 / p.T - 1
    return {
        "0 < T": Condition(0.0, p.T, p.T > 0),
        "T < 1": Condition(p.T, 1.0, p.T < 1),
        "T < lambda0": Condition(p.T, p.lambda0, p.T < p.lambda0),
        "lambda0 < 1": Condition(p.lambda0, 1.0, p.lambda0 < 1),
        "0 < K": Condition(0.0, p.K, p.K > 0),
        "K < lambda0/T - 1": Condition(p.K, lim, p.K < lim),
    }


def gate(p: SolverParams, g0_table: DerivativeTable) -> GateReport:
    """Evaluate every existence condition for ``p`` and ``g0``."""
    k = kappa(p)
    right = m_right(p)
    g0_norm = norm_H(g0_table, p.lambda0)
    size = g0_norm.value + (g0_norm.tail_bound if math.isfinite(g0_norm.tail_bound) else math.inf)
    bound = f0_size_bound(p)
    return GateReport(
        _parameter_chain(p),
        Condition(k, 1.0, k < 1.0),
        # right side is a ">" condition: store it as 1 < value so margin = value - 1
        Condition(1.0, right, right > 1.0),
        Condition(size, bound, size <= bound),
        g0_table.provenance,
    )


def find_M(lambda0: float, K: float, T: float, q: int, step: float = M_STEP,
           max_steps: int = 400) -> float | None:
    """Largest ``M`` on the grid ``{step * j}`` with kappa < 1 and the right side > 1."""
    best = None
    for j in range(1, max_steps + 1):
        p = SolverParams(lambda0, K, T, round(step * j, 12), q)
        if kappa(p) < 1.0 and m_right(p) > 1.0:
            best = round(step * j, 12)
        elif best is not None:
            break
    return best


def g0_from_f0(f0: PhaseField) -> PhaseField:
    """``g0 = f0 / omega = pi (1 + v^2) f0``."""
    return PhaseField(f0.values / weight_values(f0.grid.v), f0.grid)


def f_from_g(g: Trajectory) -> Trajectory:
    w = weight_values(g.grid.v)
    return Trajectory(g.times, tuple(PhaseField(s.values * w, s.grid) for s in g.fields), NONLINEAR)


def psi(h: Trajectory, f0: PhaseField, p: SolverParams, g0: PhaseField | None = None) -> Trajectory:
    """The linearised map: density of ``omega h`` drives the transport of ``g0``."""
    grid = h.grid
    sigma = density_series(h, weight_values(grid.v))
    g0 = g0 if g0 is not None else g0_from_f0(f0)
    return solve_linear(g0, sigma, p.q, grid)


def trajectory_tables(traj: Trajectory, caps: tuple[int, int] = Z_CAPS,
                      check_padding: bool = True) -> list[DerivativeTable]:
    return [table_from_field(f, caps[0], caps[1], check_padding=check_padding) for f in traj.fields]


def z_distance(h1: Trajectory, h2: Trajectory, p: SolverParams,
               caps: tuple[int, int] = Z_CAPS) -> float:
    # padding is relative to the field scale, so check the operands, not the near-cancelling difference
    if caps[1] > 0:
        for f in h1.fields + h2.fields:
            f.check_padding()
    return z_norm(trajectory_tables(h1 - h2, caps, check_padding=False), h1.times, p.lambda0, p.K, p.T)


@dataclass(frozen=True)
class Membership:
    value: float
    tail_bound: float
    passed: bool
    approximate: bool = True

    def as_dict(self) -> dict:
        return {"value": self.value, "tail_bound": self.tail_bound,
                "pass": self.passed, "approximate": self.approximate}


def membership_X(traj: Trajectory, p: SolverParams, caps: tuple[int, int] = Z_CAPS) -> Membership:
    """``sup_t ||h||_{H, lambda0} + int |h|_{H, lambda(t)} dt`` against the radius M."""
    tables = trajectory_tables(traj, caps)
    lam_t = lambda_schedule(traj.times, p.lambda0, p.K)
    if np.any(lam_t <= 0):
        raise ValueError("lambda schedule reaches zero inside the trajectory")
    sup_vals = [norm_H(t, p.lambda0) for t in tables]
    semi_vals = [seminorm_H(t, float(lt)) for t, lt in zip(tables, lam_t)]
    sup_part = max(v.value for v in sup_vals)
    integrand = np.array([v.value for v in semi_vals])
    integral = float(trapezoid(integrand, traj.times)) if len(traj) > 1 else 0.0
    tail = max(v.tail_bound for v in sup_vals) + max(v.tail_bound for v in semi_vals) * p.T
    value = sup_part + integral
    return Membership(value, tail, value <= p.M)


@dataclass
class PicardResult:
    f: Trajectory
    g: Trajectory
    distances: list
    ratios: list
    membership: list
    converged: bool
    forced: bool = False
    diagnosis: str = ""

    @property
    def iterations(self) -> int:
        return len(self.distances)

    def iterations_report(self) -> list[dict]:
        out = []
        for k, d in enumerate(self.distances):
            out.append({"k": k, "d_k": d, "ratio": self.ratios[k - 1] if k > 0 else None,
                        "membership": self.membership[k].as_dict()})
        return out


def picard(f0: PhaseField, p: SolverParams, grid: GridSpec | None = None,
           h0: Trajectory | None = None, gate_report: GateReport | None = None,
           force: bool = False) -> PicardResult:
    """Iterate ``h_{k+1} = psi(h_k)`` until the Z-distance drops below ``picard_tol``."""
    grid = grid or f0.grid
    if gate_report is not None and not gate_report.passed:
        if not force:
            raise GateError("gate conditions fail; pass force=True to iterate anyway")
        log.warning("iterating with gate-failing parameters")
    f0.check_padding()
    g0 = g0_from_f0(f0)
    g0.check_padding()
    h = h0 if h0 is not None else constant_extension(g0, grid)
    distances, ratios, members = [], [], []
    converged = False
    for _ in range(p.max_iter):
        h_next = psi(h, f0, p, g0)
        d = z_distance(h_next, h, p)
        if distances:
            ratios.append(d / distances[-1] if distances[-1] > 0 else 0.0)
        distances.append(d)
        members.append(membership_X(h_next, p))
        h = h_next
        if d < p.picard_tol:
            converged = True
            break
    diagnosis = ""
    if not converged:
        diagnosis = ("no convergence within max_iter; ratio history "
                     f"{[round(r, 4) for r in ratios]} suggests the gate is violated "
                     "or the grid is under-resolved")
    return PicardResult(f_from_g(h), h, distances, ratios, members, converged,
                        forced=bool(gate_report is not None and not gate_report.passed), diagnosis=diagnosis)


@dataclass(frozen=True)
class ContractionResult:
    measured: float
    bound: float
    allowance: float
    distance_in: float
    distance_out: float

    @property
    def passed(self) -> bool:
        return self.measured <= self.bound + self.allowance

    def as_dict(self) -> dict:
        return {"measured": self.measured, "bound": self.bound, "allowance": self.allowance,
                "distance_in": self.distance_in, "distance_out": self.distance_out,
                "pass": self.passed}


class DegenerateDistanceError(VblError, ValueError):
    """Two trajectories are too close for a meaningful contraction quotient."""


MIN_DISTANCE = 1e-6


def _quotient(h1: Trajectory, h2: Trajectory, f0: PhaseField, p: SolverParams) -> tuple[float, float, float]:
    g0 = g0_from_f0(f0)
    din = z_distance(h1, h2, p)
    if din < MIN_DISTANCE:
        raise DegenerateDistanceError(f"input Z-distance {din:.3e} below {MIN_DISTANCE}")
    dout = z_distance(psi(h1, f0, p, g0), psi(h2, f0, p, g0), p)
    return dout / din, din, dout


def contraction_rate(h1: Trajectory, h2: Trajectory, f0: PhaseField, p: SolverParams,
                     allowance: float | None = None) -> ContractionResult:
    """Measured ``Z(psi h1 - psi h2) / Z(h1 - h2)`` against kappa.

    Without an explicit allowance, the quotient is recomputed on the grid coarsened
    by two in x, v and t and twice the change is used.
    """
    measured, din, dout = _quotient(h1, h2, f0, p)
    if allowance is None:
        coarse_f0 = PhaseField(f0.values[::2, ::2], f0.grid.coarsened())
        coarse, _, _ = _quotient(h1.coarsened(), h2.coarsened(), coarse_f0, p)
        allowance = 2.0 * abs(measured - coarse)
    return ContractionResult(measured, kappa(p), allowance, din, dout)


def random_admissible_trajectory(g0: PhaseField, rng: np.random.Generator,
                                 amplitude: float, grid: GridSpec | None = None) -> Trajectory:
    """``g0`` plus a smooth random perturbation that decays in v and varies in t.

    The perturbation is ``amplitude * exp(-v^2/2) * P(x, v) * (1 + c t / T)`` with
    ``P`` a random combination of low x-modes times low-degree v-polynomials.
    """
    grid = grid or g0.grid
    X, V = grid.mesh()
    L = grid.x_period
    shape = np.zeros_like(X)
    for m in range(3):
        for deg in range(3):
            a, b = rng.normal(size=2)
            shape += (a * np.cos(2 * np.pi * m * X / L) + b * np.sin(2 * np.pi * m * X / L)) * V ** deg / (1 + deg)
    shape *= np.exp(-0.5 * V * V)
    shape /= np.max(np.abs(shape))
    c = rng.uniform(-1.0, 1.0)
    T = grid.t_final
    fields = tuple(PhaseField(g0.values + amplitude * (1 + c * t / T) * shape, grid) for t in grid.times)
    return Trajectory(grid.times, fields, LINEAR)
