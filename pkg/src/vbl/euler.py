"""Smooth 1-D compressible Euler flow and the monokinetic weak-form residual.

The isentropic system with pressure ``rho^gamma / gamma`` is advanced in
conservative variables ``(rho, m = rho u)`` by RK4 on a Fourier
semi-discretisation.  Substituting ``f = rho delta(v - u)`` into the weak
form of the kinetic equation turns every phase-space integral into an x
integral evaluated at ``v = u(t, x)``; the residual of that identity measures
how well an Euler solution is also a kinetic one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BreakdownError, CorruptFieldError
from .phase_space import PhaseField, moment_zero, spectral_derivative
from .transport import spectrum_resolved

SENTINEL = 0.1


@dataclass(frozen=True)
class EulerState:
    rho: np.ndarray
    u: np.ndarray
    gamma: float
    x_period: float = 2.0 * math.pi
    t: float = 0.0

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float, copy=True)
        u = np.array(self.u, dtype=float, copy=True)
        if rho.ndim != 1 or rho.shape != u.shape:
            raise ValueError("rho and u must be vectors of equal length")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(u))):
            raise CorruptFieldError("Euler state contains non-finite entries")
        if np.any(rho <= 0):
            raise ValueError("density must stay positive")
        if self.gamma < 2:
            raise ValueError("gamma = q + 2 must be >= 2")
        rho.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "u", u)

    @property
    def nx(self) -> int:
        return self.rho.size

    @property
    def dx(self) -> float:
        return self.x_period / self.nx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def q(self) -> int:
        return int(round(self.gamma - 2))

    @property
    def resolved(self) -> bool:
        return spectrum_resolved(self.rho) and spectrum_resolved(self.u)

    def mass(self) -> float:
        return float(self.rho.sum() * self.dx)

    def momentum(self) -> float:
        return float((self.rho * self.u).sum() * self.dx)


def _ddx(a: np.ndarray, L: float) -> np.ndarray:
    return spectral_derivative(a, 1, L)


def _rhs(rho: np.ndarray, m: np.ndarray, gamma: float, L: float) -> tuple[np.ndarray, np.ndarray]:
    u = m / rho
    return -_ddx(m, L), -_ddx(m * u + rho ** gamma / gamma, L)


def euler_step(s: EulerState, dt: float) -> EulerState:
    """One RK4 step; refuses steps that violate CFL or the smoothness sentinel."""
    ux = _ddx(s.u, s.x_period)
    if np.max(np.abs(ux)) * dt >= SENTINEL:
        raise BreakdownError(
            f"classical solution breakdown approaching at t={s.t:.4g}: "
            f"max|u_x| dt = {np.max(np.abs(ux)) * dt:.3g} >= {SENTINEL}"
        )
    speed = np.max(np.abs(s.u)) + np.max(s.rho ** ((s.gamma - 1) / 2))
    if speed * dt > s.dx:
        raise ValueError(f"CFL violated: (max|u| + max c) dt = {speed * dt:.3g} > dx = {s.dx:.3g}")
    L, g = s.x_period, s.gamma
    r0, m0 = s.rho, s.rho * s.u
    k1 = _rhs(r0, m0, g, L)
    k2 = _rhs(r0 + dt / 2 * k1[0], m0 + dt / 2 * k1[1], g, L)
    k3 = _rhs(r0 + dt / 2 * k2[0], m0 + dt / 2 * k2[1], g, L)
    k4 = _rhs(r0 + dt * k3[0], m0 + dt * k3[1], g, L)
    rho = r0 + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    m = m0 + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if np.any(rho <= 0):
        raise BreakdownError("density lost positivity")
    return EulerState(rho, m / rho, g, L, s.t + dt)


def euler_run(s0: EulerState, dt: float, nsteps: int) -> list[EulerState]:
    out = [s0]
    for _ in range(nsteps):
        out.append(euler_step(out[-1], dt))
    return out


def energy_total(state, q: int) -> float:
    """``int rho u^2/2 + rho^(q+2)/((q+1)(q+2))`` for an :class:`EulerState`; for a
    :class:`PhaseField` the kinetic part is ``int int v^2 f / 2``."""
    c = 1.0 / ((q + 1) * (q + 2))
    if isinstance(state, EulerState):
        return float(np.sum(0.5 * state.rho * state.u ** 2 + c * state.rho ** (q + 2)) * state.dx)
    if isinstance(state, PhaseField):
        g = state.grid
        rho = moment_zero(state).values
        kin = 0.5 * float(np.sum(state.values * g.v ** 2)) * g.dx * g.dv
        return kin + c * float(np.sum(rho ** (q + 2))) * g.dx
    raise TypeError(f"cannot compute energy of {type(state).__name__}")


Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """Smooth ``phi(x, v)``, periodic in x, with its partial derivatives."""

    name: str
    phi: Fn
    phi_x: Fn
    phi_v: Fn

    __test__ = False  # keep pytest from collecting this class

    def spot_check(self, rng: np.random.Generator, npoints: int = 12, h: float = 1e-3,
                   x_period: float = 2.0 * math.pi, v_range: float = 3.0) -> float:
        """Largest mismatch between the derivative closures and 4th-order differences."""
        x = rng.uniform(0, x_period, npoints)
        v = rng.uniform(-v_range, v_range, npoints)

        def fd(shift_x, shift_v):
            return (-self.phi(x + 2 * shift_x, v + 2 * shift_v) + 8 * self.phi(x + shift_x, v + shift_v)
                    - 8 * self.phi(x - shift_x, v - shift_v) + self.phi(x - 2 * shift_x, v - 2 * shift_v)) / (12 * h)

        ex = np.max(np.abs(fd(h, 0.0) - self.phi_x(x, v)))
        ev = np.max(np.abs(fd(0.0, h) - self.phi_v(x, v)))
        return float(max(ex, ev))


def _bump(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``exp(-1/(1 - s^2))`` on ``|s| < 1`` and its derivative."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    b = np.zeros_like(s)
    db = np.zeros_like(s)
    si = s[inside]
    d = 1.0 - si * si
    b[inside] = np.exp(-1.0 / d)
    db[inside] = b[inside] * (-2.0 * si / d ** 2)
    return b, db


def _mode_bump(name: str, mode: int, phase: float, width: float, centre: float = 0.0,
               v_power: int = 0, offset: float = 0.0, L: float = 2 * math.pi) -> TestFunction:
    k = 2 * math.pi * mode / L

    def xpart(x):
        return offset + np.cos(k * x + phase)

    def dxpart(x):
        return -k * np.sin(k * x + phase)

    def vpart(v):
        b, db = _bump((v - centre) / width)
        return v ** v_power * b, v_power * v ** max(v_power - 1, 0) * b + v ** v_power * db / width

    return TestFunction(
        name,
        lambda x, v: xpart(x) * vpart(v)[0],
        lambda x, v: dxpart(x) * vpart(v)[0],
        lambda x, v: xpart(x) * vpart(v)[1],
    )


def test_function_library(x_period: float = 2.0 * math.pi) -> list[TestFunction]:
    """Five low x-modes times compactly supported v-bumps."""
    L = x_period
    return [
        _mode_bump("cos1_bump2", 1, 0.0, 2.0, L=L),
        _mode_bump("sin1_bump2", 1, -math.pi / 2, 2.0, L=L),
        _mode_bump("cos2_bump1.5_shift", 2, 0.3, 1.5, centre=0.2, L=L),
        _mode_bump("cos1_vbump2", 1, 0.7, 2.0, v_power=1, L=L),
        _mode_bump("offset_cos3_bump3", 3, 0.0, 3.0, offset=1.0, L=L),
    ]


test_function_library.__test__ = False  # keep pytest from collecting it


def v_independent(mode: int = 1, x_period: float = 2.0 * math.pi) -> TestFunction:
    k = 2 * math.pi * mode / x_period
    return TestFunction(
        f"cos{mode}_only",
        lambda x, v: np.cos(k * x) + 0 * v,
        lambda x, v: -k * np.sin(k * x) + 0 * v,
        lambda x, v: np.zeros(np.broadcast(x, v).shape),
    )


def _spatial_terms(s: EulerState, q: int, phi: TestFunction) -> tuple[float, float]:
    x, rho, u = s.x, s.rho, s.u
    rho_x = _ddx(rho, s.x_period)
    a = float(np.sum(rho * phi.phi(x, u)) * s.dx)
    b = float(np.sum(-rho * u * phi.phi_x(x, u) + rho ** q * rho_x * rho * phi.phi_v(x, u)) * s.dx)
    return a, b


def weak_residual_series(traj: Sequence[EulerState], q: int, phi: TestFunction) -> np.ndarray:
    """``R(t)`` at every slice with a full 4th-order central stencil around it."""
    if len(traj) < 5:
        raise ValueError("need at least 5 stored slices for the time stencil")
    for s in traj:
        if abs(s.gamma - (q + 2)) > 1e-12:
            raise ValueError(f"trajectory gamma {s.gamma} does not match q + 2 = {q + 2}")
        if not s.resolved:
            raise BreakdownError(f"state at t={s.t:.4g} is not spectrally resolved")
    times = np.array([s.t for s in traj])
    dts = np.diff(times)
    if np.ptp(dts) > 1e-9 * dts.mean():
        raise ValueError("slices must be uniformly spaced in time")
    dt = float(dts.mean())
    terms = np.array([_spatial_terms(s, q, phi) for s in traj])
    A, Bt = terms[:, 0], terms[:, 1]
    dA = (-A[4:] + 8 * A[3:-1] - 8 * A[1:-3] + A[:-4]) / (12 * dt)
    return dA + Bt[2:-2]


def weak_residual(traj: Sequence[EulerState], q: int, phi: TestFunction) -> float:
    """``max_t |R(t)|`` of the monokinetic weak form along an Euler trajectory."""
    return float(np.max(np.abs(weak_residual_series(traj, q, phi))))


def acoustic_pulse(nx: int, gamma: float, amplitude: float = 0.1, x_period: float = 2.0 * math.pi,
                   mode: int = 1) -> EulerState:
    """Right-moving small-amplitude pulse around ``rho = 1, u = 0``."""
    x = np.arange(nx) * x_period / nx
    k = 2 * math.pi * mode / x_period
    rho = 1.0 + amplitude * np.cos(k * x)
    c0 = 1.0  # sound speed rho^((gamma-1)/2) at rho = 1
    u = c0 * amplitude * np.cos(k * x)
    return EulerState(rho, u, gamma, x_period)


def mode_frequency(times: np.ndarray, values: Sequence[np.ndarray], mode: int = 1) -> float:
    """Angular frequency of the real part of Fourier mode ``mode`` from its zero crossings."""
    amp = np.array([np.fft.rfft(np.asarray(v))[mode].real for v in values])
    t = np.asarray(times, dtype=float)
    idx = np.where(np.sign(amp[:-1]) * np.sign(amp[1:]) < 0)[0]
    if idx.size < 2:
        raise ValueError("fewer than two zero crossings; run longer")
    crossings = t[idx] - amp[idx] * (t[idx + 1] - t[idx]) / (amp[idx + 1] - amp[idx])
    return float(math.pi / np.mean(np.diff(crossings)))
