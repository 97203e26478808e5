"""Backward semi-Lagrangian transport in phase space.

Two equations share one integrator:

* the self-consistent kinetic equation ``f_t + v f_x - a[f] f_v = 0`` with
  ``a = rho^q rho_x`` and ``rho = int f dv``;
* the linear problem ``g_t + v g_x - a (g_v + alpha g) = S`` in which the
  drift ``a = sigma^q sigma_x`` comes from a prescribed density history.

Characteristics ``x' = v, v' = -a(t, x)`` are traced backward over one step
with RK4.  Along them ``dg/ds = a alpha g + S``, which is integrated with the
same RK4 stages as an augmented system, so one step reads
``g_new = exp(B) g_old(foot) + J``.  Off-grid values come from cubic
B-spline interpolation, periodic in both directions; anything whose foot lands
past ``|v| = V`` is zero by the decay padding.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import CharacteristicEscapeError
from .phase_space import (
    DensityField,
    GridSpec,
    PhaseField,
    alpha_values,
    ddx,
    moment_first,
    moment_zero,
)

NONLINEAR = "nonlinear-f"
LINEAR = "linear-g"
RESOLUTION_FRACTION = 1e-6
NOISE_FLOOR = 1e-13
DEFAULT_ALLOWANCE_CONSTANT = 1.0
VBL1_MAGIC = b"VBL1"

Source = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def spectrum_resolved(values: np.ndarray, fraction: float = RESOLUTION_FRACTION) -> bool:
    """True if the top third of the Fourier spectrum carries less than ``fraction``
    of the (mean-free) energy, or the signal is at rounding level."""
    vhat = np.fft.rfft(values)
    power = np.abs(vhat[1:]) ** 2
    total = power.sum()
    scale = max(float(np.max(np.abs(values))), 1.0)
    if total == 0.0 or math.sqrt(total) / values.size < NOISE_FLOOR * scale:
        return True
    cut = (2 * power.size) // 3
    return float(power[cut:].sum()) < fraction * float(total)


@dataclass(frozen=True)
class DriftField:
    """Drift ``a(x_i)`` at a time stamp, with its resolution flag."""

    values: np.ndarray
    time: float
    grid: GridSpec = field(repr=False)
    resolved: bool = True

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.shape != (self.grid.nx,) or not np.all(np.isfinite(arr)):
            raise ValueError("drift must be a finite vector on the x grid")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def drift_from_density(sigma: DensityField, q: int, form: str = "conservative",
                       time: float = 0.0) -> DriftField:
    """``sigma^q sigma_x`` (direct) or ``(sigma^(q+1))_x / (q+1)`` (conservative)."""
    if q < 0:
        raise ValueError("q must be nonnegative")
    if form == "direct":
        a = sigma.values ** q * ddx(sigma).values
    elif form == "conservative":
        a = ddx(DensityField(sigma.values ** (q + 1), sigma.grid)).values / (q + 1)
    else:
        raise ValueError(f"unknown drift form {form!r}")
    return DriftField(a, time, sigma.grid, spectrum_resolved(sigma.values))


@dataclass(frozen=True)
class DensitySeries:
    """Density slices on a uniform time grid, linearly interpolated in time."""

    times: np.ndarray
    slices: tuple

    def __post_init__(self):
        t = np.array(self.times, dtype=float, copy=True)
        if t.ndim != 1 or t.size != len(self.slices) or t.size == 0:
            raise ValueError("one density slice per time is required")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "slices", tuple(self.slices))

    def at(self, t: float) -> DensityField:
        times = self.times
        if times.size == 1:
            return self.slices[0]
        span = times[-1] - times[0]
        if t < times[0] - 1e-12 * span or t > times[-1] + 1e-12 * span:
            raise ValueError(f"time {t} outside the stored density history")
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
        w = (t - times[j]) / (times[j + 1] - times[j])
        if w <= 0.0:
            return self.slices[j]
        if w >= 1.0:
            return self.slices[j + 1]
        lo, hi = self.slices[j].values, self.slices[j + 1].values
        return DensityField((1.0 - w) * lo + w * hi, self.slices[j].grid)

    @classmethod
    def constant(cls, sigma: DensityField, grid: GridSpec) -> "DensitySeries":
        return cls(grid.times, tuple(sigma for _ in grid.times))


@dataclass(frozen=True)
class Trajectory:
    """Fields at the times ``0, dt, ..., T``."""

    times: np.ndarray
    fields: tuple
    kind: str
    under_resolved_steps: int = 0

    def __post_init__(self):
        t = np.array(self.times, dtype=float, copy=True)
        if t.ndim != 1 or t.size != len(self.fields) or t.size == 0:
            raise ValueError("one field per time is required")
        if self.kind not in (NONLINEAR, LINEAR):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
                raise ValueError("trajectory times must be uniformly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    @property
    def final(self) -> PhaseField:
        return self.fields[-1]

    def __len__(self) -> int:
        return len(self.fields)

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        if len(other) != len(self) or not np.allclose(other.times, self.times):
            raise ValueError("trajectories have different time grids")
        return Trajectory(self.times, tuple(a - b for a, b in zip(self.fields, other.fields)), self.kind)

    def map(self, fn: Callable[[PhaseField], PhaseField], kind: str | None = None) -> "Trajectory":
        return Trajectory(self.times, tuple(fn(f) for f in self.fields), kind or self.kind)

    def coarsened(self) -> "Trajectory":
        """Every other node in x, v and t, on :meth:`GridSpec.coarsened`."""
        g = self.grid.coarsened()
        fields = tuple(PhaseField(f.values[::2, ::2], g) for f in self.fields[::2])
        return Trajectory(self.times[::2], fields, self.kind)

    def sups(self) -> np.ndarray:
        return np.array([f.sup() for f in self.fields])


def _periodic_coeffs(values: np.ndarray) -> np.ndarray:
    return ndimage.spline_filter(values, order=3, mode="grid-wrap")


class _Drift:
    """Drift ``a(s, x)`` on the x grid, evaluated off-grid by a periodic cubic spline."""

    def __init__(self, grid: GridSpec, at_time: Callable[[float], DriftField]):
        self.grid = grid
        self._at = at_time
        self._cache: dict[float, tuple[np.ndarray, DriftField]] = {}

    def field_at(self, s: float) -> DriftField:
        if s not in self._cache:
            d = self._at(s)
            self._cache[s] = (_periodic_coeffs(d.values), d)
        return self._cache[s][1]

    def __call__(self, s: float, x: np.ndarray) -> np.ndarray:
        self.field_at(s)
        coeffs = self._cache[s][0]
        pos = (x / self.grid.dx).ravel()
        out = ndimage.map_coordinates(coeffs, [pos], order=3, mode="grid-wrap", prefilter=False)
        return out.reshape(x.shape)


def _check_cfl(grid: GridSpec, amax: float, dt: float) -> None:
    vmax = grid.v_halfwidth
    if vmax * dt > grid.x_period / 4:
        raise ValueError(f"step too large: max|v| dt = {vmax * dt:.3g} exceeds L/4")
    if amax * dt > grid.v_halfwidth / 4:
        raise ValueError(f"step too large: max|a| dt = {amax * dt:.3g} exceeds V/4")


def _sl_step(values: np.ndarray, grid: GridSpec, drift: _Drift, t0: float, dt: float,
             with_alpha: bool, source: Source | None) -> np.ndarray:
    """One backward step from ``t0 + dt`` to ``t0``; returns values at ``t0 + dt``."""
    X, Vv = grid.mesh()
    t1 = t0 + dt
    need_aug = with_alpha or source is not None

    def rhs(s, x, v, B):
        a = drift(s, x)
        dx_, dv_ = v, -a
        if not need_aug:
            return dx_, dv_, None, None
        dB = -a * alpha_values(v) if with_alpha else np.zeros_like(x)
        dJ = -np.exp(B) * source(s, x, v) if source is not None else None
        return dx_, dv_, dB, dJ

    h = -dt
    x, v = X, Vv
    B = np.zeros_like(X)
    J = np.zeros_like(X)
    stages = []
    xs, vs, Bs = x, v, B
    for c, s in ((0.0, t1), (0.5, t1 - dt / 2), (0.5, t1 - dt / 2), (1.0, t0)):
        if stages:
            kx, kv, kB, _ = stages[-1]
            xs = x + c * h * kx
            vs = v + c * h * kv
            Bs = B + c * h * kB if kB is not None else B
        stages.append(rhs(s, xs, vs, Bs))
    w = (1.0, 2.0, 2.0, 1.0)
    xf = x + h / 6 * sum(wi * st[0] for wi, st in zip(w, stages))
    vf = v + h / 6 * sum(wi * st[1] for wi, st in zip(w, stages))
    if with_alpha:
        B = B + h / 6 * sum(wi * st[2] for wi, st in zip(w, stages))
    if source is not None:
        J = J + h / 6 * sum(wi * st[3] for wi, st in zip(w, stages))

    V = grid.v_halfwidth
    worst = float(np.max(np.abs(vf)))
    if worst > V + grid.v_margin:
        raise CharacteristicEscapeError(
            f"characteristic foot at |v| = {worst:.4g} beyond V + margin = {V + grid.v_margin:.4g}; "
            "enlarge the velocity box"
        )
    coeffs = _periodic_coeffs(values)
    interp = ndimage.map_coordinates(coeffs, [xf / grid.dx, (vf + V) / grid.dv],
                                     order=3, mode="grid-wrap", prefilter=False)
    interp[np.abs(vf) > V] = 0.0
    out = interp * np.exp(B) if with_alpha else interp
    if source is not None:
        out = out + J
    return out


def advance_linear(g: PhaseField, sigma_at: Callable[[float], DensityField], q: int, dt: float,
                   t0: float = 0.0, alpha_term: bool = True, source: Source | None = None,
                   form: str = "conservative") -> PhaseField:
    """One step of ``g_t + v g_x - a (g_v + alpha g) = S`` with ``a = sigma^q sigma_x``."""
    grid = g.grid
    drift = _Drift(grid, lambda s: drift_from_density(sigma_at(s), q, form, s))
    amax = max(drift.field_at(s).sup() for s in (t0, t0 + dt / 2, t0 + dt))
    _check_cfl(grid, amax, dt)
    return PhaseField(_sl_step(g.values, grid, drift, t0, dt, alpha_term, source), grid)


def solve_linear(g0: PhaseField, sigma_series: DensitySeries, q: int, grid: GridSpec | None = None,
                 alpha_term: bool = True, source: Source | None = None) -> Trajectory:
    """Repeated :func:`advance_linear` over the grid's time window."""
    grid = grid or g0.grid
    times = grid.times
    if sigma_series.times[0] > 1e-14 or sigma_series.times[-1] < times[-1] * (1 - 1e-12):
        raise ValueError("density history does not cover [0, T]")
    fields = [g0]
    flagged = 0
    g = g0
    for n in range(grid.nsteps):
        t0 = float(times[n])
        g = advance_linear(g, sigma_series.at, q, grid.dt, t0, alpha_term, source)
        if not spectrum_resolved(sigma_series.at(t0).values):
            flagged += 1
        fields.append(g)
    return Trajectory(times, tuple(fields), LINEAR, flagged)


def solve_nonlinear(f0: PhaseField, q: int, grid: GridSpec | None = None,
                    form: str = "conservative") -> Trajectory:
    """Self-consistent kinetic solve with a half-step predictor for the density."""
    grid = grid or f0.grid
    f0.check_padding()
    dt = grid.dt
    f = f0
    fields = [f0]
    flagged = 0
    for n in range(grid.nsteps):
        t0 = float(grid.times[n])
        a_now = drift_from_density(moment_zero(f), q, form, t0)
        flagged += not a_now.resolved
        _check_cfl(grid, a_now.sup(), dt)
        pred = _Drift(grid, lambda s, d=a_now: d)
        half = PhaseField(_sl_step(f.values, grid, pred, t0, dt / 2, False, None), grid)
        a_mid = drift_from_density(moment_zero(half), q, form, t0 + dt / 2)
        corr = _Drift(grid, lambda s, d=a_mid: d)
        f = PhaseField(_sl_step(f.values, grid, corr, t0, dt, False, None), grid)
        fields.append(f)
    return Trajectory(grid.times, tuple(fields), NONLINEAR, flagged)


def constant_extension(g0: PhaseField, grid: GridSpec | None = None, kind: str = LINEAR) -> Trajectory:
    grid = grid or g0.grid
    return Trajectory(grid.times, tuple(g0 for _ in grid.times), kind)


def free_transport_extension(g0: PhaseField, grid: GridSpec | None = None) -> Trajectory:
    """Exact free streaming ``g0(x - v t, v)`` via Fourier shifts in x."""
    grid = grid or g0.grid
    k = 2 * np.pi * np.fft.fftfreq(grid.nx, d=grid.dx)
    k[grid.nx // 2] = 0.0
    ghat = np.fft.fft(g0.values, axis=0)
    fields = []
    for t in grid.times:
        phase = np.exp(-1j * np.outer(k, grid.v) * t)
        fields.append(PhaseField(np.fft.ifft(ghat * phase, axis=0).real, grid))
    return Trajectory(grid.times, tuple(fields), LINEAR)


def density_series(traj: Trajectory, weight: np.ndarray | None = None) -> DensitySeries:
    """``int w h(t) dv`` per slice; ``weight`` is a v-profile (default 1)."""
    out = []
    for f in traj.fields:
        vals = f.values * weight if weight is not None else f.values
        out.append(moment_zero(PhaseField(vals, f.grid)))
    return DensitySeries(traj.times, tuple(out))


def kinetic_energy(f: PhaseField, q: int) -> float:
    """``int int v^2 f / 2 + int rho^(q+2) / ((q+1)(q+2))``."""
    g = f.grid
    rho = moment_zero(f).values
    kin = 0.5 * float(np.sum(f.values * g.v ** 2)) * g.dx * g.dv
    pot = float(np.sum(rho ** (q + 2))) * g.dx / ((q + 1) * (q + 2))
    return kin + pot


def mass(f: PhaseField) -> float:
    return f.integral()


def momentum(f: PhaseField) -> float:
    return moment_first(f).integral()


def gronwall_bound(g0_sup: float, sigma_series: DensitySeries, q: int, grid: GridSpec) -> np.ndarray:
    """``||g0|| exp(int max|a| max|alpha| ds)`` on the time grid (trapezoid rule)."""
    amax = np.array([drift_from_density(sigma_series.at(float(t)), q).sup() for t in grid.times])
    alpha_max = float(np.max(np.abs(alpha_values(grid.v))))
    increments = 0.5 * (amax[1:] + amax[:-1]) * grid.dt * alpha_max
    return g0_sup * np.exp(np.concatenate([[0.0], np.cumsum(increments)]))


@dataclass(frozen=True)
class MaxPrincipleReport:
    margin: float
    allowance: float
    per_step: np.ndarray

    @property
    def passed(self) -> bool:
        return self.margin <= 0.0


def max_principle_residual(traj: Trajectory, G_sup: Sequence[float] | None = None,
                           c: float = DEFAULT_ALLOWANCE_CONSTANT) -> MaxPrincipleReport:
    """Worst ``||g_{n+1}|| - ||g_n|| - int G`` minus the interpolation allowance.

    The allowance is ``c h^4 ||g_n||`` with ``h = max(dx, dv)``.
    """
    sups = traj.sups()
    if G_sup is None:
        G = np.zeros_like(sups)
    else:
        G = np.asarray(G_sup, dtype=float)
        if G.shape != sups.shape:
            raise ValueError("G_sup needs one value per stored time")
    if sups.size < 2:
        return MaxPrincipleReport(-0.0, 0.0, np.zeros(0))
    grid = traj.grid
    dt = float(traj.times[1] - traj.times[0])
    forcing = 0.5 * (G[1:] + G[:-1]) * dt
    h = max(grid.dx, grid.dv)
    allowance = c * h ** 4 * sups[:-1]
    excess = sups[1:] - sups[:-1] - forcing - allowance
    return MaxPrincipleReport(float(excess.max()), float(allowance.max()), excess)


def export_csv(traj: Trajectory, path: str | Path, index: int = -1) -> None:
    """Write one snapshot as ``x,v,value`` rows after a ``# t=...`` comment and a column header."""
    f = traj.fields[index]
    X, V = f.grid.mesh()
    data = np.column_stack([X.ravel(), V.ravel(), f.values.ravel()])
    with open(path, "w") as fh:
        fh.write(f"# t={traj.times[index]:.17g}\nx,v,value\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def export_binary(traj: Trajectory, path: str | Path) -> None:
    """``VBL1`` format: magic, uint32 ntimes/nx/nv, float64 L and V, the times,
    then every snapshot row-major (x outer, v inner), all little-endian."""
    g = traj.grid
    with open(path, "wb") as fh:
        fh.write(VBL1_MAGIC)
        fh.write(struct.pack("<3I2d", len(traj), g.nx, g.nv, g.x_period, g.v_halfwidth))
        fh.write(np.asarray(traj.times, dtype="<f8").tobytes())
        for f in traj.fields:
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def import_binary(path: str | Path, kind: str = LINEAR) -> Trajectory:
    raw = Path(path).read_bytes()
    if raw[:4] != VBL1_MAGIC:
        raise ValueError("not a VBL1 file")
    nt, nx, nv, L, V = struct.unpack_from("<3I2d", raw, 4)
    off = 4 + struct.calcsize("<3I2d")
    times = np.frombuffer(raw, "<f8", nt, off)
    off += 8 * nt
    data = np.frombuffer(raw, "<f8", nt * nx * nv, off).reshape(nt, nx, nv)
    dt = float(times[1] - times[0]) if nt > 1 else 1.0
    grid = GridSpec(nx, nv, L, V, dt, float(times[-1]) if nt > 1 else 1.0)
    return Trajectory(times, tuple(PhaseField(d, grid) for d in data), kind)
