"""Phase-space grids, fields, velocity moments and spectral derivatives.

The spatial domain is the torus ``[0, L)`` and the velocity box ``[-V, V)`` is
also treated as periodic; this is legitimate because every field carried by the
solvers decays to (numerically) zero at ``v = +-V``.  Arrays are indexed
``values[i, j] = f(x_i, v_j)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import CorruptFieldError, PaddingError

PADDING_THRESHOLD = 1e-12
DERIVATIVE_CAP = 8


def fft_workers() -> int:
    """Data-parallel width for FFTs, capped by ``VBL_THREADS``."""
    raw = os.environ.get("VBL_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on ``[0, L) x [-V, V)`` plus the time grid ``0, dt, ..., T``."""

    nx: int
    nv: int
    x_period: float = 2.0 * math.pi
    v_halfwidth: float = 16.0
    dt: float = 1e-3
    t_final: float = 1e-2

    def __post_init__(self):
        for name in ("nx", "nv"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or not _is_pow2(int(n)) or n < 16:
                raise ValueError(f"{name} must be a power of two >= 16, got {n!r}")
        if not self.x_period > 0 or not self.v_halfwidth > 0:
            raise ValueError("x_period and v_halfwidth must be positive")
        if not (self.dt > 0 and self.t_final > 0):
            raise ValueError("dt and t_final must be positive")
        if self.dt > self.t_final * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds t_final={self.t_final}")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
            raise ValueError(f"t_final/dt = {ratio!r} is not an integer")

    @property
    def dx(self) -> float:
        return self.x_period / self.nx

    @property
    def dv(self) -> float:
        return 2.0 * self.v_halfwidth / self.nv

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def v(self) -> np.ndarray:
        # node nv/2 is exactly v = 0; v_{nv-j} = -v_j for 1 <= j < nv
        return (np.arange(self.nv) - self.nv // 2) * self.dv

    @property
    def nsteps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nsteps + 1) * self.dt

    @property
    def v_margin(self) -> float:
        """How far a characteristic foot may leave ``[-V, V]`` before a run aborts."""
        return 0.05 * self.v_halfwidth

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.v, indexing="ij")

    def coarsened(self) -> "GridSpec":
        """Every other node in x, v and time."""
        if self.nsteps % 2:
            raise ValueError("coarsening needs an even number of time steps")
        return GridSpec(self.nx // 2, self.nv // 2, self.x_period, self.v_halfwidth,
                        2 * self.dt, self.t_final)

    def refined(self) -> "GridSpec":
        return GridSpec(self.nx * 2, self.nv * 2, self.x_period, self.v_halfwidth,
                        self.dt / 2, self.t_final)

    def with_time(self, dt: float, t_final: float) -> "GridSpec":
        return GridSpec(self.nx, self.nv, self.x_period, self.v_halfwidth, dt, t_final)


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PhaseField:
    """Distribution values ``f(x_i, v_j)`` on a :class:`GridSpec`."""

    values: np.ndarray
    grid: GridSpec = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.shape != (self.grid.nx, self.grid.nv):
            raise ValueError(f"shape {arr.shape} does not match grid ({self.grid.nx}, {self.grid.nv})")
        if not np.all(np.isfinite(arr)):
            raise CorruptFieldError("phase field contains non-finite entries")
        object.__setattr__(self, "values", arr)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def boundary_magnitude(self) -> float:
        return float(max(np.max(np.abs(self.values[:, 0])), np.max(np.abs(self.values[:, -1]))))

    def check_padding(self, threshold: float = PADDING_THRESHOLD) -> None:
        """Raise :class:`PaddingError` unless the field decays at ``v = +-V``."""
        scale = self.sup()
        if scale == 0.0:
            return
        mag = self.boundary_magnitude()
        if mag >= threshold * scale:
            raise PaddingError(mag, threshold * scale)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.dx * self.grid.dv)

    def _other(self, other):
        if isinstance(other, PhaseField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return PhaseField(self.values + self._other(other), self.grid)

    def __sub__(self, other):
        return PhaseField(self.values - self._other(other), self.grid)

    def __mul__(self, other):
        return PhaseField(self.values * self._other(other), self.grid)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return PhaseField(-self.values, self.grid)


@dataclass(frozen=True)
class DensityField:
    """A function of x only, e.g. the density ``rho = int f dv``."""

    values: np.ndarray
    grid: GridSpec = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.shape != (self.grid.nx,):
            raise ValueError(f"shape {arr.shape} does not match nx={self.grid.nx}")
        if not np.all(np.isfinite(arr)):
            raise CorruptFieldError("density field contains non-finite entries")
        object.__setattr__(self, "values", arr)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.dx)

    def __add__(self, other):
        o = other.values if isinstance(other, DensityField) else other
        return DensityField(self.values + o, self.grid)

    def __sub__(self, other):
        o = other.values if isinstance(other, DensityField) else other
        return DensityField(self.values - o, self.grid)

    def __mul__(self, other):
        o = other.values if isinstance(other, DensityField) else other
        return DensityField(self.values * o, self.grid)

    __rmul__ = __mul__


def _checked(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise CorruptFieldError(f"{what} is not finite; the field is corrupt")
    return values


def moment_zero(f: PhaseField) -> DensityField:
    """``rho(x) = int f(x, v) dv`` by the trapezoid rule on the periodic v grid."""
    rho = f.values.sum(axis=1) * f.grid.dv
    return DensityField(_checked(rho, "zeroth moment"), f.grid)


def moment_first(f: PhaseField) -> DensityField:
    """``rho u = int v f(x, v) dv``."""
    m = f.values @ f.grid.v * f.grid.dv
    return DensityField(_checked(m, "first moment"), f.grid)


def omega_tail(v_halfwidth: float) -> float:
    """Mass of the weight profile outside ``[-V, V]``: ``2 arctan(1/V)/pi``."""
    return 2.0 * math.atan(1.0 / v_halfwidth) / math.pi


@lru_cache(maxsize=64)
def _wavenumbers(n: int, period: float) -> np.ndarray:
    k = 2.0 * np.pi * sfft.fftfreq(n, d=period / n)
    k[n // 2] = 0.0  # Nyquist mode dropped for every derivative order
    k.setflags(write=False)
    return k


def spectral_derivative(values: np.ndarray, order: int, period: float, axis: int = 0) -> np.ndarray:
    """Fourier derivative of a real periodic array along ``axis``."""
    if order == 0:
        return np.array(values, dtype=float, copy=True)
    n = values.shape[axis]
    k = _wavenumbers(n, period)
    shape = [1] * values.ndim
    shape[axis] = n
    mult = ((1j * k) ** order).reshape(shape)
    workers = fft_workers()
    vhat = sfft.fft(values, axis=axis, workers=workers)
    return sfft.ifft(vhat * mult, axis=axis, workers=workers).real


def _check_order(order: int, cap: int) -> None:
    if order < 0:
        raise ValueError("derivative order must be nonnegative")
    if order > cap:
        raise ValueError(f"derivative order {order} exceeds the spectral cap {cap}")


def ddx(fld, order: int = 1, cap: int = DERIVATIVE_CAP):
    """Exact spectral ``d^order/dx^order`` of a :class:`DensityField` or :class:`PhaseField`."""
    _check_order(order, cap)
    out = spectral_derivative(fld.values, order, fld.grid.x_period, axis=0)
    return type(fld)(out, fld.grid)


def ddv(fld: PhaseField, order: int = 1, cap: int = DERIVATIVE_CAP) -> PhaseField:
    """Spectral v-derivative; the field must satisfy the decay padding."""
    _check_order(order, cap)
    fld.check_padding()
    out = spectral_derivative(fld.values, order, 2.0 * fld.grid.v_halfwidth, axis=1)
    return PhaseField(out, fld.grid)


def weight_values(v: np.ndarray) -> np.ndarray:
    return 1.0 / (np.pi * (1.0 + v * v))


def alpha_values(v: np.ndarray) -> np.ndarray:
    return -2.0 * v / (1.0 + v * v)


def weight_profile(grid: GridSpec) -> PhaseField:
    """``omega(v) = 1/(pi (1 + v^2))`` broadcast over x.

    Note that omega itself has an algebraic tail and does *not* satisfy the
    decay padding; it is only ever used as a multiplier.
    """
    w = weight_values(grid.v)
    return PhaseField(np.broadcast_to(w, (grid.nx, grid.nv)), grid)


def alpha_profile(grid: GridSpec) -> PhaseField:
    """``alpha(v) = omega'(v)/omega(v) = -2v/(1 + v^2)`` broadcast over x."""
    a = alpha_values(grid.v)
    return PhaseField(np.broadcast_to(a, (grid.nx, grid.nv)), grid)
