from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp

from vbl.errors import BreakdownError
from vbl.euler import (
    EulerState,
    acoustic_pulse,
    energy_total,
    euler_run,
    euler_step,
    mode_frequency,
    test_function_library as library,
    v_independent,
    weak_residual,
    weak_residual_series,
)
from vbl.phase_space import GridSpec, PhaseField, moment_zero
from vbl.transport import solve_nonlinear

T_RUN = 1.6


def pulse_run(nx, dt, q, amplitude=0.1):
    return euler_run(acoustic_pulse(nx, q + 2, amplitude), dt, int(round(T_RUN / dt)))


@pytest.fixture(scope="module")
def runs():
    return {q: (pulse_run(64, 0.08, q), pulse_run(128, 0.04, q)) for q in (0, 1)}


class TestEulerStep:
    def test_constant_state_unchanged(self):
        s = EulerState(np.full(32, 1.3), np.full(32, 0.4), 3.0)
        out = euler_run(s, 0.05, 20)[-1]
        assert np.max(np.abs(out.rho - 1.3)) < 1e-14
        assert np.max(np.abs(out.u - 0.4)) < 1e-14

    def test_mass_and_momentum(self, runs):
        for q in (0, 1):
            fine = runs[q][1]
            m = np.array([s.mass() for s in fine])
            p = np.array([s.momentum() for s in fine])
            assert np.max(np.abs(m / m[0] - 1)) < 1e-10
            assert np.max(np.abs(p / p[0] - 1)) < 1e-10

    def test_space_order_on_acoustic_pulse(self):
        # fixed small dt isolates the spatial error; the reference is a 4x run
        dt, T = 0.005, 0.5
        n = int(round(T / dt))
        finals = [euler_run(acoustic_pulse(nx, 2.0, 0.3), dt, n)[-1] for nx in (16, 32, 64)]
        e1 = np.max(np.abs(finals[0].rho - finals[2].rho[::4]))
        e2 = np.max(np.abs(finals[1].rho - finals[2].rho[::2]))
        assert e1 > 0 and (e2 == 0 or math.log2(e1 / e2) >= 3)

    def test_time_order(self):
        T = 0.8
        finals = [euler_run(acoustic_pulse(32, 2.0, 0.2), dt, int(round(T / dt)))[-1]
                  for dt in (0.1, 0.05, 0.025)]
        e1 = np.max(np.abs(finals[0].rho - finals[2].rho))
        e2 = np.max(np.abs(finals[1].rho - finals[2].rho))
        assert math.log2(e1 / e2) >= 3

    def test_sentinel(self):
        x = np.arange(32) * 2 * math.pi / 32
        s = EulerState(np.ones(32), 3.0 * np.sin(x), 2.0)
        with pytest.raises(BreakdownError, match="breakdown"):
            euler_step(s, 0.05)

    def test_cfl(self):
        with pytest.raises(ValueError):
            euler_step(acoustic_pulse(64, 2.0), 0.5)

    @pytest.mark.parametrize("kw", [{"rho": -np.ones(16)}, {"gamma": 1.4}])
    def test_invalid_states(self, kw):
        base = dict(rho=np.ones(16), u=np.zeros(16), gamma=2.0)
        with pytest.raises(ValueError):
            EulerState(**(base | kw))


class TestEnergy:
    def test_unit_density_at_rest(self):
        assert energy_total(EulerState(np.ones(64), np.zeros(64), 2.0), 0) == pytest.approx(math.pi, rel=1e-14)

    def test_zero_field(self):
        g = GridSpec(16, 32)
        assert energy_total(PhaseField(np.zeros((16, 32)), g), 1) == 0.0

    def test_symbolic_integral(self):
        x = sp.symbols("x")
        rho, u = 1 + sp.cos(x) / 4, sp.sin(x) / 3
        exact = float(sp.integrate(rho * u ** 2 / 2 + rho ** 3 / 6, (x, 0, 2 * sp.pi)))
        xs = np.arange(64) * 2 * math.pi / 64
        s = EulerState(1 + np.cos(xs) / 4, np.sin(xs) / 3, 3.0)
        assert energy_total(s, 1) == pytest.approx(exact, rel=1e-13)

    def test_conserved_on_smooth_runs(self, runs):
        for q in (0, 1):
            e = np.array([energy_total(s, q) for s in runs[q][1]])
            assert np.max(np.abs(e / e[0] - 1)) < 1e-8

    def test_unsupported_type(self):
        with pytest.raises(TypeError):
            energy_total(np.ones(3), 0)


class TestTestFunctions:
    def test_library_size_and_spot_checks(self):
        lib = library()
        assert len(lib) >= 5 and len({t.name for t in lib}) == len(lib)
        rng = np.random.default_rng(0)
        for tf in lib + [v_independent()]:
            assert tf.spot_check(rng) <= 1e-8

    def test_compact_support_in_v(self):
        for tf in library():
            assert np.all(tf.phi(np.linspace(0, 6, 7), np.full(7, 5.0)) == 0)


class TestWeakResidual:
    def test_constant_state(self):
        traj = euler_run(EulerState(np.full(32, 1.2), np.full(32, 0.3), 3.0), 0.05, 8)
        for tf in library():
            assert weak_residual(traj, 1, tf) < 1e-12

    @pytest.mark.parametrize("q", [0, 1])
    def test_order_for_library(self, runs, q):
        coarse, fine = runs[q]
        for tf in library() + [v_independent()]:
            order = math.log2(weak_residual(coarse, q, tf) / weak_residual(fine, q, tf))
            assert order >= 2, tf.name

    def test_requires_matching_gamma(self, runs):
        with pytest.raises(ValueError):
            weak_residual(runs[0][0], 1, library()[0])

    def test_requires_five_slices(self):
        traj = euler_run(acoustic_pulse(32, 2.0), 0.05, 3)
        with pytest.raises(ValueError):
            weak_residual_series(traj, 0, library()[0])

    def test_series_length(self, runs):
        coarse = runs[0][0]
        assert weak_residual_series(coarse, 0, library()[0]).size == len(coarse) - 4


class TestDispersion:
    @pytest.mark.parametrize("q", [0, 1, 2])
    def test_kinetic_sound_speed_matches_euler(self, q):
        rho0, w, delta, T = 1.5, 0.05, 1e-3, 8.0
        g = GridSpec(32, 256, v_halfwidth=2.5, dt=0.05, t_final=T)
        X, V = g.mesh()
        f0 = rho0 * (1 + delta * np.cos(X)) * np.exp(-V ** 2 / (2 * w * w)) / (w * math.sqrt(2 * math.pi))
        kin = solve_nonlinear(PhaseField(f0, g), q, g)
        omega_kin = mode_frequency(kin.times, [moment_zero(f).values for f in kin.fields])

        fluid = euler_run(EulerState(rho0 * (1 + delta * np.cos(g.x)), np.zeros(32), q + 2.0), 0.05, int(T / 0.05))
        omega_fluid = mode_frequency([s.t for s in fluid], [s.rho for s in fluid])

        assert omega_fluid == pytest.approx(rho0 ** ((q + 1) / 2), rel=1e-3)
        assert omega_kin == pytest.approx(omega_fluid, rel=0.05)
        # finite velocity spread adds 3 w^2 to the squared speed
        assert omega_kin == pytest.approx(math.sqrt(rho0 ** (q + 1) + 3 * w * w), rel=1e-3)
