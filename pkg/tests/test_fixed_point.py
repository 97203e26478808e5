from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from vbl.analytic_norms import DerivativeTable, table_from_closed_form
from vbl.errors import GateError
from vbl.fixed_point import (
    DegenerateDistanceError,
    SolverParams,
    alpha0_at,
    contraction_rate,
    f0_size_bound,
    find_M,
    gate,
    kappa,
    m_right,
    membership_X,
    picard,
    psi,
    random_admissible_trajectory,
    z_distance,
)
from vbl.phase_space import GridSpec, PhaseField, weight_values
from vbl.profiles import gauss_v_trig_x
from vbl.transport import (
    LINEAR,
    Trajectory,
    constant_extension,
    free_transport_extension,
    solve_nonlinear,
)

LAM0, K, T = 0.5, 40.0, 0.01
AMP = 4e-4


def alpha0_oracle(lam, terms=120):
    """Direct series of sup|alpha^(l)| / l! * lam^l from the pole form in extended precision.

    alpha = -2 Re(1/(v - i)); with v = tan t this gives
    |alpha^(l)| / l! = 2 |cos((l+1)(t - pi/2))| cos(t)^(l+1), whose critical points in
    (-pi/2, pi/2) are t = ((l+1) pi/2 + k pi) / (l+2).
    """
    mp.mp.dps = 30
    total = mp.mpf(0)
    for l in range(terms):
        ts = [((l + 1) * mp.pi / 2 + k * mp.pi) / (l + 2) for k in range(-l - 2, 2)]
        best = max(abs(mp.cos((l + 1) * (t - mp.pi / 2)) * mp.cos(t) ** (l + 1))
                   for t in ts if abs(t) < mp.pi / 2)
        total += 2 * best * mp.mpf(lam) ** l
    return float(total)


@pytest.fixture(scope="module")
def g0_table():
    return table_from_closed_form(gauss_v_trig_x(AMP, 0.1, 1), 20, 40)


@pytest.fixture(scope="module")
def params():
    return SolverParams(LAM0, K, T, find_M(LAM0, K, T, 0), 0)


@pytest.fixture(scope="module")
def setup():
    g = GridSpec(64, 64, dt=1e-3, t_final=T)
    prof = gauss_v_trig_x(AMP, 0.1, 1)
    g0 = PhaseField(prof.sample(g), g)
    f0 = PhaseField(g0.values * weight_values(g.v), g)
    return g, f0, g0


class TestAlpha0:
    def test_matches_series_oracle(self):
        assert alpha0_at(0.5) == pytest.approx(alpha0_oracle(0.5), rel=1e-10)


class TestGate:
    def test_parameter_chain(self, params, g0_table):
        rep = gate(params, g0_table)
        assert rep.parameters_pass
        assert rep.condition_parameters["K < lambda0/T - 1"].threshold == pytest.approx(49.0)

    def test_found_M_and_kappa(self, params, g0_table):
        assert params.M == 0.25
        rep = gate(params, g0_table)
        assert rep.condition_M_left.passed and rep.condition_M_right.passed
        assert kappa(params) < 1
        # the next grid value breaks the left side
        assert kappa(params.with_M(0.3)) >= 1
        assert m_right(params) > 1

    def test_gaussian_data_passes_f0_size(self, params, g0_table):
        rep = gate(params, g0_table)
        assert rep.condition_f0.passed and rep.passed
        assert rep.condition_f0.threshold == pytest.approx(f0_size_bound(params))

    def test_zero_data_passes_f0_size(self, params):
        rep = gate(params, DerivativeTable(np.zeros((5, 5))))
        assert rep.condition_f0.passed
        assert rep.condition_f0.value == 0.0

    def test_bad_chain_fails(self, g0_table):
        rep = gate(SolverParams(0.5, 60.0, T, 0.1, 0), g0_table)
        assert not rep.parameters_pass and not rep.passed

    @pytest.mark.parametrize("M", [0.05, 0.2, 0.25, 0.3, 0.5])
    def test_gate_consistency(self, M, g0_table):
        p = SolverParams(LAM0, K, T, M, 0)
        assert (kappa(p) < 1) == gate(p, g0_table).condition_M_left.passed

    @pytest.mark.parametrize("q", [1, 2])
    def test_find_M_other_exponents(self, q):
        M = find_M(LAM0, K, T, q)
        p = SolverParams(LAM0, K, T, M, q)
        assert kappa(p) < 1 and m_right(p) > 1
        assert not (kappa(p.with_M(M + 0.05)) < 1 and m_right(p.with_M(M + 0.05)) > 1)


class TestKappa:
    def test_small_T_limit(self):
        p = SolverParams(LAM0, K, 1e-12, 0.2, 0)
        assert kappa(p) == pytest.approx((1 + p.alpha0) * 0.2, rel=1e-9)

    def test_small_M_limit(self):
        assert kappa(SolverParams(LAM0, K, T, 1e-12, 2)) < 1e-30

    def test_closed_form(self):
        p = SolverParams(LAM0, K, T, 0.3, 1)
        a = p.alpha0
        assert kappa(p) == pytest.approx((1 + T) * (1 + a) * 0.09 * math.exp(a * 0.09 * T), rel=1e-14)


class TestPsi:
    def test_zero_trajectory_gives_free_transport(self, setup, params):
        g, f0, g0 = setup
        zero = constant_extension(PhaseField(np.zeros((g.nx, g.nv)), g))
        out = psi(zero, f0, params)
        exact = free_transport_extension(g0, g)
        assert out.kind == LINEAR
        assert max(np.max(np.abs(a.values - b.values)) for a, b in zip(out.fields, exact.fields)) < 1e-9 * g0.sup()

    def test_x_constant_trajectory_gives_free_transport(self, setup, params):
        g, f0, g0 = setup
        _, V = g.mesh()
        h = constant_extension(PhaseField(np.exp(-V ** 2 / 2), g))
        out = psi(h, f0, params)
        exact = free_transport_extension(g0, g)
        assert np.max(np.abs(out.final.values - exact.final.values)) < 1e-9 * g0.sup()


@pytest.fixture(scope="module")
def run(setup, params):
    g, f0, _ = setup
    return picard(f0, params, g)


class TestPicard:
    def test_converges(self, run, params):
        assert run.converged
        assert run.distances[-1] < params.picard_tol
        assert run.iterations <= params.max_iter

    def test_ratios_below_kappa(self, run, params):
        assert all(r <= kappa(params) for r in run.ratios)

    def test_iterates_stay_in_ball(self, run):
        assert all(m.passed for m in run.membership)

    def test_fixed_point_consistency(self, run, setup, params):
        _, f0, _ = setup
        again = psi(run.g, f0, params)
        assert z_distance(again, run.g, params) <= params.picard_tol

    def test_uniqueness_probe(self, run, setup, params):
        g, f0, g0 = setup
        other = picard(f0, params, g, h0=free_transport_extension(g0, g))
        assert other.converged
        assert z_distance(other.g, run.g, params) <= 2 * params.picard_tol

    def test_cross_solver(self, run, setup):
        g, f0, _ = setup
        direct = solve_nonlinear(f0, 0, g)
        coarse = solve_nonlinear(PhaseField(f0.values[::2, ::2], g.coarsened()), 0)
        self_conv = np.max(np.abs(coarse.final.values - direct.final.values[::2, ::2]))
        diff = np.max(np.abs(run.f.final.values - direct.final.values))
        assert diff <= 3 * self_conv

    def test_x_constant_data_converges_at_once(self, params):
        g = GridSpec(32, 64, dt=1e-3, t_final=T)
        _, V = g.mesh()
        f0 = PhaseField(AMP * np.exp(-V ** 2 / 2) * weight_values(g.v), g)
        res = picard(f0, params)
        assert res.converged and res.iterations == 1

    def test_gate_failure_aborts_without_force(self, setup, g0_table):
        g, f0, _ = setup
        bad = SolverParams(LAM0, K, T, 0.5, 0, max_iter=3)
        rep = gate(bad, g0_table)
        with pytest.raises(GateError):
            picard(f0, bad, g, gate_report=rep)
        forced = picard(f0, bad, g, gate_report=rep, force=True)
        assert forced.forced

    def test_non_convergence_is_diagnosed(self, setup, params):
        g, f0, _ = setup
        res = picard(f0, SolverParams(LAM0, K, T, params.M, 0, picard_tol=1e-30, max_iter=2), g)
        assert not res.converged
        assert "ratio history" in res.diagnosis


class TestMembership:
    def test_zero_trajectory(self, setup, params):
        g, _, _ = setup
        zero = constant_extension(PhaseField(np.zeros((g.nx, g.nv)), g))
        m = membership_X(zero, params)
        assert m.value == 0.0 and m.passed

    def test_constant_trajectory(self, params):
        g = GridSpec(32, 32, dt=1e-3, t_final=T)
        c = constant_extension(PhaseField(np.full((32, 32), 0.1), g))
        # constant fields break v padding, so use an x-only table
        m = membership_X(c, params, caps=(3, 0))
        assert m.value == pytest.approx(0.1, rel=1e-13)
        assert m.passed and m.approximate


class TestContraction:
    def test_random_pairs(self, setup, params):
        _, f0, g0 = setup
        rng = np.random.default_rng(3)
        for _ in range(3):
            h1 = random_admissible_trajectory(g0, rng, 0.25 * g0.sup())
            h2 = random_admissible_trajectory(g0, rng, 0.25 * g0.sup())
            assert membership_X(h1, params).passed and membership_X(h2, params).passed
            res = contraction_rate(h1, h2, f0, params)
            assert res.bound == kappa(params)
            assert res.passed

    def test_x_independent_perturbation_is_near_zero(self, setup, params):
        g, f0, g0 = setup
        _, V = g.mesh()
        h1 = free_transport_extension(g0, g)
        bump = PhaseField(1e-5 * np.exp(-V ** 2 / 2), g)
        h2 = Trajectory(h1.times, tuple(f + bump for f in h1.fields), LINEAR)
        res = contraction_rate(h1, h2, f0, params, allowance=0.0)
        assert res.measured < 1e-3 * res.bound

    def test_doubling_M(self, setup):
        _, f0, g0 = setup
        p1 = SolverParams(LAM0, K, T, 0.1, 0)
        p2 = p1.with_M(0.2)
        assert kappa(p2) < 1
        assert kappa(p2) / kappa(p1) == pytest.approx(2 * math.exp(p1.alpha0 * 0.1 * T))
        rng = np.random.default_rng(5)
        h1 = random_admissible_trajectory(g0, rng, 0.25 * g0.sup())
        h2 = random_admissible_trajectory(g0, rng, 0.25 * g0.sup())
        r1, r2 = contraction_rate(h1, h2, f0, p1), contraction_rate(h1, h2, f0, p2)
        assert r1.passed and r2.passed
        assert r1.measured == r2.measured

    def test_degenerate_distance(self, setup, params):
        g, f0, g0 = setup
        h = constant_extension(g0, g)
        with pytest.raises(DegenerateDistanceError):
            contraction_rate(h, h, f0, params)


class TestSolverParams:
    @pytest.mark.parametrize("kw", [{"T": 0.0}, {"M": -1.0}, {"q": -1}, {"max_iter": 0}])
    def test_rejects_invalid(self, kw):
        base = dict(lambda0=LAM0, K=K, T=T, M=0.2, q=0)
        with pytest.raises(ValueError):
            SolverParams(**(base | kw))

    def test_alpha0_recomputed(self):
        assert SolverParams(LAM0, K, T, 0.2).alpha0 == pytest.approx(2.835154304243821, rel=1e-12)
