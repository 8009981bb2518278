"""Newton solver against the dense projected-gradient oracle."""

import numpy as np
import pytest

import oracles
from pg_oracle import PGProblem
from tpflow.grid import Grid
from tpflow import operators as ops
from tpflow import physics
from tpflow.elliptic import EllipticProblem, KrylovConfig
from tpflow.newton import (NewtonConfig, SaturationProblem, safeguard_step,
                           solve)
from tpflow.physics import EnergyParams, PorousMedium, mobility_face


def build_first_order(grid, rng, dt=0.05, params=None, with_source=False):
    params = params or EnergyParams(sigma_w=1.3, sigma_n=0.7, sigma_wn=0.4,
                                    m=2.0, eta_w=1.0, eta_n=0.8)
    phi = rng.uniform(0.3, 0.8, grid.shape)
    perm = rng.uniform(0.05, 0.2, grid.shape)
    med = PorousMedium(grid, phi, perm)
    s_old = rng.uniform(0.25, 0.75, grid.shape)
    mob_w = mobility_face(grid, s_old, med, params.eta_w, params.m)
    mob_n = mobility_face(grid, 1 - s_old, med, params.eta_n, params.m)
    prob_w = EllipticProblem(grid, mob_w, phi)
    prob_n = EllipticProblem(grid, mob_n, phi)
    lift = None
    target = 0.0
    if with_source:
        q_w = 0.1 * rng.standard_normal(grid.shape)
        from tpflow.elliptic import invert_shifted
        psi_w, _, _ = invert_shifted(prob_w, q_w / phi)
        psi_n, _, _ = invert_shifted(prob_n, -q_w / phi)
        lift = psi_w - psi_n
        target = dt * ops.integral(grid, q_w)
    problem = SaturationProblem(
        grid, phi, prob_w, prob_n, s_old, dt,
        mu_diff=lambda s: physics.mu_diff_first(s, s_old, params),
        mu_diff_deriv=lambda s: physics.mu_diff_first_deriv(s, params),
        lift=lift, mass_target=target, krylov=KrylovConfig(jacobi=True))
    pg = PGProblem(grid, phi, mob_w, mob_n, s_old, dt, params, order=1,
                   lift=lift, mass_target=target)
    return problem, pg, med, params, s_old


def build_second_order(grid, rng, dt=0.05):
    params = EnergyParams(sigma_w=1.3, sigma_n=0.9, sigma_wn=1.0,
                          m=2.0, eta_w=1.0, eta_n=0.8)
    assert params.convexity_bound_ok
    phi = rng.uniform(0.3, 0.8, grid.shape)
    med = PorousMedium(grid, phi, rng.uniform(0.05, 0.2, grid.shape))
    s_old = rng.uniform(0.3, 0.7, grid.shape)
    s_prev = np.clip(s_old + 0.05 * rng.standard_normal(grid.shape), 0.1, 0.9)
    s_tilde = 1.5 * s_old - 0.5 * s_prev
    mob_w = mobility_face(grid, s_tilde, med, params.eta_w, params.m, regularize_with=dt)
    mob_n = mobility_face(grid, 1 - s_tilde, med, params.eta_n, params.m, regularize_with=dt)
    prob_w = EllipticProblem(grid, mob_w, phi)
    prob_n = EllipticProblem(grid, mob_n, phi)
    problem = SaturationProblem(
        grid, phi, prob_w, prob_n, s_old, dt,
        mu_diff=lambda s: physics.mu_diff_second(s, s_old, params, dt),
        mu_diff_deriv=lambda s: physics.mu_diff_second_deriv(s, s_old, params, dt),
        krylov=KrylovConfig(jacobi=True))
    pg = PGProblem(grid, phi, mob_w, mob_n, s_old, dt, params, order=2)
    return problem, pg, s_old


class TestSafeguard:
    def test_small_interior_step_untouched(self):
        s = np.full((3, 3), 0.5)
        ds = np.full((3, 3), 0.01)
        assert safeguard_step(s, ds, 0.9) == 1.0

    def test_spec_value(self):
        s = np.full((2, 2), 0.5)
        ds = np.zeros((2, 2))
        ds[0, 0] = -10.0
        assert safeguard_step(s, ds, 0.9) == pytest.approx(0.045, abs=1e-15)

    def test_random_steps_stay_interior(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = rng.uniform(0.01, 0.99, (4, 4))
            ds = rng.standard_normal((4, 4)) * rng.uniform(0.1, 10)
            a = safeguard_step(s, ds, 0.9)
            assert a > 0
            out = s + a * ds
            assert np.all(out > 0) and np.all(out < 1)


class TestJacobian:
    def test_action_matches_finite_difference(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(1)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        s = np.clip(s_old + 0.02 * rng.standard_normal(grid.shape), 0.1, 0.9)
        diag = problem.mu_diff_deriv(s)
        delta = 1e-6
        for _ in range(3):
            v = problem.project(rng.standard_normal(grid.shape))
            jv = problem.jac_vec(diag, v)
            fd = (problem.residual(s + delta * v) - problem.residual(s - delta * v)) / (2 * delta)
            denom = max(np.abs(jv).max(), 1.0)
            assert np.abs(jv - fd).max() / denom < 1e-5

    def test_symmetry_on_constraint_subspace(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(2)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        diag = problem.mu_diff_deriv(s_old)
        v = problem.project(rng.standard_normal(grid.shape))
        w = problem.project(rng.standard_normal(grid.shape))
        lhs = problem.phi_dot(problem.jac_vec(diag, v), w)
        rhs = problem.phi_dot(v, problem.jac_vec(diag, w))
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


class TestSolve:
    def test_fixed_point_zero_iterations(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(3)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        # manufacture an exact solution: fold the residual into the lift
        r = problem.residual(s_old)
        problem.lift = problem.lift + problem.project(r)
        s, c, stats = solve(problem, s_old)
        assert stats.iterations == 0
        assert np.array_equal(s[grid.active], s_old[grid.active])

    def test_single_active_cell(self):
        act = np.zeros((2, 2), dtype=bool)
        act[0, 0] = True
        grid = Grid((2, 2), 0.5, active=act)
        rng = np.random.default_rng(4)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        s, c, stats = solve(problem, s_old)
        assert abs(s[0, 0] - s_old[0, 0]) < 1e-14
        r = problem.residual(s)
        assert abs(c - r[0, 0]) < 1e-12 * max(1.0, abs(c))

    def test_constraint_and_interior(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(5)
        problem, _, _, _, s_old = build_first_order(grid, rng, with_source=True)
        s, c, stats = solve(problem, s_old)
        assert stats.converged
        assert np.all(s[grid.active] > 0) and np.all(s[grid.active] < 1)
        assert stats.constraint_gap <= 1e-12 * problem.wsum

    def test_residual_orthogonal_to_constants(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(6)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        s, c, stats = solve(problem, s_old)
        r = problem.residual(s) - c
        assert abs(problem.phi_dot(r, np.ones(grid.shape))) < 1e-10

    def test_max_iterations_returns_flag(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(7)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        s, c, stats = solve(problem, s_old, NewtonConfig(max_iter=1))
        assert not stats.converged

    def test_determinism(self):
        grid = Grid((5, 5), 0.2)
        rng = np.random.default_rng(8)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        s1, c1, _ = solve(problem, s_old)
        problem.krylov_count = 0
        problem._psi_w = problem._psi_n = None
        s2, c2, _ = solve(problem, s_old)
        assert np.array_equal(s1, s2)
        assert c1 == c2

    def test_monotone_residual(self):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(9)
        problem, _, _, _, s_old = build_first_order(grid, rng)
        merits = []
        orig_residual = problem.residual

        def tracking(s):
            r = orig_residual(s)
            merits.append(problem.phi_norm(problem.project(r)))
            return r

        problem.residual = tracking
        solve(problem, s_old)
        accepted = np.array(merits)
        # the accepted sequence is non-increasing up to the noise floor
        assert np.all(np.diff(accepted) <= 1e-14 + 1e-4 * accepted[:-1])


class TestOracleEquivalence:
    def test_gradient_consistency_first_order(self):
        grid = Grid((3, 3), 1 / 3)
        rng = np.random.default_rng(10)
        _, pg, _, _, s_old = build_first_order(grid, rng)
        s = oracles.pack(grid, np.clip(s_old + 0.05 * rng.standard_normal(grid.shape), 0.1, 0.9))
        assert pg.check_gradient(s) < 1e-6

    def test_gradient_consistency_second_order(self):
        grid = Grid((3, 3), 1 / 3)
        rng = np.random.default_rng(11)
        _, pg, _ = build_second_order(grid, rng)
        s = oracles.pack(grid, rng.uniform(0.25, 0.75, grid.shape))
        assert pg.check_gradient(s) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_first_order_matches_projected_gradient(self, seed):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(100 + seed)
        problem, pg, _, _, s_old = build_first_order(grid, rng)
        s_newton, _, stats = solve(problem, s_old, NewtonConfig(
            step_tol=1e-10, krylov=KrylovConfig(jacobi=True)))
        assert stats.converged
        s_pg = pg.unpack(pg.minimize())
        assert np.abs(s_newton - s_pg)[grid.active].max() < 1e-8

    @pytest.mark.parametrize("seed", range(3))
    def test_second_order_matches_projected_gradient(self, seed):
        grid = Grid((4, 4), 0.25)
        rng = np.random.default_rng(200 + seed)
        problem, pg, s_old = build_second_order(grid, rng)
        s_newton, _, stats = solve(problem, np.clip(s_old, 0.1, 0.9), NewtonConfig(
            step_tol=1e-10, krylov=KrylovConfig(jacobi=True)))
        assert stats.converged
        s_pg = pg.unpack(pg.minimize())
        assert np.abs(s_newton - s_pg)[grid.active].max() < 1e-8
