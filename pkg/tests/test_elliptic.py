"""Elliptic operator, CG inverse, and dual norms against dense oracles."""

import numpy as np
import pytest

import oracles
from tpflow.grid import Grid
from tpflow import operators as ops
from tpflow.elliptic import (EllipticProblem, IncompatibleRHS, KrylovConfig,
                             NoConvergence, apply_operator, dual_norm_weighted,
                             hminus1_norm, invert, invert_shifted)


def random_problem(grid, rng, contrast=5.0):
    mob = []
    for a in range(grid.dim):
        mob.append(rng.uniform(1.0, contrast, grid.face_shape(a)))
    phi = rng.uniform(0.2, 0.9, grid.shape)
    return EllipticProblem(grid, mob, phi)


def compatible_field(grid, rng, phi):
    c = rng.standard_normal(grid.shape)
    c -= ops.weighted_mean(grid, c, phi)
    return np.where(grid.active, c, 0.0)


class TestApply:
    def test_constant_in_nullspace(self):
        g = Grid((5, 5), 0.2)
        prob = random_problem(g, np.random.default_rng(0))
        out = apply_operator(prob, g.full_cell(4.2))
        assert np.abs(out).max() < 1e-12

    def test_matches_dense_negative_laplacian(self):
        g = Grid((6, 6), 1 / 6)
        prob = EllipticProblem.poisson(g)
        rng = np.random.default_rng(1)
        c = rng.standard_normal(g.shape)
        A = oracles.dense_neumann_laplacian(g)
        dense = oracles.unpack(g, A @ oracles.pack(g, c))
        mine = apply_operator(prob, c)
        assert np.abs(mine - dense).max() < 1e-13 * max(1.0, np.abs(dense).max())

    def test_output_has_zero_weighted_mean(self):
        g = Grid((5, 4), 0.2)
        rng = np.random.default_rng(2)
        prob = random_problem(g, rng)
        out = apply_operator(prob, rng.standard_normal(g.shape))
        assert abs(ops.weighted_mean(g, out, prob.porosity)) < 1e-13


class TestInvert:
    def test_zero_rhs(self):
        g = Grid((4, 4), 0.25)
        prob = EllipticProblem.poisson(g)
        psi, info = invert(prob, g.zeros_cell())
        assert np.all(psi == 0.0)
        assert info.iterations == 0

    def test_round_trip(self):
        g = Grid((5, 5), 0.2)
        rng = np.random.default_rng(3)
        prob = random_problem(g, rng)
        f = compatible_field(g, rng, prob.porosity)
        psi, _ = invert(prob, f)
        back = apply_operator(prob, psi)
        assert np.abs(back - f).max() < 1e-9 * max(1.0, np.abs(f).max())
        assert abs(ops.weighted_mean(g, psi, prob.porosity)) < 1e-12

    def test_matches_dense_solve(self):
        g = Grid((4, 4), 0.25)
        prob = EllipticProblem.poisson(g)
        rng = np.random.default_rng(4)
        f = compatible_field(g, rng, np.ones(g.shape))
        psi, _ = invert(prob, f)
        dense = oracles.dense_invert(g, prob.mobility, prob.porosity, f)
        assert np.abs(psi - dense).max() < 1e-10

    def test_matches_dense_solve_variable_coefficients(self):
        g = Grid((5, 4), 0.2)
        rng = np.random.default_rng(5)
        prob = random_problem(g, rng)
        f = compatible_field(g, rng, prob.porosity)
        psi, _ = invert(prob, f)
        dense = oracles.dense_invert(g, prob.mobility, prob.porosity, f)
        assert np.abs(psi - dense).max() < 1e-9

    def test_incompatible_rhs_raises(self):
        g = Grid((4, 4), 0.25)
        prob = EllipticProblem.poisson(g)
        with pytest.raises(IncompatibleRHS):
            invert(prob, g.full_cell(1.0))

    def test_no_convergence_raises(self):
        g = Grid((8, 8), 1 / 8)
        prob = EllipticProblem.poisson(g)
        rng = np.random.default_rng(6)
        f = compatible_field(g, rng, np.ones(g.shape))
        with pytest.raises(NoConvergence) as exc:
            invert(prob, f, KrylovConfig(maxiter=2))
        assert exc.value.iterations == 2
        assert exc.value.residual > 0

    def test_shifted_inverse_total(self):
        # invert_shifted accepts any field and removes the mean itself
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(7)
        prob = random_problem(g, rng)
        f = rng.standard_normal(g.shape) + 2.0
        psi, shift, _ = invert_shifted(prob, f)
        assert abs(shift - ops.weighted_mean(g, f, prob.porosity)) < 1e-14
        back = apply_operator(prob, psi)
        assert np.abs(back - (f - shift)).max() < 1e-9

    def test_jacobi_matches_unpreconditioned(self):
        g = Grid((6, 5), 0.2)
        rng = np.random.default_rng(8)
        prob = random_problem(g, rng, contrast=50.0)
        f = compatible_field(g, rng, prob.porosity)
        a, _ = invert(prob, f, KrylovConfig(jacobi=False))
        b, _ = invert(prob, f, KrylovConfig(jacobi=True))
        assert np.abs(a - b).max() < 1e-9

    def test_masked_domain(self):
        act = np.ones((6, 6), dtype=bool)
        act[3:, 3:] = False
        g = Grid((6, 6), 1 / 6, active=act)
        rng = np.random.default_rng(9)
        prob = random_problem(g, rng)
        f = compatible_field(g, rng, prob.porosity)
        psi, _ = invert(prob, f)
        dense = oracles.dense_invert(g, prob.mobility, prob.porosity, f)
        assert np.abs(psi - dense).max() < 1e-9


class TestHminus1:
    def test_zero(self):
        g = Grid((4, 4), 0.25)
        assert hminus1_norm(g, g.zeros_cell()) == 0.0

    def test_homogeneity(self):
        g = Grid((5, 5), 0.2)
        rng = np.random.default_rng(10)
        c = rng.standard_normal(g.shape)
        c -= ops.plain_mean(g, c)
        n1 = hminus1_norm(g, c)
        n2 = hminus1_norm(g, 2.0 * c)
        assert abs(n2 - 2.0 * n1) < 1e-12 * max(1.0, n1)

    @pytest.mark.parametrize("n", list(range(2, 17, 2)) + [5, 9, 13])
    def test_matches_dense_pseudoinverse(self, n):
        g = Grid((n, n), 1.0 / n)
        rng = np.random.default_rng(n)
        c = rng.standard_normal(g.shape)
        c -= ops.plain_mean(g, c)
        mine = hminus1_norm(g, c)
        dense = oracles.dense_hminus1(g, c)
        assert abs(mine - dense) < 1e-10 * max(1.0, dense)

    def test_requires_mean_zero(self):
        g = Grid((4, 4), 0.25)
        with pytest.raises(IncompatibleRHS):
            hminus1_norm(g, g.full_cell(1.0))


class TestDualNorm:
    def test_zero(self):
        g = Grid((4, 4), 0.25)
        prob = random_problem(g, np.random.default_rng(11))
        assert dual_norm_weighted(g.zeros_cell(), prob) == 0.0

    def test_reduces_to_hminus1(self):
        g = Grid((5, 5), 0.2)
        prob = EllipticProblem.poisson(g)
        rng = np.random.default_rng(12)
        c = rng.standard_normal(g.shape)
        c -= ops.plain_mean(g, c)
        assert abs(dual_norm_weighted(c, prob) - hminus1_norm(g, c)) < 1e-11

    def test_positive_definite(self):
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(13)
        prob = random_problem(g, rng)
        c = compatible_field(g, rng, prob.porosity)
        assert dual_norm_weighted(c, prob) > 0.0

    def test_symmetry_of_weighted_pairing(self):
        # <invert(a), b>_phi = <a, invert(b)>_phi
        g = Grid((5, 4), 0.2)
        rng = np.random.default_rng(14)
        prob = random_problem(g, rng)
        a = compatible_field(g, rng, prob.porosity)
        b = compatible_field(g, rng, prob.porosity)
        ia, _ = invert(prob, a)
        ib, _ = invert(prob, b)
        lhs = ops.cell_inner(g, prob.porosity * ia, b)
        rhs = ops.cell_inner(g, prob.porosity * a, ib)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_cauchy_schwarz(self):
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(15)
        prob = random_problem(g, rng)
        for _ in range(5):
            a = compatible_field(g, rng, prob.porosity)
            b = compatible_field(g, rng, prob.porosity)
            ib, _ = invert(prob, b)
            inner = ops.cell_inner(g, prob.porosity * a, ib)
            na = dual_norm_weighted(a, prob)
            nb = dual_norm_weighted(b, prob)
            assert abs(inner) <= na * nb * (1 + 1e-9)

    def test_mobility_monotonicity(self):
        # raising M pointwise cannot increase the dual norm
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(16)
        phi = rng.uniform(0.3, 0.8, g.shape)
        mob = [rng.uniform(1.0, 2.0, g.face_shape(a)) for a in range(g.dim)]
        prob_lo = EllipticProblem(g, mob, phi)
        prob_hi = EllipticProblem(g, [1.7 * m for m in mob], phi)
        c = compatible_field(g, rng, phi)
        assert dual_norm_weighted(c, prob_hi) <= dual_norm_weighted(c, prob_lo) + 1e-12
