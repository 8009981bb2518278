"""Grid construction rules and the discrete operator calculus."""

import numpy as np
import pytest

import oracles
from tpflow.grid import Grid, GridError, cell_field
from tpflow import operators as ops


def lshape_grid(n=6):
    act = np.ones((n, n), dtype=bool)
    act[n // 2:, n // 2:] = False
    return Grid((n, n), 1.0 / n, active=act)


class TestGridConstruction:
    def test_uniform_spacing_enforced(self):
        Grid.from_extents(((0, 1), (0, 1)), (8, 8))
        with pytest.raises(GridError):
            Grid.from_extents(((0, 1), (0, 1.1)), (8, 8))

    def test_near_uniform_within_tolerance(self):
        eps = 5e-14
        Grid.from_extents(((0, 1), (0, 1 + eps)), (8, 8))

    def test_minimum_cells(self):
        Grid((2, 2), 0.5)
        with pytest.raises(GridError):
            Grid((1, 4), 0.25)

    def test_mask_connectivity(self):
        act = np.ones((4, 4), dtype=bool)
        act[1:3, 1:3] = True
        Grid((4, 4), 0.25, active=act)
        act2 = np.zeros((4, 4), dtype=bool)
        act2[0, 0] = True
        act2[3, 3] = True
        with pytest.raises(GridError):
            Grid((4, 4), 0.25, active=act2)

    def test_3d(self):
        g = Grid((3, 4, 5), 0.1)
        assert g.dim == 3
        assert g.face_shape(2) == (3, 4, 6)

    def test_cell_field_rejects_nan(self):
        g = Grid((3, 3), 1 / 3)
        with pytest.raises(GridError):
            cell_field(g, np.full(g.shape, np.nan))


class TestGradient:
    def test_constant_field_zero(self):
        g = Grid((5, 4), 0.2)
        gr = ops.gradient(g, g.full_cell(3.0))
        for f in gr:
            assert np.all(f == 0.0)

    def test_linear_exactness(self):
        g = Grid.from_extents(((0, 1), (0, 1)), (6, 6))
        x, _ = g.cell_centers()
        gr = ops.gradient(g, np.broadcast_to(x, g.shape).copy())
        assert np.allclose(gr[0][1:-1, :], 1.0, atol=1e-13)
        assert np.all(gr[0][0, :] == 0.0) and np.all(gr[0][-1, :] == 0.0)
        assert np.all(gr[1] == 0.0)

    def test_adjoint_of_divergence(self):
        # (u, grad c)_h = -(div u, c)_h for u vanishing on boundary faces
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(7)
        c = rng.standard_normal(g.shape)
        for _ in range(10):
            u = []
            for a in range(g.dim):
                f = rng.standard_normal(g.face_shape(a))
                f[~g.interior_face_masks[a]] = 0.0
                u.append(f)
            lhs = ops.face_inner(g, u, ops.gradient(g, c))
            rhs = -ops.cell_inner(g, ops.divergence(g, u), c)
            assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs))

    def test_linearity(self):
        g = Grid((5, 3), 0.2)
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
        ga = ops.gradient(g, a)
        gb = ops.gradient(g, b)
        gc = ops.gradient(g, 2.5 * a - 1.5 * b)
        for fa, fb, fc in zip(ga, gb, gc):
            assert np.abs(fc - (2.5 * fa - 1.5 * fb)).max() < 1e-14 * (1 + np.abs(fc).max())


class TestDivergence:
    def test_zero(self):
        g = Grid((4, 4), 0.25)
        assert np.all(ops.divergence(g, g.zeros_faces()) == 0.0)

    def test_telescoping_sum(self):
        g = Grid((6, 5), 0.2)
        rng = np.random.default_rng(11)
        u = []
        for a in range(g.dim):
            f = rng.standard_normal(g.face_shape(a))
            f[~g.interior_face_masks[a]] = 0.0
            u.append(f)
        assert abs(ops.integral(g, ops.divergence(g, u))) < 1e-13

    def test_div_grad_matches_dense_laplacian(self):
        g = Grid((8, 8), 1 / 8)
        A = oracles.dense_neumann_laplacian(g)
        rng = np.random.default_rng(5)
        c = rng.standard_normal(g.shape)
        lap = -ops.divergence(g, ops.gradient(g, c))
        dense = oracles.unpack(g, A @ oracles.pack(g, c))
        assert np.abs(lap - dense).max() < 1e-13 * max(1.0, np.abs(dense).max())


class TestFaceAverage:
    def test_mean_of_neighbors(self):
        g = Grid((2, 2), 0.5)
        c = np.array([[1.0, 1.0], [3.0, 3.0]])
        f = ops.face_average(g, c)
        assert f[0][1, 0] == 2.0

    def test_constant(self):
        g = Grid((4, 3), 0.25)
        f = ops.face_average(g, g.full_cell(0.7))
        for a in range(g.dim):
            assert np.allclose(f[a][g.adjacent_face_masks[a]], 0.7)

    def test_bounded_by_neighbors(self):
        g = Grid((7, 6), 0.1)
        rng = np.random.default_rng(2)
        c = rng.uniform(0.1, 0.9, g.shape)
        f = ops.face_average(g, c)
        for a in range(g.dim):
            left = [slice(None)] * g.dim
            left[a] = slice(None, -1)
            right = [slice(None)] * g.dim
            right[a] = slice(1, None)
            inner = [slice(None)] * g.dim
            inner[a] = slice(1, -1)
            lo = np.minimum(c[tuple(left)], c[tuple(right)])
            hi = np.maximum(c[tuple(left)], c[tuple(right)])
            mid = f[a][tuple(inner)]
            assert np.all(mid >= lo - 1e-15) and np.all(mid <= hi + 1e-15)


class TestInnerProducts:
    def test_measure_of_domain(self):
        g = Grid.from_extents(((0, 1), (0, 1)), (4, 4))
        one = g.full_cell(1.0)
        assert abs(ops.cell_inner(g, one, one) - 1.0) < 1e-15

    def test_positivity(self):
        g = Grid((3, 3), 1 / 3)
        rng = np.random.default_rng(9)
        c = rng.standard_normal(g.shape)
        assert ops.cell_inner(g, c, c) > 0
        assert ops.cell_inner(g, g.zeros_cell(), g.zeros_cell()) == 0.0

    @pytest.mark.parametrize("shape", [(5, 3), (3, 5)])
    def test_summation_by_parts_per_axis(self, shape):
        g = Grid(shape, 0.2)
        rng = np.random.default_rng(13)
        c = rng.standard_normal(g.shape)
        for a in range(g.dim):
            u = [np.zeros(g.face_shape(ax)) for ax in range(g.dim)]
            f = rng.standard_normal(g.face_shape(a))
            f[~g.interior_face_masks[a]] = 0.0
            u[a] = f
            grad_c = ops.gradient(g, c)
            lhs = ops.face_inner(g, u, grad_c)
            div_u = ops.divergence(g, u)
            rhs = -ops.cell_inner(g, div_u, c)
            assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("n", list(range(2, 17)))
    def test_summation_by_parts_all_sizes(self, n):
        g = Grid((n, max(2, n // 2)), 1.0 / n)
        rng = np.random.default_rng(n)
        c = rng.standard_normal(g.shape)
        u = []
        for a in range(g.dim):
            f = rng.standard_normal(g.face_shape(a))
            f[~g.interior_face_masks[a]] = 0.0
            u.append(f)
        lhs = ops.face_inner(g, u, ops.gradient(g, c))
        rhs = -ops.cell_inner(g, ops.divergence(g, u), c)
        assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs))

    def test_summation_by_parts_3d(self):
        g = Grid((3, 4, 2), 0.25)
        rng = np.random.default_rng(42)
        c = rng.standard_normal(g.shape)
        u = []
        for a in range(g.dim):
            f = rng.standard_normal(g.face_shape(a))
            f[~g.interior_face_masks[a]] = 0.0
            u.append(f)
        lhs = ops.face_inner(g, u, ops.gradient(g, c))
        rhs = -ops.cell_inner(g, ops.divergence(g, u), c)
        assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs))


class TestWeightedMean:
    def test_constant(self):
        g = Grid((4, 4), 0.25)
        rng = np.random.default_rng(1)
        w = rng.uniform(0.2, 0.9, g.shape)
        assert abs(ops.weighted_mean(g, g.full_cell(0.3), w) - 0.3) < 1e-15

    def test_checkerboard(self):
        g = Grid((4, 4), 0.25)
        c = np.indices(g.shape).sum(axis=0) % 2 * 2.0 - 1.0
        assert abs(ops.weighted_mean(g, c, g.full_cell(1.0))) < 1e-15

    def test_matches_direct_summation(self):
        g = Grid((3, 3), 1 / 3)
        rng = np.random.default_rng(21)
        c = rng.standard_normal(g.shape)
        w = rng.uniform(0.1, 1.0, g.shape)
        direct = float((w * c).sum()) / float(w.sum())
        assert abs(ops.weighted_mean(g, c, w) - direct) < 1e-14


class TestMaskConsistency:
    def test_masked_operator_equals_smaller_domain(self):
        # deactivating a strip reproduces the operators of the smaller grid
        big = Grid((6, 4), 0.25, active=np.concatenate(
            [np.ones((4, 4), dtype=bool), np.zeros((2, 4), dtype=bool)]))
        small = Grid((4, 4), 0.25)
        rng = np.random.default_rng(17)
        c_small = rng.standard_normal(small.shape)
        c_big = np.zeros(big.shape)
        c_big[:4, :] = c_small

        g_small = ops.gradient(small, c_small)
        g_big = ops.gradient(big, c_big)
        assert np.array_equal(g_big[0][:5, :], g_small[0])
        assert np.array_equal(g_big[1][:4, :], g_small[1])

        d_small = ops.divergence(small, g_small)
        d_big = ops.divergence(big, g_big)
        assert np.array_equal(d_big[:4, :], d_small)
        assert np.all(d_big[4:, :] == 0.0)

    def test_lshape_sums_exclude_inactive(self):
        g = lshape_grid(6)
        c = g.full_cell(1.0)
        expected = g.n_active * g.cell_volume
        assert abs(ops.integral(g, c) - expected) < 1e-15
