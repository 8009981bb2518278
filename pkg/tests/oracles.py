"""Independent dense oracles used by the test suite.

Everything here is assembled from scratch with explicit loops over cells and
neighbors, deliberately not reusing the package's operator code, so the
tests compare two independent routes to the same quantities.
"""

import numpy as np


def active_index(grid):
    """Map cell multi-index -> dense dof number (active cells only)."""
    idx = -np.ones(grid.shape, dtype=int)
    count = 0
    for cell in np.ndindex(grid.shape):
        if grid.active[cell]:
            idx[cell] = count
            count += 1
    return idx, count


def _neighbors(cell, shape):
    for a in range(len(shape)):
        for sgn in (-1, 1):
            nb = list(cell)
            nb[a] += sgn
            if 0 <= nb[a] < shape[a]:
                yield a, sgn, tuple(nb)


def dense_weighted_operator(grid, mobility, porosity):
    """Dense matrix of L c = (-div(M grad c))/phi on active cells."""
    idx, n = active_index(grid)
    A = np.zeros((n, n))
    invh2 = 1.0 / grid.h**2
    for cell in np.ndindex(grid.shape):
        if not grid.active[cell]:
            continue
        row = idx[cell]
        for a, sgn, nb in _neighbors(cell, grid.shape):
            if not grid.active[nb]:
                continue
            face = list(cell)
            if sgn > 0:
                face[a] += 1
            m = mobility[a][tuple(face)]
            A[row, row] += m * invh2 / porosity[cell]
            A[row, idx[nb]] -= m * invh2 / porosity[cell]
    return A


def dense_neumann_laplacian(grid):
    """Dense matrix of c -> -div(grad c) with unit coefficient."""
    ones = [np.ones(grid.face_shape(a)) for a in range(grid.dim)]
    return dense_weighted_operator(grid, ones, np.ones(grid.shape))


def pack(grid, c):
    idx, n = active_index(grid)
    v = np.zeros(n)
    for cell in np.ndindex(grid.shape):
        if grid.active[cell]:
            v[idx[cell]] = c[cell]
    return v


def unpack(grid, v):
    idx, _ = active_index(grid)
    c = np.zeros(grid.shape)
    for cell in np.ndindex(grid.shape):
        if grid.active[cell]:
            c[cell] = v[idx[cell]]
    return c


def dense_invert(grid, mobility, porosity, f):
    """Solve L psi = f with zero phi-weighted mean via a dense KKT system."""
    A = dense_weighted_operator(grid, mobility, porosity)
    n = A.shape[0]
    w = pack(grid, porosity) * grid.cell_volume  # phi-weighted mean constraint
    W = np.diag(w)
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = W @ A  # symmetric: -div(M grad) scaled by cell measure
    K[:n, n] = w
    K[n, :n] = w
    rhs = np.concatenate([w * pack(grid, f), [0.0]])
    sol = np.linalg.solve(K, rhs)
    return unpack(grid, sol[:n])


def dense_hminus1(grid, c):
    """sqrt(c^T L^+ c * h^dim) with L the dense Neumann Laplacian."""
    A = dense_neumann_laplacian(grid)
    v = pack(grid, c)
    psi = np.linalg.pinv(A, rcond=1e-12) @ v
    return float(np.sqrt(max(v @ psi * grid.cell_volume, 0.0)))
