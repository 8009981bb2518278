"""Discrete operator calculus on the staggered grid.

The gradient maps cell scalars to faces (interior faces carry the divided
difference of the two neighbors, boundary faces of the active region carry
zero, matching the homogeneous-Neumann face spaces).  The divergence maps
face data back to cells as the per-axis telescoping difference.  Together
they satisfy the summation-by-parts identity

    (u, grad_a c)_h = -(D_a u, c)_h

for face data ``u`` vanishing on boundary faces, which is what makes the
discrete energy and mass identities exact.

Cell inner products sum ``h^dim * a * b`` over active cells; face inner
products sum over interior faces only.
"""

import numpy as np


def _axis_slices(dim, axis):
    left = [slice(None)] * dim
    left[axis] = slice(None, -1)
    right = [slice(None)] * dim
    right[axis] = slice(1, None)
    inner = [slice(None)] * dim
    inner[axis] = slice(1, -1)
    return tuple(left), tuple(right), tuple(inner)


def gradient(grid, c):
    """Discrete gradient: one face array per axis, zero on boundary faces."""
    out = []
    inv_h = 1.0 / grid.h
    for a in range(grid.dim):
        left, right, inner = _axis_slices(grid.dim, a)
        g = np.zeros(grid.face_shape(a))
        g[inner] = (c[right] - c[left]) * inv_h
        if not grid.all_active:
            g[~grid.interior_face_masks[a]] = 0.0
        out.append(g)
    return out


def divergence(grid, faces):
    """Discrete divergence of per-axis face data; zero on inactive cells."""
    out = np.zeros(grid.shape)
    inv_h = 1.0 / grid.h
    for a in range(grid.dim):
        left, right, _ = _axis_slices(grid.dim, a)
        f = faces[a]
        out += (f[right] - f[left]) * inv_h
    if not grid.all_active:
        out[~grid.active] = 0.0
    return out


def face_average(grid, c):
    """Arithmetic two-point average onto faces.

    Interior faces take the mean of the two neighbors; boundary faces of the
    active region copy the single adjacent active cell value (faces with no
    active neighbor are zero).
    """
    out = []
    for a in range(grid.dim):
        left, right, inner = _axis_slices(grid.dim, a)
        f = np.zeros(grid.face_shape(a))
        f[inner] = 0.5 * (c[left] + c[right])
        first = [slice(None)] * grid.dim
        first[a] = 0
        last = [slice(None)] * grid.dim
        last[a] = -1
        firstc = [slice(None)] * grid.dim
        firstc[a] = 0
        lastc = [slice(None)] * grid.dim
        lastc[a] = -1
        f[tuple(first)] = c[tuple(firstc)]
        f[tuple(last)] = c[tuple(lastc)]
        if not grid.all_active:
            # mask-boundary faces copy the one active neighbor
            act = grid.active
            fl = [slice(None)] * grid.dim
            fl[a] = slice(1, -1)
            onlyl = act[left] & ~act[right]
            onlyr = ~act[left] & act[right]
            inner_view = f[inner]
            inner_view[onlyl] = c[left][onlyl]
            inner_view[onlyr] = c[right][onlyr]
            inner_view[~act[left] & ~act[right]] = 0.0
            f[inner] = inner_view
            for end, endc in ((first, firstc), (last, lastc)):
                edge = f[tuple(end)]
                edge[~act[tuple(endc)]] = 0.0
                f[tuple(end)] = edge
        out.append(f)
    return out


def cell_inner(grid, a, b):
    """(a, b)_h over active cells, fixed summation order."""
    prod = a * b
    if not grid.all_active:
        prod = np.where(grid.active, prod, 0.0)
    return grid.cell_volume * float(prod.sum())


def cell_norm(grid, a):
    return np.sqrt(max(cell_inner(grid, a, a), 0.0))


def face_inner(grid, fa, fb):
    """Face inner product, summed over interior faces of every axis."""
    total = 0.0
    for ax in range(grid.dim):
        prod = fa[ax] * fb[ax]
        prod = np.where(grid.interior_face_masks[ax], prod, 0.0)
        total += float(prod.sum())
    return grid.cell_volume * total


def face_norm(grid, fa):
    return np.sqrt(max(face_inner(grid, fa, fa), 0.0))


def integral(grid, c):
    """(c, 1)_h over active cells."""
    if grid.all_active:
        return grid.cell_volume * float(c.sum())
    return grid.cell_volume * float(c[grid.active].sum())


def weighted_mean(grid, c, w):
    """(w*c, 1)_h / (w, 1)_h for a positive weight field ``w``."""
    return cell_inner(grid, c, w) / integral(grid, w)


def plain_mean(grid, c):
    """(c, 1)_h / (1, 1)_h, the mean over active cells."""
    return integral(grid, c) / (grid.cell_volume * grid.n_active)


def max_norm(grid, c):
    if grid.all_active:
        return float(np.abs(c).max())
    return float(np.abs(c[grid.active]).max())
