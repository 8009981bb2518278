"""Uniform staggered Cartesian grids in 2D/3D with an active-cell mask.

Cell-centered scalars live on arrays of shape ``(N, M)`` (2D) or
``(N, M, P)`` (3D), indexed ``[i_x, i_y, i_z]``.  Face data is stored as one
array per axis; the axis-``a`` face array has one extra entry along ``a``,
so x-face values sit between consecutive cells in ``i_x``.

Storage order for snapshots is x-fastest, i.e. ``ravel(order="F")`` of the
cell array.  Reductions always use a fixed sequential order so repeated runs
are bitwise identical.

Irregular domains are handled by a boolean ``active`` mask: inactive cells
are excluded from all sums, and any face touching an inactive cell is
treated as a no-flow boundary face.
"""

from functools import cached_property

import numpy as np
from scipy import ndimage


class GridError(ValueError):
    pass


class Grid:
    """Uniform cell-centered grid with mesh size ``h`` and optional mask.

    Parameters
    ----------
    shape : tuple of int
        Cells per axis, ``(N, M)`` or ``(N, M, P)``; each entry >= 2.
    h : float
        Mesh size, identical along every axis.
    origin : tuple of float, optional
        Coordinates of the lower corner of the domain (defaults to zeros).
    active : bool ndarray, optional
        Active-cell mask of shape ``shape``; must form a single
        face-connected component.  ``None`` means all cells active.
    """

    def __init__(self, shape, h, origin=None, active=None):
        shape = tuple(int(n) for n in shape)
        if len(shape) not in (2, 3):
            raise GridError(f"grid must be 2D or 3D, got shape {shape}")
        if any(n < 2 for n in shape):
            raise GridError(f"need at least 2 cells per axis, got {shape}")
        if not h > 0:
            raise GridError(f"mesh size must be positive, got {h}")
        self.shape = shape
        self.dim = len(shape)
        self.h = float(h)
        if origin is None:
            origin = (0.0,) * self.dim
        self.origin = tuple(float(x) for x in origin)
        if len(self.origin) != self.dim:
            raise GridError("origin length must match grid dimension")
        if active is None:
            active = np.ones(shape, dtype=bool)
        else:
            active = np.asarray(active, dtype=bool)
            if active.shape != shape:
                raise GridError("active mask shape must match grid shape")
            self._check_connected(active)
        self.active = active
        self.active.setflags(write=False)

    @classmethod
    def from_extents(cls, extents, shape, active=None):
        """Build a grid from per-axis ``(lo, hi)`` extents.

        Rejects extents whose implied spacings differ by more than 1e-12
        relative (the discretization assumes one uniform ``h``).
        """
        shape = tuple(int(n) for n in shape)
        extents = [(float(a), float(b)) for a, b in extents]
        hs = [(b - a) / n for (a, b), n in zip(extents, shape)]
        h = hs[0]
        for other in hs[1:]:
            if abs(other - h) > 1e-12 * max(abs(h), abs(other)):
                raise GridError(f"non-uniform spacing: {hs}")
        return cls(shape, h, origin=tuple(a for a, _ in extents), active=active)

    @staticmethod
    def _check_connected(active):
        if not active.any():
            raise GridError("active mask has no active cells")
        # face connectivity only (no diagonals)
        structure = ndimage.generate_binary_structure(active.ndim, 1)
        _, n_comp = ndimage.label(active, structure=structure)
        if n_comp != 1:
            raise GridError(f"active region has {n_comp} connected components")

    # -- derived quantities ------------------------------------------------

    @cached_property
    def n_active(self):
        return int(self.active.sum())

    @cached_property
    def cell_volume(self):
        """Measure h^dim of one cell."""
        return self.h ** self.dim

    @cached_property
    def all_active(self):
        return bool(self.active.all())

    def face_shape(self, axis):
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    @cached_property
    def interior_face_masks(self):
        """Per axis: True on faces whose two neighbors are both active.

        These are the faces that carry fluxes and enter face inner products;
        every other face is a (no-flow) boundary face of the active region.
        """
        masks = []
        for a in range(self.dim):
            m = np.zeros(self.face_shape(a), dtype=bool)
            lo = [slice(None)] * self.dim
            lo[a] = slice(1, -1)
            left = [slice(None)] * self.dim
            left[a] = slice(None, -1)
            right = [slice(None)] * self.dim
            right[a] = slice(1, None)
            m[tuple(lo)] = self.active[tuple(left)] & self.active[tuple(right)]
            m.setflags(write=False)
            masks.append(m)
        return masks

    @cached_property
    def adjacent_face_masks(self):
        """Per axis: True on faces with at least one active neighbor cell."""
        masks = []
        for a in range(self.dim):
            m = np.zeros(self.face_shape(a), dtype=bool)
            left = [slice(None)] * self.dim
            left[a] = slice(None, -1)
            right = [slice(None)] * self.dim
            right[a] = slice(1, None)
            m[tuple(right)] |= self.active
            m[tuple(left)] |= self.active
            m.setflags(write=False)
            masks.append(m)
        return masks

    def cell_centers(self):
        """Open-grid coordinate arrays (broadcast against cell arrays)."""
        coords = []
        for a in range(self.dim):
            x = self.origin[a] + (np.arange(self.shape[a]) + 0.5) * self.h
            s = [1] * self.dim
            s[a] = self.shape[a]
            coords.append(x.reshape(s))
        return tuple(coords)

    def zeros_cell(self):
        return np.zeros(self.shape)

    def full_cell(self, value):
        return np.full(self.shape, float(value))

    def zeros_faces(self):
        return [np.zeros(self.face_shape(a)) for a in range(self.dim)]

    def compatible(self, other):
        return (
            self.shape == other.shape
            and self.h == other.h
            and np.array_equal(self.active, other.active)
        )

    def __repr__(self):
        tag = "" if self.all_active else f", {self.n_active} active"
        return f"Grid(shape={self.shape}, h={self.h:g}{tag})"


def cell_field(grid, values):
    """Validate and return a cell array for ``grid`` (finite on active cells)."""
    c = np.asarray(values, dtype=float)
    if c.shape != grid.shape:
        c = np.broadcast_to(c, grid.shape).astype(float)
    if not np.isfinite(c[grid.active]).all():
        raise GridError("non-finite values on active cells")
    return np.array(c, dtype=float)


def face_field(grid, per_axis):
    """Validate a per-axis list of face arrays for ``grid``."""
    out = []
    for a, f in enumerate(per_axis):
        f = np.asarray(f, dtype=float)
        if f.shape != grid.face_shape(a):
            raise GridError(
                f"axis {a} face array has shape {f.shape}, expected {grid.face_shape(a)}"
            )
        if not np.isfinite(f[grid.interior_face_masks[a]]).all():
            raise GridError("non-finite values on interior faces")
        out.append(f)
    return out
