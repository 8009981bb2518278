"""Field snapshots (text and binary) and legacy-VTK output.

Snapshot format: a header line ``dim N M [P] h`` followed by the cell
values in storage order (x fastest, then y, then z), as plain text or as
little-endian 64-bit floats after the header line.  Text floats use the
shortest round-trip decimal, so a write/read cycle is bit exact.

VTK output is legacy ASCII STRUCTURED_POINTS with CELL_DATA scalars,
readable by any of the usual viewers.
"""

import numpy as np

from .grid import Grid


def _header(grid):
    dims = " ".join(str(n) for n in grid.shape)
    return f"{grid.dim} {dims} {repr(grid.h)}"


def _parse_header(line):
    parts = line.split()
    dim = int(parts[0])
    shape = tuple(int(p) for p in parts[1:1 + dim])
    h = float(parts[1 + dim])
    return dim, shape, h


def _storage_order(grid, c):
    return np.asarray(c, dtype=np.float64).ravel(order="F")


def _from_storage(shape, flat):
    return flat.reshape(shape, order="F")


def write_field_text(path, grid, c):
    flat = _storage_order(grid, c)
    with open(path, "w") as fh:
        fh.write(_header(grid) + "\n")
        fh.write("\n".join(repr(float(v)) for v in flat))
        fh.write("\n")


def read_field_text(path):
    with open(path) as fh:
        dim, shape, h = _parse_header(fh.readline())
        flat = np.array([float(tok) for tok in fh.read().split()])
    return shape, h, _from_storage(shape, flat)


def write_field_binary(path, grid, c):
    flat = _storage_order(grid, c).astype("<f8")
    with open(path, "wb") as fh:
        fh.write((_header(grid) + "\n").encode("ascii"))
        fh.write(flat.tobytes())


def read_field_binary(path):
    with open(path, "rb") as fh:
        dim, shape, h = _parse_header(fh.readline().decode("ascii"))
        flat = np.frombuffer(fh.read(), dtype="<f8")
    return shape, h, _from_storage(shape, flat)


def write_mask(path, grid):
    """Active mask as a plain 0/1 grid in storage order, one row per line."""
    flat = grid.active.astype(int).ravel(order="F")
    n = grid.shape[0]
    with open(path, "w") as fh:
        fh.write(_header(grid) + "\n")
        for start in range(0, flat.size, n):
            fh.write(" ".join(str(v) for v in flat[start:start + n]) + "\n")


def read_mask(path):
    with open(path) as fh:
        dim, shape, h = _parse_header(fh.readline())
        flat = np.array([int(tok) for tok in fh.read().split()], dtype=bool)
    return shape, h, _from_storage(shape, flat.astype(float)).astype(bool)


def write_vtk(path, grid, fields, title="tpflow snapshot"):
    """Legacy ASCII STRUCTURED_POINTS file with one CELL_DATA scalar per field."""
    shape3 = tuple(grid.shape) + (1,) * (3 - grid.dim)
    origin3 = tuple(grid.origin) + (0.0,) * (3 - grid.dim)
    n_cells = int(np.prod(grid.shape))
    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {shape3[0] + 1} {shape3[1] + 1} {shape3[2] + 1}",
        f"ORIGIN {origin3[0]!r} {origin3[1]!r} {origin3[2]!r}",
        f"SPACING {grid.h!r} {grid.h!r} {grid.h!r}",
        f"CELL_DATA {n_cells}",
    ]
    for name, values in fields.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        flat = _storage_order(grid, values)
        lines.extend(repr(float(v)) for v in flat)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
