"""Pure-numpy twins of the numba kernels (slow but dependency-free path).

Selected by ``TPF_BACKEND=numpy``.  Semantics match ``_kernels_numba``
(same masked operator, same projected PCG); floating-point results agree to
rounding but are not bitwise identical because numpy reductions use pairwise
summation while the jitted loops are strictly sequential.
"""

import numpy as np

NAME = "numpy"


def _slices(dim, axis):
    left = [slice(None)] * dim
    left[axis] = slice(None, -1)
    right = [slice(None)] * dim
    right[axis] = slice(1, None)
    return tuple(left), tuple(right)


def _inner_faces(mfaces, axis, dim):
    sl = [slice(None)] * dim
    sl[axis] = slice(1, -1)
    return mfaces[axis][tuple(sl)]


def apply_lap(mfaces, active, h, x):
    """out = -div(M grad x); faces touching inactive cells carry no flux."""
    dim = x.ndim
    out = np.zeros_like(x, dtype=np.float64)
    for a in range(dim):
        left, right = _slices(dim, a)
        m = _inner_faces(mfaces, a, dim)
        both = active[left] & active[right]
        flux = np.where(both, m * (x[right] - x[left]), 0.0)
        out[left] -= flux
        out[right] += flux
    out /= h * h
    out[~active] = 0.0
    return out


def _diag(mfaces, active, h):
    dim = active.ndim
    d = np.zeros(active.shape, dtype=np.float64)
    for a in range(dim):
        left, right = _slices(dim, a)
        m = _inner_faces(mfaces, a, dim)
        both = active[left] & active[right]
        mm = np.where(both, m, 0.0)
        d[left] += mm
        d[right] += mm
    d /= h * h
    d[~active] = 0.0
    d[d <= 0.0] = 1.0
    return d


def _dot(a, b, active):
    return float(np.sum(a * b, where=active))


def _project(r, active, n_act):
    mean = float(np.sum(r, where=active)) / n_act
    r[active] -= mean
    r[~active] = 0.0


def cg(mfaces, active, h, b, x0, rtol, atol, maxiter, jacobi):
    """Projected PCG, same contract as the numba version."""
    x = np.array(x0, dtype=np.float64)
    n_act = int(active.sum())
    r = b - apply_lap(mfaces, active, h, x)
    _project(r, active, n_act)

    bnorm = np.sqrt(_dot(b, b, active))
    tol = max(rtol * bnorm, atol)
    rnorm = np.sqrt(_dot(r, r, active))
    if rnorm <= tol:
        return x, 0, float(rnorm), float(bnorm), True

    diag = _diag(mfaces, active, h) if jacobi else None
    if jacobi:
        z = r / diag
        _project(z, active, n_act)
    else:
        z = r.copy()
    p = z.copy()
    rz = _dot(r, z, active)

    it = 0
    while it < maxiter:
        it += 1
        q = apply_lap(mfaces, active, h, p)
        _project(q, active, n_act)
        pq = _dot(p, q, active)
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        _project(r, active, n_act)
        rnorm = np.sqrt(_dot(r, r, active))
        if rnorm <= tol:
            return x, it, float(rnorm), float(bnorm), True
        if jacobi:
            z = r / diag
            _project(z, active, n_act)
        else:
            z = r.copy()
        rz_new = _dot(r, z, active)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, it, float(rnorm), float(bnorm), rnorm <= tol
