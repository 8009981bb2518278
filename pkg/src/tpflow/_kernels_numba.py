"""Numba kernels for the variable-coefficient elliptic solves.

These are the only hot loops in the package: applying
``A x = -div(M grad x)`` with a no-flow mask and running preconditioned
conjugate gradients on it.  Loops are sequential (no parallel reductions,
no fastmath) so results are bitwise reproducible run to run.

The companion module ``_kernels_numpy`` implements the same operations with
vectorized numpy; ``backend`` picks one via the ``TPF_BACKEND`` env var.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True, nogil=True)
def _apply_2d(mx, my, act, invh2, x, out):
    n, m = x.shape
    for i in range(n):
        for j in range(m):
            if not act[i, j]:
                out[i, j] = 0.0
                continue
            v = x[i, j]
            acc = 0.0
            if i > 0 and act[i - 1, j]:
                acc += mx[i, j] * (v - x[i - 1, j])
            if i < n - 1 and act[i + 1, j]:
                acc += mx[i + 1, j] * (v - x[i + 1, j])
            if j > 0 and act[i, j - 1]:
                acc += my[i, j] * (v - x[i, j - 1])
            if j < m - 1 and act[i, j + 1]:
                acc += my[i, j + 1] * (v - x[i, j + 1])
            out[i, j] = acc * invh2


@njit(cache=True, nogil=True)
def _apply_3d(mx, my, mz, act, invh2, x, out):
    n, m, p = x.shape
    for i in range(n):
        for j in range(m):
            for k in range(p):
                if not act[i, j, k]:
                    out[i, j, k] = 0.0
                    continue
                v = x[i, j, k]
                acc = 0.0
                if i > 0 and act[i - 1, j, k]:
                    acc += mx[i, j, k] * (v - x[i - 1, j, k])
                if i < n - 1 and act[i + 1, j, k]:
                    acc += mx[i + 1, j, k] * (v - x[i + 1, j, k])
                if j > 0 and act[i, j - 1, k]:
                    acc += my[i, j, k] * (v - x[i, j - 1, k])
                if j < m - 1 and act[i, j + 1, k]:
                    acc += my[i, j + 1, k] * (v - x[i, j + 1, k])
                if k > 0 and act[i, j, k - 1]:
                    acc += mz[i, j, k] * (v - x[i, j, k - 1])
                if k < p - 1 and act[i, j, k + 1]:
                    acc += mz[i, j, k + 1] * (v - x[i, j, k + 1])
                out[i, j, k] = acc * invh2


@njit(cache=True, nogil=True)
def _dot(a, b, act):
    s = 0.0
    fa = a.ravel()
    fb = b.ravel()
    fm = act.ravel()
    for i in range(fa.size):
        if fm[i]:
            s += fa[i] * fb[i]
    return s


@njit(cache=True, nogil=True)
def _project(r, act, n_act):
    s = 0.0
    fr = r.ravel()
    fm = act.ravel()
    for i in range(fr.size):
        if fm[i]:
            s += fr[i]
    mean = s / n_act
    for i in range(fr.size):
        if fm[i]:
            fr[i] -= mean
        else:
            fr[i] = 0.0


@njit(cache=True, nogil=True)
def _diag_2d(mx, my, act, invh2, out):
    n, m = out.shape
    for i in range(n):
        for j in range(m):
            d = 0.0
            if act[i, j]:
                if i > 0 and act[i - 1, j]:
                    d += mx[i, j]
                if i < n - 1 and act[i + 1, j]:
                    d += mx[i + 1, j]
                if j > 0 and act[i, j - 1]:
                    d += my[i, j]
                if j < m - 1 and act[i, j + 1]:
                    d += my[i, j + 1]
            out[i, j] = d * invh2 if d > 0.0 else 1.0


@njit(cache=True, nogil=True)
def _diag_3d(mx, my, mz, act, invh2, out):
    n, m, p = out.shape
    for i in range(n):
        for j in range(m):
            for k in range(p):
                d = 0.0
                if act[i, j, k]:
                    if i > 0 and act[i - 1, j, k]:
                        d += mx[i, j, k]
                    if i < n - 1 and act[i + 1, j, k]:
                        d += mx[i + 1, j, k]
                    if j > 0 and act[i, j - 1, k]:
                        d += my[i, j, k]
                    if j < m - 1 and act[i, j + 1, k]:
                        d += my[i, j + 1, k]
                    if k > 0 and act[i, j, k - 1]:
                        d += mz[i, j, k]
                    if k < p - 1 and act[i, j, k + 1]:
                        d += mz[i, j, k + 1]
                out[i, j, k] = d * invh2 if d > 0.0 else 1.0


@njit(cache=True, nogil=True)
def _cg_2d(mx, my, act, invh2, b, x, rtol, atol, maxiter, use_jacobi):
    n_act = 0
    fm = act.ravel()
    for i in range(fm.size):
        if fm[i]:
            n_act += 1

    r = np.empty_like(b)
    q = np.empty_like(b)
    _apply_2d(mx, my, act, invh2, x, q)
    fr = r.ravel()
    fb = b.ravel()
    fq = q.ravel()
    for i in range(fr.size):
        fr[i] = fb[i] - fq[i]
    _project(r, act, n_act)

    bnorm = np.sqrt(_dot(b, b, act))
    tol = rtol * bnorm if rtol * bnorm > atol else atol
    rnorm = np.sqrt(_dot(r, r, act))
    if rnorm <= tol:
        return 0, rnorm, bnorm, True

    diag = np.empty_like(b)
    if use_jacobi:
        _diag_2d(mx, my, act, invh2, diag)

    z = np.empty_like(b)
    fz = z.ravel()
    fd = diag.ravel()
    if use_jacobi:
        for i in range(fz.size):
            fz[i] = fr[i] / fd[i]
        _project(z, act, n_act)
    else:
        for i in range(fz.size):
            fz[i] = fr[i]
    p = z.copy()
    rz = _dot(r, z, act)

    it = 0
    while it < maxiter:
        it += 1
        _apply_2d(mx, my, act, invh2, p, q)
        _project(q, act, n_act)
        pq = _dot(p, q, act)
        if pq <= 0.0:
            break
        alpha = rz / pq
        fx = x.ravel()
        fp = p.ravel()
        for i in range(fx.size):
            fx[i] += alpha * fp[i]
            fr[i] -= alpha * fq[i]
        _project(r, act, n_act)
        rnorm = np.sqrt(_dot(r, r, act))
        if rnorm <= tol:
            return it, rnorm, bnorm, True
        if use_jacobi:
            for i in range(fz.size):
                fz[i] = fr[i] / fd[i]
            _project(z, act, n_act)
        else:
            for i in range(fz.size):
                fz[i] = fr[i]
        rz_new = _dot(r, z, act)
        beta = rz_new / rz
        rz = rz_new
        for i in range(fp.size):
            fp[i] = fz[i] + beta * fp[i]
    return it, rnorm, bnorm, rnorm <= tol


@njit(cache=True, nogil=True)
def _cg_3d(mx, my, mz, act, invh2, b, x, rtol, atol, maxiter, use_jacobi):
    n_act = 0
    fm = act.ravel()
    for i in range(fm.size):
        if fm[i]:
            n_act += 1

    r = np.empty_like(b)
    q = np.empty_like(b)
    _apply_3d(mx, my, mz, act, invh2, x, q)
    fr = r.ravel()
    fb = b.ravel()
    fq = q.ravel()
    for i in range(fr.size):
        fr[i] = fb[i] - fq[i]
    _project(r, act, n_act)

    bnorm = np.sqrt(_dot(b, b, act))
    tol = rtol * bnorm if rtol * bnorm > atol else atol
    rnorm = np.sqrt(_dot(r, r, act))
    if rnorm <= tol:
        return 0, rnorm, bnorm, True

    diag = np.empty_like(b)
    if use_jacobi:
        _diag_3d(mx, my, mz, act, invh2, diag)

    z = np.empty_like(b)
    fz = z.ravel()
    fd = diag.ravel()
    if use_jacobi:
        for i in range(fz.size):
            fz[i] = fr[i] / fd[i]
        _project(z, act, n_act)
    else:
        for i in range(fz.size):
            fz[i] = fr[i]
    p = z.copy()
    rz = _dot(r, z, act)

    it = 0
    while it < maxiter:
        it += 1
        _apply_3d(mx, my, mz, act, invh2, p, q)
        _project(q, act, n_act)
        pq = _dot(p, q, act)
        if pq <= 0.0:
            break
        alpha = rz / pq
        fx = x.ravel()
        fp = p.ravel()
        for i in range(fx.size):
            fx[i] += alpha * fp[i]
            fr[i] -= alpha * fq[i]
        _project(r, act, n_act)
        rnorm = np.sqrt(_dot(r, r, act))
        if rnorm <= tol:
            return it, rnorm, bnorm, True
        if use_jacobi:
            for i in range(fz.size):
                fz[i] = fr[i] / fd[i]
            _project(z, act, n_act)
        else:
            for i in range(fz.size):
                fz[i] = fr[i]
        rz_new = _dot(r, z, act)
        beta = rz_new / rz
        rz = rz_new
        for i in range(fp.size):
            fp[i] = fz[i] + beta * fp[i]
    return it, rnorm, bnorm, rnorm <= tol


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def apply_lap(mfaces, active, h, x):
    """out = -div(M grad x) / h^2 scaling included; zero on inactive cells."""
    out = np.empty_like(x, dtype=np.float64)
    invh2 = 1.0 / (h * h)
    act = np.ascontiguousarray(active)
    if x.ndim == 2:
        _apply_2d(_as_c(mfaces[0]), _as_c(mfaces[1]), act, invh2, _as_c(x), out)
    else:
        _apply_3d(_as_c(mfaces[0]), _as_c(mfaces[1]), _as_c(mfaces[2]), act,
                  invh2, _as_c(x), out)
    return out


def cg(mfaces, active, h, b, x0, rtol, atol, maxiter, jacobi):
    """PCG for A x = b, A = -div(M grad .) with the no-flow mask.

    The residual is re-centered (active-cell mean removed) every iteration,
    which pins the compatible subspace against roundoff drift.  Returns
    ``(x, iters, rnorm, bnorm, converged)``.
    """
    x = _as_c(x0).copy()
    invh2 = 1.0 / (h * h)
    act = np.ascontiguousarray(active)
    if b.ndim == 2:
        it, rnorm, bnorm, ok = _cg_2d(
            _as_c(mfaces[0]), _as_c(mfaces[1]), act, invh2, _as_c(b), x,
            rtol, atol, maxiter, jacobi)
    else:
        it, rnorm, bnorm, ok = _cg_3d(
            _as_c(mfaces[0]), _as_c(mfaces[1]), _as_c(mfaces[2]), act, invh2,
            _as_c(b), x, rtol, atol, maxiter, jacobi)
    return x, int(it), float(rnorm), float(bnorm), bool(ok)
