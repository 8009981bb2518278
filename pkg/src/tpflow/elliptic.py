"""Variable-coefficient elliptic operator L = (-div(M grad .))/phi and its inverse.

L is symmetric positive semidefinite in the porosity-weighted inner product
(phi a, b)_h with nullspace spanned by constants, so L psi = f is solvable
exactly when f has zero phi-weighted mean, and the inverse is pinned by
returning the representative with zero phi-weighted mean.

The solve multiplies through by phi (A psi = phi*f with A = -div(M grad .))
and runs conjugate gradients on A, whose Krylov space stays inside the
compatible (zero-sum) subspace; the kernel re-centers the residual every
iteration to stop roundoff drift.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .operators import cell_inner, max_norm, plain_mean, weighted_mean


class IncompatibleRHS(ValueError):
    """Right-hand side has a nonzero (weighted) mean beyond tolerance."""


class NoConvergence(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Krylov iteration budget exhausted after {iterations} iterations "
            f"(relative residual {residual:.3e})")


@dataclass(frozen=True)
class KrylovConfig:
    rtol: float = 1e-11
    atol: float = 1e-14
    maxiter: int | None = None  # None means 10 * number of active cells
    jacobi: bool = False

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("Krylov tolerances must be positive")


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float  # final relative residual
    converged: bool


class EllipticProblem:
    """Face mobility + porosity defining L = (-div(M grad .))/phi."""

    def __init__(self, grid, mobility, porosity):
        self.grid = grid
        self.mobility = [np.asarray(m, dtype=float) for m in mobility]
        self.porosity = np.asarray(porosity, dtype=float)
        act = grid.active
        for a, m in enumerate(self.mobility):
            if m.shape != grid.face_shape(a):
                raise ValueError("mobility face array shape mismatch")
            if np.any(m[grid.adjacent_face_masks[a]] <= 0.0):
                raise ValueError("mobility must be strictly positive near active cells")
        phi = self.porosity
        if phi.shape != grid.shape:
            raise ValueError("porosity shape mismatch")
        if np.any(phi[act] <= 0.0) or np.any(phi[act] >= 1.0):
            raise ValueError("porosity must satisfy 0 < phi < 1 on active cells")

    @classmethod
    def poisson(cls, grid):
        """Plain Neumann Laplacian: M = 1, unit weight.

        Bypasses the physical 0 < phi < 1 validation; the unit weight is an
        algebraic device for the H^{-1} norm, not a porous medium.
        """
        prob = cls.__new__(cls)
        prob.grid = grid
        prob.mobility = [np.ones(grid.face_shape(a)) for a in range(grid.dim)]
        prob.porosity = np.ones(grid.shape)
        return prob


def apply_operator(prob, c):
    """L c = (-div(M grad c))/phi, zero on inactive cells."""
    grid = prob.grid
    out = backend.apply_lap(prob.mobility, grid.active, grid.h, c)
    out = np.where(grid.active, out / prob.porosity, 0.0)
    return out


def _resolve_maxiter(cfg, grid):
    return cfg.maxiter if cfg.maxiter is not None else 10 * grid.n_active


def invert(prob, f, cfg=KrylovConfig(), x0=None, check_compatibility=True):
    """Solve L psi = f, returning the zero-phi-mean representative.

    Raises IncompatibleRHS when the phi-weighted mean of f exceeds 1e-10
    relative to max|f|, and NoConvergence when the iteration budget runs out.
    """
    grid = prob.grid
    scale = max_norm(grid, f)
    if check_compatibility and scale > 0.0:
        wm = weighted_mean(grid, f, prob.porosity)
        if abs(wm) > 1e-10 * scale:
            raise IncompatibleRHS(
                f"phi-weighted mean {wm:.3e} exceeds 1e-10 * max|f| = {1e-10 * scale:.3e}")
    b = np.where(grid.active, prob.porosity * f, 0.0)
    x0 = np.zeros(grid.shape) if x0 is None else np.where(grid.active, x0, 0.0)
    x, iters, rnorm, bnorm, ok = backend.cg(
        prob.mobility, grid.active, grid.h, b, x0,
        cfg.rtol, cfg.atol, _resolve_maxiter(cfg, grid), cfg.jacobi)
    relres = rnorm / bnorm if bnorm > 0 else rnorm
    if not ok:
        raise NoConvergence(iters, relres)
    x = np.where(grid.active, x - weighted_mean(grid, x, prob.porosity), 0.0)
    return x, SolveInfo(iters, relres, ok)


def invert_shifted(prob, f, cfg=KrylovConfig(), x0=None):
    """Inverse applied to f minus its phi-weighted mean (total on cell data).

    This is the form the decoupled schemes use: the subtracted constant is
    absorbed by the scalar multiplier of the saturation-mean constraint.
    """
    grid = prob.grid
    shift = weighted_mean(grid, f, prob.porosity)
    psi, info = invert(prob, np.where(grid.active, f - shift, 0.0), cfg, x0,
                       check_compatibility=False)
    return psi, shift, info


def hminus1_norm(grid, c, cfg=KrylovConfig()):
    """Discrete H^{-1} norm sqrt((c, (-lap)^{-1} c)_h) for mean-zero c."""
    scale = max_norm(grid, c)
    if scale == 0.0:
        return 0.0
    if abs(plain_mean(grid, c)) > 1e-10 * scale:
        raise IncompatibleRHS("H^{-1} norm requires a mean-zero field")
    prob = EllipticProblem.poisson(grid)
    psi, _ = invert(prob, c, cfg, check_compatibility=False)
    return float(np.sqrt(max(cell_inner(grid, c, psi), 0.0)))


def dual_norm_weighted(c, prob, cfg=KrylovConfig()):
    """Dual norm sqrt(<c, L^{-1} c>) in the phi-weighted pairing.

    The weighted pairing keeps the bilinear form symmetric positive definite
    for spatially varying porosity; with phi = 1 it reduces to the plain
    (c, L^{-1} c)_h form.
    """
    grid = prob.grid
    scale = max_norm(grid, c)
    if scale == 0.0:
        return 0.0
    wm = weighted_mean(grid, c, prob.porosity)
    if abs(wm) > 1e-10 * scale:
        raise IncompatibleRHS("dual norm requires zero phi-weighted mean")
    psi, _ = invert(prob, c, cfg, check_compatibility=False)
    return float(np.sqrt(max(cell_inner(grid, prob.porosity * c, psi), 0.0)))
