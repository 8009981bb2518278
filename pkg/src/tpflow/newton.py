"""Safeguarded inexact Newton solver for the per-step saturation problem.

The decoupled schemes reduce every time step to one scalar equation per
cell,

    mu_diff(S) + (1/dt) [Lw^{-1} + Ln^{-1}](S - S_old) - lift = c,

coupled to the porosity-weighted mean constraint
<S - S_old, 1>_phi = mass_target, where c is the scalar multiplier absorbed
from the pressure gauge.  The equation is the gradient (in the
phi-weighted inner product) of a strictly convex functional, so the
Jacobian

    J v = mu_diff'(S) v + (1/dt) [Lw^{-1} + Ln^{-1}] v

is symmetric positive definite on the constraint subspace.  Each Newton
step therefore solves the projected system with preconditioned conjugate
gradients (the nullspace route through the symmetric saddle problem); every
Jacobian application performs two inner elliptic inverses plus the
pointwise derivative term.  The inner tolerance follows the current
residual (forcing 1e-2), which keeps the expensive elliptic solves cheap
away from the solution without losing the quadratic tail.

Iterates stay strictly inside (0,1) via an interior safeguard: the step is
scaled so no cell moves more than a fraction theta of its distance to the
nearest bound, then backtracked until the projected residual norm
decreases.
"""

from dataclasses import dataclass, field

import numpy as np

from .elliptic import KrylovConfig, invert_shifted
from .operators import cell_inner, integral, max_norm
from .physics import DomainError


class DampingStall(RuntimeError):
    """Backtracking could not find a damped step that reduces the residual."""


class ConvexityLost(RuntimeError):
    """Hessian diagonal went non-positive at an iterate (runtime convexity check)."""


@dataclass(frozen=True)
class NewtonConfig:
    step_tol: float = 1e-6        # infinity-norm tolerance on the saturation update
    max_iter: int = 100
    theta: float = 0.9            # interior safeguard fraction
    forcing: float = 1e-2         # inner Krylov tolerance relative to the residual
    krylov: KrylovConfig = field(default_factory=KrylovConfig)
    max_inner: int | None = None  # cap on projected-CG iterations per Newton step
    damping_min: float = 1e-12
    # keep iterating into the quadratic tail until the residual has dropped by
    # this factor (or stagnates at its noise floor); this is what pushes the
    # reconstructed per-cell mass residuals down to the linear-solve tolerance
    residual_rtol: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0, 1)")
        if self.step_tol <= 0:
            raise ValueError("step tolerance must be positive")


@dataclass
class NewtonStats:
    iterations: int = 0
    inner_iterations: int = 0     # projected-CG iterations
    krylov_iterations: int = 0    # elliptic CG iterations (all inverse applications)
    residual_norm: float = 0.0
    constraint_gap: float = 0.0
    dampings: int = 0
    converged: bool = True


class SaturationProblem:
    """Residual bundle: potentials, frozen elliptic inverses, and constraint.

    ``mu_diff(S)`` and ``mu_diff_deriv(S)`` are the pointwise potential
    difference and its derivative; ``lift`` is the source term
    Lw^{-1}(q_w/phi) - Ln^{-1}(q_n/phi) (zero cell field without sources);
    ``mass_target`` is the prescribed value of <S - S_old, 1>_phi.
    """

    def __init__(self, grid, phi, prob_w, prob_n, s_old, dt,
                 mu_diff, mu_diff_deriv, lift=None, mass_target=0.0,
                 krylov=KrylovConfig()):
        self.grid = grid
        self.phi = phi
        self.prob_w = prob_w
        self.prob_n = prob_n
        self.s_old = s_old
        self.dt = dt
        self.mu_diff = mu_diff
        self.mu_diff_deriv = mu_diff_deriv
        self.lift = lift if lift is not None else grid.zeros_cell()
        self.mass_target = float(mass_target)
        self.krylov = krylov
        self.wsum = integral(grid, phi)
        self._psi_w = None  # warm starts for the residual solves
        self._psi_n = None
        self.krylov_count = 0

    # -- phi-weighted geometry ----------------------------------------------

    def phi_dot(self, a, b):
        return cell_inner(self.grid, self.phi * a, b)

    def phi_norm(self, a):
        return float(np.sqrt(max(self.phi_dot(a, a), 0.0)))

    def project(self, v):
        mean = self.phi_dot(v, np.ones(self.grid.shape)) / self.wsum
        return np.where(self.grid.active, v - mean, 0.0)

    def constraint_gap(self, s):
        return self.mass_target - self.phi_dot(s - self.s_old, np.ones(self.grid.shape))

    # -- residual and Jacobian action ----------------------------------------

    def residual(self, s):
        """Raw residual (before subtracting the multiplier c)."""
        ds = np.where(self.grid.active, (s - self.s_old) / self.dt, 0.0)
        psi_w, _, info_w = invert_shifted(self.prob_w, ds, self.krylov, x0=self._psi_w)
        psi_n, _, info_n = invert_shifted(self.prob_n, ds, self.krylov, x0=self._psi_n)
        self._psi_w, self._psi_n = psi_w, psi_n
        self.krylov_count += info_w.iterations + info_n.iterations
        return self.mu_diff(s) + psi_w + psi_n - self.lift

    def jac_vec(self, diag, v):
        psi_w, _, info_w = invert_shifted(self.prob_w, v, self.krylov)
        psi_n, _, info_n = invert_shifted(self.prob_n, v, self.krylov)
        self.krylov_count += info_w.iterations + info_n.iterations
        return diag * v + (psi_w + psi_n) / self.dt


def safeguard_step(s, ds, theta, active=None):
    """Largest step length alpha <= 1 keeping s + alpha*ds strictly interior.

    Each cell may move at most a fraction theta of its distance to the
    nearest bound, so the returned alpha is always positive.
    """
    if active is None:
        active = np.ones(s.shape, dtype=bool)
    alpha = 1.0
    neg = active & (ds < 0)
    if neg.any():
        alpha = min(alpha, float((theta * s[neg] / -ds[neg]).min()))
    pos = active & (ds > 0)
    if pos.any():
        alpha = min(alpha, float((theta * (1.0 - s[pos]) / ds[pos]).min()))
    return alpha


def _projected_pcg(problem, diag, rhs, tol, maxiter):
    """PCG for P J P w = rhs on the zero-phi-mean subspace (diag preconditioner)."""
    grid = problem.grid
    w = np.zeros(grid.shape)
    r = rhs.copy()
    rnorm = problem.phi_norm(r)
    if rnorm <= tol:
        return w, 0
    z = problem.project(r / diag)
    p = z.copy()
    rz = problem.phi_dot(r, z)
    it = 0
    while it < maxiter:
        it += 1
        q = problem.project(problem.jac_vec(diag, p))
        pq = problem.phi_dot(p, q)
        if pq <= 0.0:
            raise ConvexityLost(
                "projected Jacobian lost positive definiteness (p^T J p <= 0)")
        alpha = rz / pq
        w += alpha * p
        r -= alpha * q
        rnorm = problem.phi_norm(r)
        if rnorm <= tol:
            break
        z = problem.project(r / diag)
        rz_new = problem.phi_dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return w, it


def solve(problem, s_init, cfg=NewtonConfig()):
    """Newton iteration for the constrained saturation problem.

    Returns ``(s, c, stats)`` where c is the scalar multiplier (the
    phi-weighted mean of the raw residual at the solution).  On hitting the
    iteration cap the best iterate is returned with ``stats.converged``
    False; a failed backtracking line search raises DampingStall.
    """
    grid = problem.grid
    act = grid.active
    s = np.where(act, s_init, 0.5)
    if np.any(s[act] <= 0.0) or np.any(s[act] >= 1.0):
        raise DomainError("initial saturation must be strictly interior")

    stats = NewtonStats()
    problem.krylov_count = 0
    ones = np.ones(grid.shape)

    R = problem.residual(s)
    Rp = problem.project(R)
    merit = problem.phi_norm(Rp)
    scale = 1.0 + problem.phi_norm(R)
    res_target = cfg.residual_rtol * (1.0 + merit)
    maxinner = cfg.max_inner if cfg.max_inner is not None else 4 * grid.n_active
    step_ok = False   # step criterion met at least once
    stagnant = 0      # consecutive iterations with < 2x residual improvement

    for _ in range(cfg.max_iter):
        rc = problem.constraint_gap(s)
        if merit <= 1e-13 * scale and abs(rc) <= 1e-12 * problem.wsum:
            break
        if step_ok and (merit <= res_target or stagnant >= 2):
            break
        stats.iterations += 1

        diag = problem.mu_diff_deriv(s)
        if np.any(diag[act] <= 0.0):
            raise ConvexityLost(
                "pointwise Hessian diagonal is non-positive; the per-step "
                "functional is not convex at this iterate")
        diag = np.where(act, diag, 1.0)

        ds0 = rc / problem.wsum
        rhs = -problem.project(Rp + diag * ds0)
        tol = cfg.forcing * max(problem.phi_norm(rhs), 1e-300)
        w, inner = _projected_pcg(problem, diag, rhs, tol, maxinner)
        stats.inner_iterations += inner
        dstep = w + ds0 * ones

        alpha = safeguard_step(s, dstep, cfg.theta, act)
        accepted = False
        while alpha >= cfg.damping_min:
            s_try = np.where(act, s + alpha * dstep, 0.5)
            R_try = problem.residual(s_try)
            Rp_try = problem.project(R_try)
            merit_try = problem.phi_norm(Rp_try)
            if merit_try <= merit * (1.0 - 1e-4 * alpha) + 1e-14 * scale:
                accepted = True
                break
            alpha *= 0.5
            stats.dampings += 1
        if not accepted:
            if step_ok:
                break  # residual pinned at its evaluation noise floor
            raise DampingStall(
                f"no damped step reduced the residual (merit {merit:.3e})")

        step_size = alpha * max_norm(grid, dstep)
        stagnant = stagnant + 1 if merit_try > 0.5 * merit else 0
        s, R, Rp, merit = s_try, R_try, Rp_try, merit_try
        if step_size < cfg.step_tol:
            step_ok = True
    else:
        stats.converged = merit <= 1e3 * res_target and step_ok

    # exact mean fix (roundoff-level once converged)
    s = np.where(act, s + problem.constraint_gap(s) / problem.wsum, 0.5)
    c = problem.phi_dot(R, ones) / problem.wsum
    stats.residual_norm = merit
    stats.constraint_gap = abs(problem.constraint_gap(s))
    stats.krylov_iterations = problem.krylov_count
    return s, float(c), stats
