"""Fully decoupled first- and second-order time steps (no-flow problems).

Each step solves one nonlinear scalar equation for the new wetting
saturation (the pressure has been eliminated by applying the inverse
elliptic operators of the two phase equations and subtracting), then
recovers the pressure from the wetting-phase equation and derives the
non-wetting saturation from the constraint S_n = 1 - S_w.

First order: mobilities frozen at S^k, potentials
mu_w = sigma_w ln(S^{k+1}) + sigma_wn S_n^k (and symmetrically for n).

Second order: mobilities at the extrapolation 3/2 S^k - 1/2 S^{k-1} with
the sqrt(avg^2 + dt^6) regularization, secant potentials at the half step
plus the dt(ln S^{k+1} - ln S^k) stabilization, pressure defined at the
half step.  The scheme needs S^{k-1}; ``bootstrap`` produces it with a
single first-order step.

Sources q_alpha enter through shifted inverse lifts and move the mean
constraint to <S^{k+1} - S^k, 1>_phi = dt (q_w, 1)_h, which is exactly the
discrete global mass balance of the wetting phase.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import newton as newton_mod
from . import physics
from .diagnostics import audit_step
from .elliptic import EllipticProblem, KrylovConfig, invert_shifted
from .newton import NewtonConfig, SaturationProblem
from .operators import integral, max_norm, plain_mean
from .physics import DomainError, chem_potential_first, mobility_face, mu_w_half


class CompatibilityError(ValueError):
    """Sources of a closed problem do not cancel in total."""


class StepFailure(RuntimeError):
    """Newton did not converge; the driver may retry with a smaller step."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass
class SimState:
    s_w: np.ndarray
    p: np.ndarray
    t: float = 0.0
    k: int = 0
    s_w_prev: np.ndarray | None = None

    @classmethod
    def initial(cls, grid, s_w0):
        s = np.asarray(s_w0, dtype=float)
        if s.shape != grid.shape:
            s = np.broadcast_to(s, grid.shape).astype(float)
        return cls(s_w=np.array(s), p=grid.zeros_cell())

    @property
    def s_n(self):
        """Non-wetting saturation, always derived from the constraint."""
        return 1.0 - self.s_w


@dataclass
class SourceSpec:
    """Injection/production rates as cell-field-valued functions of time (1/s)."""

    q_w: object = None
    q_n: object = None

    @classmethod
    def zero(cls):
        return cls()

    @property
    def is_zero(self):
        return self.q_w is None and self.q_n is None

    def evaluate(self, grid, t):
        qw = self.q_w(t) if self.q_w is not None else grid.zeros_cell()
        qn = self.q_n(t) if self.q_n is not None else grid.zeros_cell()
        return np.asarray(qw, dtype=float), np.asarray(qn, dtype=float)


def _check_interior(grid, s):
    act = grid.active
    if np.any(s[act] <= 0.0) or np.any(s[act] >= 1.0):
        raise DomainError("saturation left the open interval (0, 1)")


def _check_compatible(grid, q_w, q_n):
    total = integral(grid, q_w + q_n)
    scale = integral(grid, np.abs(q_w) + np.abs(q_n))
    if abs(total) > 1e-12 * max(scale, 1e-300):
        raise CompatibilityError(
            f"(q_w + q_n, 1)_h = {total:.3e} violates the closed-system balance")


def _default_krylov(krylov):
    # steppers turn the optional Jacobi flag on; heterogeneous mobilities
    # otherwise dominate the inner iteration counts
    return krylov if krylov is not None else KrylovConfig(jacobi=True)


def _source_lift(grid, phi, prob_w, prob_n, q_w, q_n, krylov):
    lift = grid.zeros_cell()
    iters = 0
    if np.any(q_w != 0.0):
        psi, _, info = invert_shifted(prob_w, np.where(grid.active, q_w / phi, 0.0), krylov)
        lift = lift + psi
        iters += info.iterations
    if np.any(q_n != 0.0):
        psi, _, info = invert_shifted(prob_n, np.where(grid.active, q_n / phi, 0.0), krylov)
        lift = lift - psi
        iters += info.iterations
    return lift, iters


def _recover_pressure(grid, prob_w, s_new, s_old, dt, q_w, phi, mu_w, krylov):
    """p = -mu_w - Lw^{-1}((S^{k+1}-S^k)/dt - q_w/phi), normalized to zero mean."""
    rhs = np.where(grid.active, (s_new - s_old) / dt - q_w / phi, 0.0)
    psi, _, info = invert_shifted(prob_w, rhs, krylov)
    p = -mu_w - psi
    p = np.where(grid.active, p - plain_mean(grid, p), 0.0)
    return p, info.iterations


def step_first(state, medium, params, sources, dt, newton_cfg=None, krylov=None):
    """One step of the first-order decoupled scheme; returns (state', record)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = medium.grid
    phi = medium.porosity
    s_old = state.s_w
    _check_interior(grid, s_old)
    krylov = _default_krylov(krylov)
    newton_cfg = newton_cfg if newton_cfg is not None else NewtonConfig(krylov=krylov)

    mob_w = mobility_face(grid, s_old, medium, params.eta_w, params.m)
    mob_n = mobility_face(grid, 1.0 - s_old, medium, params.eta_n, params.m)
    prob_w = EllipticProblem(grid, mob_w, phi)
    prob_n = EllipticProblem(grid, mob_n, phi)

    q_w, q_n = sources.evaluate(grid, state.t + dt)
    _check_compatible(grid, q_w, q_n)
    lift, lift_iters = _source_lift(grid, phi, prob_w, prob_n, q_w, q_n, krylov)

    problem = SaturationProblem(
        grid, phi, prob_w, prob_n, s_old, dt,
        mu_diff=lambda s: physics.mu_diff_first(s, s_old, params),
        mu_diff_deriv=lambda s: physics.mu_diff_first_deriv(s, params),
        lift=lift, mass_target=dt * integral(grid, q_w), krylov=krylov)
    s_new, c, stats = newton_mod.solve(problem, s_old, newton_cfg)
    if not stats.converged:
        raise StepFailure("first-order step: Newton hit the iteration cap", stats)
    _check_interior(grid, s_new)

    mu_w = np.where(grid.active,
                    chem_potential_first(np.where(grid.active, s_new, 0.5),
                                         1.0 - s_old, params.sigma_w, params.sigma_wn),
                    0.0)
    p, p_iters = _recover_pressure(grid, prob_w, s_new, s_old, dt, q_w, phi, mu_w, krylov)
    stats.krylov_iterations += lift_iters + p_iters

    new_state = SimState(s_w=s_new, p=p, t=state.t + dt, k=state.k + 1, s_w_prev=s_old)
    record = audit_step(state, new_state, medium, params, dt, order=1,
                        q_w=q_w, q_n=q_n, newton_stats=stats)
    return new_state, record


def step_second(state, medium, params, sources, dt, newton_cfg=None, krylov=None,
                convexity="strict"):
    """One step of the second-order decoupled scheme (needs S^{k-1}).

    ``convexity='strict'`` enforces the a-priori bound
    sigma_wn < (sigma_w+sigma_n)/2; ``'runtime'`` relies on the per-iterate
    Hessian positivity check inside Newton instead (raises ConvexityLost on
    an actual loss).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.s_w_prev is None:
        raise ValueError("second-order step needs the previous saturation; bootstrap first")
    if convexity not in ("strict", "runtime"):
        raise ValueError("convexity must be 'strict' or 'runtime'")
    if convexity == "strict":
        params.require_second_order()

    grid = medium.grid
    phi = medium.porosity
    s_old = state.s_w
    _check_interior(grid, s_old)
    krylov = _default_krylov(krylov)
    newton_cfg = newton_cfg if newton_cfg is not None else NewtonConfig(krylov=krylov)

    s_tilde = 1.5 * s_old - 0.5 * state.s_w_prev
    mob_w = mobility_face(grid, s_tilde, medium, params.eta_w, params.m,
                          regularize_with=dt)
    mob_n = mobility_face(grid, 1.0 - s_tilde, medium, params.eta_n, params.m,
                          regularize_with=dt)
    prob_w = EllipticProblem(grid, mob_w, phi)
    prob_n = EllipticProblem(grid, mob_n, phi)

    q_w, q_n = sources.evaluate(grid, state.t + 0.5 * dt)
    _check_compatible(grid, q_w, q_n)
    lift, lift_iters = _source_lift(grid, phi, prob_w, prob_n, q_w, q_n, krylov)

    s_safe_old = np.where(grid.active, s_old, 0.5)
    problem = SaturationProblem(
        grid, phi, prob_w, prob_n, s_old, dt,
        mu_diff=lambda s: physics.mu_diff_second(s, s_safe_old, params, dt),
        mu_diff_deriv=lambda s: physics.mu_diff_second_deriv(s, s_safe_old, params, dt),
        lift=lift, mass_target=dt * integral(grid, q_w), krylov=krylov)
    s_init = np.clip(s_tilde, 1e-10, 1.0 - 1e-10)
    s_new, c, stats = newton_mod.solve(problem, s_init, newton_cfg)
    if not stats.converged:
        raise StepFailure("second-order step: Newton hit the iteration cap", stats)
    _check_interior(grid, s_new)

    # stabilization-sign identity behind the energy law, assertable per cell
    s_safe_new = np.where(grid.active, s_new, 0.5)
    mono = ((np.log(s_safe_new) - np.log(s_safe_old)
             - np.log1p(-s_safe_new) + np.log1p(-s_safe_old))
            * (s_safe_new - s_safe_old))
    if np.any(mono[grid.active] < -1e-14):
        raise AssertionError("monotonicity identity of the stabilization term failed")

    mu_w = np.where(grid.active, mu_w_half(s_safe_new, s_safe_old, params, dt), 0.0)
    p, p_iters = _recover_pressure(grid, prob_w, s_new, s_old, dt, q_w, phi, mu_w, krylov)
    stats.krylov_iterations += lift_iters + p_iters

    new_state = SimState(s_w=s_new, p=p, t=state.t + dt, k=state.k + 1, s_w_prev=s_old)
    record = audit_step(state, new_state, medium, params, dt, order=2,
                        q_w=q_w, q_n=q_n, newton_stats=stats)
    return new_state, record


def bootstrap(state, medium, params, sources, dt, newton_cfg=None, krylov=None):
    """First-order startup step that records S^0 for the extrapolation."""
    new_state, record = step_first(state, medium, params, sources, dt,
                                   newton_cfg=newton_cfg, krylov=krylov)
    return replace(new_state, s_w_prev=state.s_w), record
