"""Per-step structure-preservation audits and the diagnostics series.

Every accepted step is audited against the discrete structure the schemes
guarantee: total energy and the flux-weighted dissipation inequality

    E^{k+1} - E^k <= -dt * sum_alpha || M_alpha^{1/2} grad(p + mu_alpha) ||_h^2

(recomputed with the exact mobilities and potentials of the step, not a
proxy), per-phase masses, saturation extrema, and the per-cell residual of
the conservative form of each phase equation.  Violations are recorded, not
raised; the CLI decides whether to fail fast.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import physics
from .operators import (cell_inner, divergence, face_inner, gradient,
                        max_norm)
from .physics import chem_potential_first, mobility_face, mu_n_half, mu_w_half


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    energy: float
    mass_w: float
    mass_n: float
    smin: float
    smax: float
    diss_slack: float
    mass_residual: float
    newton_iters: int
    krylov_iters: int
    # not serialized: scale for judging the mass residual and the raw terms
    mass_residual_scale: float = 0.0
    energy_prev: float = 0.0
    flux_dissipation: float = 0.0

    CSV_COLUMNS = ("step", "time", "energy", "mass_w", "mass_n", "smin", "smax",
                   "diss_slack", "mass_residual", "newton_iters", "krylov_iters")


def _scheme_fields(prev_state, new_state, medium, params, dt, order):
    """Mobilities and potentials exactly as the step of given order used them."""
    grid = medium.grid
    act = grid.active
    s_new = np.where(act, new_state.s_w, 0.5)
    s_old = np.where(act, prev_state.s_w, 0.5)
    if order == 1:
        mob_w = mobility_face(grid, prev_state.s_w, medium, params.eta_w, params.m)
        mob_n = mobility_face(grid, 1.0 - prev_state.s_w, medium, params.eta_n, params.m)
        mu_w = chem_potential_first(s_new, 1.0 - s_old, params.sigma_w, params.sigma_wn)
        mu_n = chem_potential_first(1.0 - s_new, s_old, params.sigma_n, params.sigma_wn)
    elif order == 2:
        s_tilde = 1.5 * prev_state.s_w - 0.5 * prev_state.s_w_prev
        mob_w = mobility_face(grid, s_tilde, medium, params.eta_w, params.m,
                              regularize_with=dt)
        mob_n = mobility_face(grid, 1.0 - s_tilde, medium, params.eta_n, params.m,
                              regularize_with=dt)
        mu_w = mu_w_half(s_new, s_old, params, dt)
        mu_n = mu_n_half(s_new, s_old, params, dt)
    else:
        raise ValueError("order must be 1 or 2")
    mu_w = np.where(act, mu_w, 0.0)
    mu_n = np.where(act, mu_n, 0.0)
    return mob_w, mob_n, mu_w, mu_n


def audit_step(prev_state, new_state, medium, params, dt, order,
               q_w=None, q_n=None, newton_stats=None):
    """Recompute the structure diagnostics for one accepted step."""
    grid = medium.grid
    act = grid.active
    phi = medium.porosity
    q_w = q_w if q_w is not None else grid.zeros_cell()
    q_n = q_n if q_n is not None else grid.zeros_cell()

    e_prev = physics.total_energy(grid, prev_state.s_w, medium, params)
    e_new = physics.total_energy(grid, new_state.s_w, medium, params)
    mass_w = cell_inner(grid, phi, np.where(act, new_state.s_w, 0.0))
    mass_n = cell_inner(grid, phi, np.where(act, 1.0 - new_state.s_w, 0.0))
    smin = float(new_state.s_w[act].min())
    smax = float(new_state.s_w[act].max())

    mob_w, mob_n, mu_w, mu_n = _scheme_fields(prev_state, new_state, medium,
                                              params, dt, order)
    p = new_state.p
    flux_sq = 0.0
    residual = 0.0
    ds_rate = np.where(act, (new_state.s_w - prev_state.s_w) / dt, 0.0)
    for mob, mu, q, sign in ((mob_w, mu_w, q_w, 1.0), (mob_n, mu_n, q_n, -1.0)):
        g = gradient(grid, p + mu)
        flux_sq += face_inner(grid, g, [m * gi for m, gi in zip(mob, g)])
        # conservative-form residual of this phase's mass balance
        r = phi * sign * ds_rate - divergence(grid, [m * gi for m, gi in zip(mob, g)]) - q
        residual = max(residual, max_norm(grid, np.where(act, r, 0.0)))

    scale = max(max_norm(grid, phi * ds_rate),
                max_norm(grid, q_w), max_norm(grid, q_n), 1e-300)
    return DiagnosticsRecord(
        step=new_state.k,
        time=new_state.t,
        energy=e_new,
        mass_w=mass_w,
        mass_n=mass_n,
        smin=smin,
        smax=smax,
        diss_slack=e_new - e_prev + dt * flux_sq,
        mass_residual=residual,
        newton_iters=newton_stats.iterations if newton_stats else 0,
        krylov_iters=newton_stats.krylov_iterations if newton_stats else 0,
        mass_residual_scale=scale,
        energy_prev=e_prev,
        flux_dissipation=flux_sq,
    )


def initial_record(state, medium, params):
    """Step-0 row: energy, masses and extrema of the initial data."""
    grid = medium.grid
    act = grid.active
    phi = medium.porosity
    return DiagnosticsRecord(
        step=state.k, time=state.t,
        energy=physics.total_energy(grid, state.s_w, medium, params),
        mass_w=cell_inner(grid, phi, np.where(act, state.s_w, 0.0)),
        mass_n=cell_inner(grid, phi, np.where(act, 1.0 - state.s_w, 0.0)),
        smin=float(state.s_w[act].min()), smax=float(state.s_w[act].max()),
        diss_slack=0.0, mass_residual=0.0, newton_iters=0, krylov_iters=0)


def _fmt(value):
    # repr of a Python float is the shortest round-trip decimal
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_series(records, path):
    """CSV series, one row per step, shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DiagnosticsRecord.CSV_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, col))
                             for col in DiagnosticsRecord.CSV_COLUMNS])


def read_series(path):
    """Parse a diagnostics CSV back into records (round-trips bit exactly)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(DiagnosticsRecord(
                step=int(row["step"]), time=float(row["time"]),
                energy=float(row["energy"]), mass_w=float(row["mass_w"]),
                mass_n=float(row["mass_n"]), smin=float(row["smin"]),
                smax=float(row["smax"]), diss_slack=float(row["diss_slack"]),
                mass_residual=float(row["mass_residual"]),
                newton_iters=int(row["newton_iters"]),
                krylov_iters=int(row["krylov_iters"])))
    return out
