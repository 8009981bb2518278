"""Coupled saturation-pressure Newton solver for mixed boundary conditions.

The decoupled elimination of the pressure relies on no-flow boundaries.
With a prescribed inflow flux and a Dirichlet outflow pressure the step is
solved in its original coupled form instead: unknowns (S_w, p) on active
cells, equations

    F_w = phi (S - S^k)/dt + div(u_w) - q_w = 0,   u_w = -M_w grad(p + mu_w)
    F_n = -phi (S - S^k)/dt + div(u_n) - q_n = 0,  u_n = -M_n grad(p + mu_n)

with the same convex-splitting potentials and frozen mobilities as the
first-order decoupled scheme.  Boundary faces carry either zero flux, the
prescribed wetting influx (non-wetting influx zero there), or the
Dirichlet-pressure flux -M (2/h)(p_D - p_cell) toward the boundary value
(the chemical potential drops out because grad(mu) . n = 0 is imposed).

The Dirichlet set pins the pressure, so the system is square and regular;
Newton uses a sparse LU factorization reused chord-style across iterations
and steps while it still contracts, because the Jacobian drifts only
through the slowly moving saturation field.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from dataclasses import dataclass

from .diagnostics import DiagnosticsRecord
from .newton import NewtonConfig, safeguard_step
from .operators import cell_inner, divergence, max_norm
from .physics import DomainError, chem_potential_first, mobility_face, total_energy
from .stepping import SimState, StepFailure

_SIDE_AXIS = {"x": 0, "y": 1, "z": 2}


def _end_selector(grid, axis, end):
    """(face slab selector, adjacent cell slab selector, outward sign)."""
    face_sel = [slice(None)] * grid.dim
    cell_sel = [slice(None)] * grid.dim
    if end == "lo":
        face_sel[axis] = 0
        cell_sel[axis] = 0
        outward = -1.0
    else:
        face_sel[axis] = -1
        cell_sel[axis] = -1
        outward = 1.0
    return tuple(face_sel), tuple(cell_sel), outward


@dataclass
class BoundaryData:
    """Per-axis face arrays describing the mixed boundary conditions.

    ``flux_w[a]`` holds the prescribed wetting face flux (component along
    +axis) where ``flux_mask[a]`` is set; ``p_dirichlet``/``p_mask`` mark
    the fixed-pressure faces.  Every other boundary face is no-flow.
    """

    flux_w: list
    flux_mask: list
    p_dirichlet: list
    p_mask: list

    @classmethod
    def from_config(cls, grid, config):
        flux_w = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]
        flux_mask = [np.zeros(grid.face_shape(a), dtype=bool) for a in range(grid.dim)]
        p_dir = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]
        p_mask = [np.zeros(grid.face_shape(a), dtype=bool) for a in range(grid.dim)]
        for side in config.sides:
            bc = config.bc(side)
            if bc.kind == "no-flow":
                continue
            axis = _SIDE_AXIS[side.split("-")[0]]
            end = side.split("-")[1]
            face_sel, _, outward = _end_selector(grid, axis, end)
            adj = grid.adjacent_face_masks[axis][face_sel]
            if bc.kind == "inflow":
                # positive speed flows INTO the domain: along +axis at the lo
                # end, along -axis at the hi end
                flux_w[axis][face_sel] = np.where(adj, -outward * bc.flux_w, 0.0)
                flux_mask[axis][face_sel] = adj
            else:
                p_dir[axis][face_sel] = np.where(adj, bc.pressure, 0.0)
                p_mask[axis][face_sel] = adj
        return cls(flux_w, flux_mask, p_dir, p_mask)

    @property
    def has_dirichlet(self):
        return any(m.any() for m in self.p_mask)


class CoupledStep:
    """First-order coupled step on one scenario (mobilities refrozen per step)."""

    def __init__(self, grid, medium, params, bdata):
        self.grid = grid
        self.medium = medium
        self.params = params
        self.bdata = bdata
        if not bdata.has_dirichlet:
            raise ValueError("coupled path needs at least one Dirichlet pressure face")
        idx = -np.ones(grid.shape, dtype=int)
        idx[grid.active] = np.arange(grid.n_active)
        self.idx = idx
        self.n = grid.n_active
        self.dt = None
        self._lu = None
        self._lu_fresh = False

    def _potential(self, phase, s, s_old):
        act = self.grid.active
        s_safe = np.where(act, s, 0.5)
        old_safe = np.where(act, s_old, 0.5)
        if phase == "w":
            return chem_potential_first(s_safe, 1.0 - old_safe,
                                        self.params.sigma_w, self.params.sigma_wn)
        return chem_potential_first(1.0 - s_safe, old_safe,
                                    self.params.sigma_n, self.params.sigma_wn)

    def phase_fluxes(self, phase, mob, s, p, s_old):
        grid = self.grid
        act = grid.active
        mu = self._potential(phase, s, s_old)
        pot = np.where(act, p + mu, 0.0)
        inv_h = 1.0 / grid.h
        fluxes = []
        for a in range(grid.dim):
            f = np.zeros(grid.face_shape(a))
            left = [slice(None)] * grid.dim
            left[a] = slice(None, -1)
            right = [slice(None)] * grid.dim
            right[a] = slice(1, None)
            inner = [slice(None)] * grid.dim
            inner[a] = slice(1, -1)
            both = grid.interior_face_masks[a][tuple(inner)]
            f[tuple(inner)] = np.where(
                both,
                -mob[a][tuple(inner)] * (pot[tuple(right)] - pot[tuple(left)]) * inv_h,
                0.0)
            if phase == "w" and self.bdata.flux_mask[a].any():
                fm = self.bdata.flux_mask[a]
                f[fm] = self.bdata.flux_w[a][fm]
            for end in ("lo", "hi"):
                face_sel, cell_sel, outward = _end_selector(grid, a, end)
                m_face = self.bdata.p_mask[a][face_sel]
                if not m_face.any():
                    continue
                pd = self.bdata.p_dirichlet[a][face_sel]
                pc = np.where(act[cell_sel], p[cell_sel], 0.0)
                mf = mob[a][face_sel]
                # flux component along +axis; toward lower pressure outside
                face_val = -outward * 2.0 * inv_h * mf * (pd - pc)
                slab = f[face_sel]
                slab[m_face] = face_val[m_face]
                f[face_sel] = slab
            fluxes.append(f)
        return fluxes

    def residual(self, s, p, s_old, mob_w, mob_n, q_w, q_n):
        grid = self.grid
        act = grid.active
        ds = np.where(act, (s - s_old) / self.dt, 0.0)
        f_w = self.phase_fluxes("w", mob_w, s, p, s_old)
        f_n = self.phase_fluxes("n", mob_n, s, p, s_old)
        r_w = self.medium.porosity * ds + divergence(grid, f_w) - q_w
        r_n = -self.medium.porosity * ds + divergence(grid, f_n) - q_n
        return np.where(act, r_w, 0.0), np.where(act, r_n, 0.0), f_w, f_n

    def assemble(self, s, s_old):
        grid = self.grid
        act = grid.active
        n = self.n
        idx = self.idx
        invh2 = 1.0 / grid.h**2
        s_safe = np.where(act, s, 0.5)
        dmu_w = self.params.sigma_w / s_safe * np.ones(grid.shape)
        dmu_n = -self.params.sigma_n / (1.0 - s_safe) * np.ones(grid.shape)
        phi_dt = self.medium.porosity / self.dt

        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.atleast_1d(r))
            cols.append(np.atleast_1d(c))
            vals.append(np.atleast_1d(v))

        dof = idx[act]
        add(dof, dof, phi_dt[act])
        add(n + dof, dof, -phi_dt[act])
        add(dof, n + dof, np.zeros(dof.size))
        add(n + dof, n + dof, np.zeros(dof.size))

        for a in range(grid.dim):
            left = [slice(None)] * grid.dim
            left[a] = slice(None, -1)
            right = [slice(None)] * grid.dim
            right[a] = slice(1, None)
            inner = [slice(None)] * grid.dim
            inner[a] = slice(1, -1)
            both = grid.interior_face_masks[a][tuple(inner)]
            iL = idx[tuple(left)][both]
            iR = idx[tuple(right)][both]
            for mob, row_off, dmu in ((self._mob_w, 0, dmu_w), (self._mob_n, n, dmu_n)):
                t = mob[a][tuple(inner)][both] * invh2
                dL = dmu[tuple(left)][both]
                dR = dmu[tuple(right)][both]
                add(row_off + iL, n + iL, t)
                add(row_off + iL, n + iR, -t)
                add(row_off + iR, n + iR, t)
                add(row_off + iR, n + iL, -t)
                add(row_off + iL, iL, t * dL)
                add(row_off + iL, iR, -t * dR)
                add(row_off + iR, iR, t * dR)
                add(row_off + iR, iL, -t * dL)
            for end in ("lo", "hi"):
                face_sel, cell_sel, _ = _end_selector(grid, a, end)
                m_face = self.bdata.p_mask[a][face_sel]
                if not m_face.any():
                    continue
                cells = idx[cell_sel][m_face]
                for mob, row_off in ((self._mob_w, 0), (self._mob_n, n)):
                    t = 2.0 * mob[a][face_sel][m_face] * invh2
                    add(row_off + cells, n + cells, t)

        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * n, 2 * n))
        return mat.tocsc()

    def pack(self, c):
        return c[self.grid.active]

    def unpack(self, v):
        out = np.zeros(self.grid.shape)
        out[self.grid.active] = v
        return out

    def solve(self, state, sources, dt, cfg):
        grid = self.grid
        act = grid.active
        self.dt = dt
        s_old = state.s_w
        if np.any(s_old[act] <= 0.0) or np.any(s_old[act] >= 1.0):
            raise DomainError("saturation left the open interval (0, 1)")
        self._mob_w = mobility_face(grid, s_old, self.medium,
                                    self.params.eta_w, self.params.m)
        self._mob_n = mobility_face(grid, 1.0 - s_old, self.medium,
                                    self.params.eta_n, self.params.m)
        q_w, q_n = sources.evaluate(grid, state.t + dt)

        s = s_old.copy()
        p = state.p.copy()
        iters = 0
        factorizations = 0
        r_w, r_n, f_w, f_n = self.residual(s, p, s_old, self._mob_w, self._mob_n, q_w, q_n)
        fnorm = max(max_norm(grid, r_w), max_norm(grid, r_n))
        scale = max(max_norm(grid, self.medium.porosity / dt),
                    max_norm(grid, divergence(grid, f_w)),
                    max_norm(grid, divergence(grid, f_n)), 1e-300)
        target = 1e-12 * scale
        step_ok = False
        prev_fnorm = np.inf

        while iters < cfg.max_iter:
            if fnorm <= target and (step_ok or iters == 0 and fnorm == 0.0):
                break
            if self._lu is None or (not self._lu_fresh and fnorm > 0.3 * prev_fnorm):
                self._lu = spla.splu(self.assemble(s, s_old))
                self._lu_fresh = True
                factorizations += 1
            iters += 1
            delta = self._lu.solve(-np.concatenate([self.pack(r_w), self.pack(r_n)]))
            ds = self.unpack(delta[:self.n])
            dp = self.unpack(delta[self.n:])
            alpha = safeguard_step(s, ds, cfg.theta, act)
            accepted = False
            while alpha >= cfg.damping_min:
                s_try = np.where(act, s + alpha * ds, 0.5)
                p_try = np.where(act, p + alpha * dp, 0.0)
                r_w_t, r_n_t, f_w_t, f_n_t = self.residual(
                    s_try, p_try, s_old, self._mob_w, self._mob_n, q_w, q_n)
                fnorm_try = max(max_norm(grid, r_w_t), max_norm(grid, r_n_t))
                if fnorm_try <= fnorm * (1.0 - 1e-4 * alpha) + 1e-16 * scale:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                if step_ok:
                    break  # residual at its floor
                if self._lu_fresh:
                    raise StepFailure(
                        "coupled step: no damped Newton step reduced the residual")
                self._lu = None  # stale chord matrix; refactor and retry
                continue
            prev_fnorm, fnorm = fnorm, fnorm_try
            s, p, r_w, r_n, f_w, f_n = s_try, p_try, r_w_t, r_n_t, f_w_t, f_n_t
            self._lu_fresh = False
            step_ok = alpha * max_norm(grid, ds) < cfg.step_tol
        else:
            raise StepFailure("coupled step: Newton hit the iteration cap")

        new_state = SimState(s_w=s, p=p, t=state.t + dt, k=state.k + 1, s_w_prev=s_old)
        extras = {"iters": iters, "factorizations": factorizations,
                  "fluxes_w": f_w, "fluxes_n": f_n, "fnorm": fnorm, "scale": scale}
        return new_state, extras


def boundary_flux_totals(grid, bdata, fluxes, through="flux"):
    """Signed outward flux integral through the prescribed boundary faces.

    ``through='flux'`` integrates over the prescribed-flux faces,
    ``'pressure'`` over the Dirichlet faces.  Positive means out of the
    domain.
    """
    masks = bdata.flux_mask if through == "flux" else bdata.p_mask
    area = grid.h ** (grid.dim - 1)
    total = 0.0
    for a in range(grid.dim):
        mask = masks[a]
        if not mask.any():
            continue
        for end in ("lo", "hi"):
            face_sel, _, outward = _end_selector(grid, a, end)
            m = mask[face_sel]
            if not m.any():
                continue
            total += outward * float(fluxes[a][face_sel][m].sum()) * area
    return total


def step_coupled_first(state, medium, params, sources, dt, bdata,
                       newton_cfg=None, solver=None):
    """One first-order coupled step; returns (state', record, extras)."""
    cfg = newton_cfg if newton_cfg is not None else NewtonConfig()
    if solver is None:
        solver = CoupledStep(medium.grid, medium, params, bdata)
    new_state, extras = solver.solve(state, sources, dt, cfg)
    grid = medium.grid
    act = grid.active
    phi = medium.porosity
    record = DiagnosticsRecord(
        step=new_state.k, time=new_state.t,
        energy=total_energy(grid, new_state.s_w, medium, params),
        mass_w=cell_inner(grid, phi, np.where(act, new_state.s_w, 0.0)),
        mass_n=cell_inner(grid, phi, np.where(act, 1.0 - new_state.s_w, 0.0)),
        smin=float(new_state.s_w[act].min()),
        smax=float(new_state.s_w[act].max()),
        diss_slack=float("nan"),  # open system: the no-flow law does not apply
        mass_residual=extras["fnorm"],
        newton_iters=extras["iters"], krylov_iters=0,
        mass_residual_scale=extras["scale"])
    extras["inflow_w"] = -boundary_flux_totals(grid, bdata, extras["fluxes_w"], "flux")
    extras["outflow_w"] = boundary_flux_totals(grid, bdata, extras["fluxes_w"], "pressure")
    extras["outflow_n"] = boundary_flux_totals(grid, bdata, extras["fluxes_n"], "pressure")
    return new_state, record, extras
