"""Free energy, chemical potentials, mobilities, and the secant family.

The free-energy density of the two immiscible phases is

    F(S_w, S_n) = sigma_w S_w (ln S_w - 1) + sigma_n S_n (ln S_n - 1)
                  + sigma_wn S_w S_n,

whose partial derivatives give the chemical potentials
mu_alpha = sigma_alpha ln(S_alpha) + sigma_wn (1 - S_alpha).  The energy
parameters may be scalars or per-cell arrays (region-wise heterogeneous
media); every formula below is pointwise.

The phase mobility is lambda_alpha = S_alpha^m / eta_alpha; mobility times
permeability is averaged onto faces, optionally with the sqrt(avg^2 + dt^6)
regularization that keeps the extrapolated second-order mobilities strictly
positive without affecting second-order accuracy.

The time-secant of x ln x, its derivative, and its antiderivative (the
H family) drive the second-order scheme.  The secant is evaluated in the
cancellation-free form ln(a) + (b/(a-b)) log1p((a-b)/b), with the midpoint
logarithm limit below 1e-12 relative separation.
"""

from dataclasses import dataclass

import numpy as np

from .operators import cell_inner, face_average, gradient


class DomainError(ValueError):
    """Saturation or parameter outside the admissible open interval."""


class ParamError(ValueError):
    """Energy-parameter combination outside a scheme's solvability bound."""


SECANT_SWITCH = 1e-12  # relative |a-b| below which the midpoint-log limit is used


@dataclass(frozen=True)
class EnergyParams:
    """Energy parameters (Pa), power-law exponent, and viscosities (Pa s)."""

    sigma_w: object
    sigma_n: object
    sigma_wn: object
    m: float
    eta_w: float
    eta_n: float

    def __post_init__(self):
        for name in ("sigma_w", "sigma_n"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v <= 0.0):
                raise ParamError(f"{name} must be strictly positive")
        # zero coupling is the admissible degenerate limit
        if np.any(np.asarray(self.sigma_wn, dtype=float) < 0.0):
            raise ParamError("sigma_wn must be non-negative")
        if not (self.m > 0 and self.eta_w > 0 and self.eta_n > 0):
            raise ParamError("m and viscosities must be strictly positive")

    @property
    def gamma0(self):
        """min over cells of (sqrt(sigma_w)+sqrt(sigma_n))^2 - 2 sigma_wn."""
        sw = np.asarray(self.sigma_w, dtype=float)
        sn = np.asarray(self.sigma_n, dtype=float)
        swn = np.asarray(self.sigma_wn, dtype=float)
        return float(np.min((np.sqrt(sw) + np.sqrt(sn)) ** 2 - 2.0 * swn))

    @property
    def convexity_bound_ok(self):
        """Whether sigma_wn < (sigma_w + sigma_n)/2 holds everywhere.

        This is the a-priori bound guaranteeing strict convexity of the
        second-order per-step functional for arbitrary interior data."""
        sw = np.asarray(self.sigma_w, dtype=float)
        sn = np.asarray(self.sigma_n, dtype=float)
        swn = np.asarray(self.sigma_wn, dtype=float)
        return bool(np.all(swn < 0.5 * (sw + sn)))

    def require_second_order(self):
        if not self.convexity_bound_ok:
            raise ParamError(
                "second-order scheme requires sigma_wn < (sigma_w + sigma_n)/2; "
                "pass convexity='runtime' to rely on the per-iterate Hessian check")


@dataclass(frozen=True)
class PorousMedium:
    grid: object
    porosity: np.ndarray
    perm: np.ndarray

    def __post_init__(self):
        act = self.grid.active
        phi = np.asarray(self.porosity, dtype=float)
        k = np.asarray(self.perm, dtype=float)
        if np.any(phi[act] <= 0.0) or np.any(phi[act] >= 1.0):
            raise DomainError("porosity must satisfy 0 < phi < 1 on active cells")
        if np.any(k[act] <= 0.0):
            raise DomainError("permeability must be positive on active cells")


def _check_open_unit(s, what="saturation"):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0) or np.any(s >= 1.0):
        raise DomainError(f"{what} must lie strictly inside (0, 1)")
    return s


def free_energy_density(s_w, s_n, params):
    """F(S_w, S_n); requires positive saturations."""
    s_w = np.asarray(s_w, dtype=float)
    s_n = np.asarray(s_n, dtype=float)
    if np.any(s_w <= 0.0) or np.any(s_n <= 0.0):
        raise DomainError("free energy needs strictly positive saturations")
    val = (params.sigma_w * s_w * (np.log(s_w) - 1.0)
           + params.sigma_n * s_n * (np.log(s_n) - 1.0)
           + params.sigma_wn * s_w * s_n)
    return val if val.ndim else float(val)


def chem_potential_first(s_new, s_other_old, sigma, sigma_wn):
    """Convex-split potential sigma*ln(S^{k+1}) + sigma_wn*S_other^k."""
    s_new = _check_open_unit(s_new)
    return sigma * np.log(s_new) + sigma_wn * np.asarray(s_other_old, dtype=float)


# -- secant family of F(x) = x ln x -----------------------------------------

def _secant_core(a, b):
    """(a ln a - b ln b)/(a - b) for positive a, b, stable for a ~ b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    close = np.abs(d) < SECANT_SWITCH * np.maximum(np.abs(a), np.abs(b))
    d_safe = np.where(close, 1.0, d)
    # a ln a - b ln b = (a-b) ln a + b ln(a/b)
    val = np.log(np.where(a > 0, a, 1.0)) + (b / d_safe) * np.log1p(d_safe / b)
    limit = np.log(0.5 * (a + b)) + 1.0
    out = np.where(close, limit, val)
    return out if out.ndim else float(out)


def secant_H(a, b):
    """Secant of x ln x between two saturations in (0, 1)."""
    a = _check_open_unit(a)
    b = _check_open_unit(b)
    return _secant_core(a, b)


def secant_H_deriv(a, x):
    """d/dx of the secant H^1_a(x) = (F(x)-F(a))/(x-a), F = x ln x.

    Equals [1 - log1p(u)/u]/(a u) with u = (x-a)/a; a truncated alternating
    series takes over for small u where the direct form cancels.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(a <= 0.0) or np.any(x <= 0.0):
        raise DomainError("secant derivative needs positive arguments")
    u = (x - a) / a
    small = np.abs(u) < 0.25
    u_small = np.where(small, u, 0.0)
    # sum_{j>=0} (-1)^j u^j / (j+2), Horner from the tail
    series = np.zeros_like(u)
    for j in range(24, -1, -1):
        series = series * (-u_small) + 1.0 / (j + 2)
    u_big = np.where(small, 1.0, u)
    direct = (1.0 - np.log1p(u_big) / u_big) / (a * u_big)
    out = np.where(small, series / a, direct)
    return out if out.ndim else float(out)


def _adaptive_simpson(f, a, b, tol, fa, fm, fb, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) < 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return (_adaptive_simpson(f, a, m, tol / 2, fa, flm, fm, depth - 1)
            + _adaptive_simpson(f, m, b, tol / 2, fm, frm, fb, depth - 1))


def secant_antiderivative(a, x, tol=1e-10):
    """H^0_a(x) = integral of the secant from a to x (adaptive Simpson)."""
    a = float(a)
    x = float(x)
    if a <= 0.0 or x <= 0.0:
        raise DomainError("antiderivative needs positive arguments")
    if x == a:
        return 0.0
    f = lambda t: _secant_core(t, a)
    fa, fm, fb = f(a), f(0.5 * (a + x)), f(x)
    return _adaptive_simpson(f, a, x, tol, fa, fm, fb, 48)


def H_family(a, x):
    """(H^0, H^1, H^2) of the secant family of x ln x at fixed base a."""
    a_arr, x_arr = np.broadcast_arrays(np.asarray(a, dtype=float),
                                       np.asarray(x, dtype=float))
    if np.any(a_arr <= 0.0) or np.any(x_arr <= 0.0):
        raise DomainError("H family needs positive arguments")
    h1 = _secant_core(x_arr, a_arr)
    h2 = secant_H_deriv(a_arr, x_arr)
    h0 = np.array([secant_antiderivative(ai, xi)
                   for ai, xi in zip(a_arr.ravel(), x_arr.ravel())]
                  ).reshape(a_arr.shape)
    if h0.ndim == 0:
        return float(h0), float(h1), float(h2)
    return h0, h1, h2


# -- mobilities and fluxes ---------------------------------------------------

def mobility_face(grid, s_source, medium, eta, m, regularize_with=None):
    """Face mobility: two-point average of lambda(S) K, optionally regularized.

    ``s_source`` is the saturation the mobility is frozen at (the previous
    step for first order, the 3/2,-1/2 extrapolation for second order; the
    extrapolation may leave (0,1), hence the sign-preserving power).  With
    ``regularize_with = dt`` each face value becomes sqrt(avg^2 + dt^6),
    strictly positive and within O(dt^6 / avg) of the unregularized value.
    """
    s = np.asarray(s_source, dtype=float)
    lam = np.sign(s) * np.abs(s) ** m / eta
    faces = face_average(grid, np.where(grid.active, lam * medium.perm, 0.0))
    if regularize_with is None:
        for a, f in enumerate(faces):
            if np.any(f[grid.adjacent_face_masks[a]] <= 0.0):
                raise DomainError("nonpositive face mobility; pass regularize_with=dt")
        return faces
    dt6 = float(regularize_with) ** 6
    return [np.sqrt(f * f + dt6) for f in faces]


def total_energy(grid, s_w, medium, params):
    """Discrete total energy (phi, F(S_w, 1-S_w))_h over active cells."""
    act = grid.active
    s = np.asarray(s_w, dtype=float)
    if np.any(s[act] <= 0.0) or np.any(s[act] >= 1.0):
        raise DomainError("energy needs interior saturations on active cells")
    s_safe = np.where(act, s, 0.5)
    f = free_energy_density(s_safe, 1.0 - s_safe, params)
    return cell_inner(grid, medium.porosity, np.where(act, f, 0.0))


def darcy_velocity(grid, p, mu, mobility):
    """Face flux -M grad(p + mu); zero on no-flow boundary faces."""
    g = gradient(grid, np.asarray(p) + np.asarray(mu))
    return [-m * gi for m, gi in zip(mobility, g)]


# -- scheme potentials (pointwise, used by the steppers and their oracles) ---

def mu_diff_first(s, s_old, params):
    """mu_w^{k+1} - mu_n^{k+1} of the first-order convex splitting."""
    return (params.sigma_w * np.log(s) - params.sigma_n * np.log1p(-s)
            + params.sigma_wn * (1.0 - 2.0 * np.asarray(s_old, dtype=float)))


def mu_diff_first_deriv(s, params):
    return params.sigma_w / s + params.sigma_n / (1.0 - s)


def mu_w_half(s, s_old, params, dt):
    """Wetting potential at the half step (secant splitting + stabilization)."""
    return (params.sigma_w * (_secant_core(s, s_old) - 1.0)
            + params.sigma_wn * (1.0 - 0.5 * (s + s_old))
            + dt * (np.log(s) - np.log(s_old)))


def mu_n_half(s, s_old, params, dt):
    """Non-wetting potential at the half step, written through 1 - S_w."""
    return (params.sigma_n * (_secant_core(1.0 - s, 1.0 - s_old) - 1.0)
            + params.sigma_wn * 0.5 * (s + s_old)
            + dt * (np.log1p(-s) - np.log1p(-s_old)))


def mu_diff_second(s, s_old, params, dt):
    return mu_w_half(s, s_old, params, dt) - mu_n_half(s, s_old, params, dt)


def mu_diff_second_deriv(s, s_old, params, dt):
    """Hessian diagonal of the second-order potential difference.

    Positive on the whole interior when sigma_wn < (sigma_w + sigma_n)/2;
    for parameter sets outside that a-priori bound the steppers assert
    positivity at every iterate instead (runtime convexity mode).
    """
    return (params.sigma_w * secant_H_deriv(s_old, s)
            + params.sigma_n * secant_H_deriv(1.0 - s_old, 1.0 - s)
            + dt * (1.0 / s + 1.0 / (1.0 - s))
            - params.sigma_wn)
