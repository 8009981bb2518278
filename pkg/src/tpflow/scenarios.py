"""Built-in benchmark scenarios and their runtime assembly.

Example 2 is a closed heterogeneous square (no-flow everywhere): a low
permeability block sits inside a high-permeability background, with
per-region porosity, permeability, energy parameters, and initial wetting
saturation.  The published description fixes the region parameter values
but shows the geometry only graphically, so the block layout here is a
documented approximation; everything asserted about the run is
property-based (bounds, energy decay, mass conservation).  The L-shape
variant masks out the upper-right quadrant.

Example 3 is a 3D displacement: wetting fluid injected across the left
face at a fixed Darcy velocity, outflow through the right face at fixed
pressure (with zero chemical-potential normal derivative), no-flow
elsewhere, and two high-permeability stripes that the front prefers.

Region lists use painter semantics: later entries overwrite earlier ones,
so the effective assignment partitions the active cells; validation
requires every active cell to be covered.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .physics import EnergyParams, PorousMedium
from .units import BAR, CENTIPOISE, DARCY, DAY, YEAR

SIDES_2D = ("x-lo", "x-hi", "y-lo", "y-hi")
SIDES_3D = SIDES_2D + ("z-lo", "z-hi")


@dataclass(frozen=True)
class Region:
    box: tuple                    # per-axis (lo, hi) in meters
    phi: float
    perm: float                   # m^2
    sigma: tuple                  # (sigma_w, sigma_n, sigma_wn) in Pa
    s_w0: float


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str = "no-flow"         # "no-flow" | "inflow" | "pressure"
    flux_w: float = 0.0           # m/s, wetting Darcy speed into the domain
    pressure: float = 0.0         # Pa

    def __post_init__(self):
        if self.kind not in ("no-flow", "inflow", "pressure"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")


@dataclass
class ScenarioConfig:
    name: str
    extents: tuple
    shape: tuple
    regions: list
    eta_w: float
    eta_n: float
    m: float
    dt: float
    t_end: float
    bcs: dict = field(default_factory=dict)
    mask: np.ndarray | None = None

    @property
    def dim(self):
        return len(self.shape)

    @property
    def sides(self):
        return SIDES_2D if self.dim == 2 else SIDES_3D

    def bc(self, side):
        return self.bcs.get(side, BoundaryCondition())

    @property
    def has_mixed_bcs(self):
        return any(self.bc(s).kind != "no-flow" for s in self.sides)

    def region_index(self, grid):
        """Per-cell region number (painter order); -1 where uncovered."""
        idx = np.full(grid.shape, -1, dtype=int)
        centers = grid.cell_centers()
        for r, region in enumerate(self.regions):
            inside = np.ones(grid.shape, dtype=bool)
            for a, (lo, hi) in enumerate(region.box):
                inside &= (centers[a] >= lo - 1e-12) & (centers[a] <= hi + 1e-12)
            idx[inside] = r
        return idx

    def validate(self, scheme="first"):
        grid = self.build_grid()
        idx = self.region_index(grid)
        if np.any(idx[grid.active] < 0):
            raise ValueError(f"{self.name}: regions do not cover the active domain")
        for side in self.bcs:
            if side not in self.sides:
                raise ValueError(f"{self.name}: unknown boundary side {side!r}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if scheme == "second":
            self.build_params(grid).require_second_order()
        return True

    # -- runtime assembly ----------------------------------------------------

    def build_grid(self):
        return Grid.from_extents(self.extents, self.shape, active=self.mask)

    def build_params(self, grid):
        idx = self.region_index(grid)
        sw = np.ones(grid.shape)
        sn = np.ones(grid.shape)
        swn = np.zeros(grid.shape)
        for r, region in enumerate(self.regions):
            sel = idx == r
            sw[sel], sn[sel], swn[sel] = region.sigma
        return EnergyParams(sigma_w=sw, sigma_n=sn, sigma_wn=swn,
                            m=self.m, eta_w=self.eta_w, eta_n=self.eta_n)

    def build(self):
        grid = self.build_grid()
        idx = self.region_index(grid)
        if np.any(idx[grid.active] < 0):
            raise ValueError(f"{self.name}: regions do not cover the active domain")
        phi = np.full(grid.shape, 0.5)
        perm = np.full(grid.shape, 1.0)
        s0 = np.full(grid.shape, 0.5)
        for r, region in enumerate(self.regions):
            sel = idx == r
            phi[sel] = region.phi
            perm[sel] = region.perm
            s0[sel] = region.s_w0
        medium = PorousMedium(grid, phi, perm)
        return grid, medium, self.build_params(grid), s0


def lshape_mask(shape, extents):
    """Mask deactivating the upper-right quadrant."""
    grid = Grid.from_extents(extents, shape)
    centers = grid.cell_centers()
    mid = [0.5 * (lo + hi) for lo, hi in extents]
    inactive = (centers[0] > mid[0]) & (centers[1] > mid[1])
    return ~(inactive | np.zeros(shape, dtype=bool))


def build_example2(variant="rect"):
    """Closed heterogeneous 100m x 100m square, 50x50 cells, tau = 0.5 day.

    Low-permeability inclusion [20,60]x[20,60] m inside a high-permeability
    background; wetting fluid starts concentrated in the background and
    spreads into the inclusion.
    """
    if variant not in ("rect", "lshape"):
        raise ValueError("variant must be 'rect' or 'lshape'")
    extents = ((0.0, 100.0), (0.0, 100.0))
    shape = (50, 50)
    background = Region(box=extents, phi=0.35, perm=3.0e-9,
                        sigma=(5.8275, 0.5398, 3.712), s_w0=0.8)
    inclusion = Region(box=((20.0, 60.0), (20.0, 60.0)), phi=0.2, perm=1.5e-10,
                       sigma=(11.655, 1.0796, 7.424), s_w0=0.2)
    mask = lshape_mask(shape, extents) if variant == "lshape" else None
    return ScenarioConfig(
        name=f"example2-{variant}", extents=extents, shape=shape,
        regions=[background, inclusion],
        eta_w=0.9 * CENTIPOISE, eta_n=0.1 * CENTIPOISE, m=3.0,
        dt=0.5 * DAY, t_end=100.0 * DAY, mask=mask)


def build_example3():
    """3D displacement on a 100m cube, 20^3 cells, tau = 0.8 day.

    Wetting injection at 0.7 m/year across the left (x-lo) face, outflow at
    1 bar through the right face, no-flow elsewhere; stripes
    0.2L <= y <= 0.4L and 0.6L <= y <= 0.8L carry 100 d permeability
    against 1 d outside.
    """
    big = 100.0
    extents = ((0.0, big),) * 3
    shape = (20, 20, 20)
    base = Region(box=extents, phi=0.2, perm=1.0 * DARCY,
                  sigma=(11.655, 1.0796, 7.424), s_w0=0.01)
    stripes = [
        Region(box=((0.0, big), (0.2 * big, 0.4 * big), (0.0, big)),
               phi=0.2, perm=100.0 * DARCY, sigma=(2.331, 0.2159, 1.4848), s_w0=0.01),
        Region(box=((0.0, big), (0.6 * big, 0.8 * big), (0.0, big)),
               phi=0.2, perm=100.0 * DARCY, sigma=(2.331, 0.2159, 1.4848), s_w0=0.01),
    ]
    return ScenarioConfig(
        name="example3", extents=extents, shape=shape,
        regions=[base] + stripes,
        eta_w=1.0 * CENTIPOISE, eta_n=0.75 * CENTIPOISE, m=3.0,
        dt=0.8 * DAY, t_end=160.0 * DAY,
        bcs={"x-lo": BoundaryCondition(kind="inflow", flux_w=0.7 / YEAR),
             "x-hi": BoundaryCondition(kind="pressure", pressure=1.0 * BAR)})


BUILTIN_SCENARIOS = {
    "example2": lambda: build_example2("rect"),
    "example2-rect": lambda: build_example2("rect"),
    "example2-lshape": lambda: build_example2("lshape"),
    "example3": build_example3,
}
