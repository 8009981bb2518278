"""Flat INI run configuration: parsing, normalization, serialization.

Values may carry units (``0.5 day``, ``3e-9 m2``, ``1 bar``); parsing
converts to SI and serialization writes plain SI numbers, so
parse -> serialize -> parse is the identity on the parsed object.
"""

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from . import snapshots
from .scenarios import (BUILTIN_SCENARIOS, BoundaryCondition, Region,
                        ScenarioConfig)
from .units import parse_quantity


@dataclass
class RunConfig:
    scheme: str = "first"
    scenario: str = "example2"
    out: str = "out"
    t_end: float | None = None       # None: scenario default
    dt: float | None = None
    steps: int | None = None         # truncation override
    snapshot_every: int = 10
    fail_fast: bool = False
    newton_tol: float = 1e-6
    krylov_rtol: float = 1e-11
    krylov_atol: float = 1e-14
    jacobi: bool = True
    convexity: str = "strict"
    max_dt_retries: int = 3
    scenario_config: ScenarioConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.scheme not in ("first", "second"):
            raise ValueError(f"scheme must be 'first' or 'second', got {self.scheme!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot cadence must be >= 1")
        if self.t_end is not None and self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.convexity not in ("strict", "runtime"):
            raise ValueError("convexity must be 'strict' or 'runtime'")

    def resolve_scenario(self):
        if self.scenario_config is not None:
            return self.scenario_config
        if self.scenario in BUILTIN_SCENARIOS:
            return BUILTIN_SCENARIOS[self.scenario]()
        raise ValueError(f"unknown scenario {self.scenario!r}")


def _get(cp, section, key, default=None):
    if cp.has_option(section, key):
        v = cp.get(section, key).strip()
        return v if v else default
    return default


def parse_config(path_or_text, base_dir="."):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if "\n" in str(path_or_text):
        cp.read_string(path_or_text)
    else:
        with open(path_or_text) as fh:
            cp.read_string(fh.read())

    run = RunConfig(
        scheme=_get(cp, "run", "scheme", "first"),
        scenario=_get(cp, "run", "scenario", "example2"),
        out=_get(cp, "run", "out", "out"),
        snapshot_every=int(_get(cp, "run", "snapshot_every", "10")),
        fail_fast=_get(cp, "run", "fail_fast", "false").lower() in ("1", "true", "yes"),
        newton_tol=float(_get(cp, "run", "newton_tol", "1e-6")),
        krylov_rtol=float(_get(cp, "run", "krylov_rtol", "1e-11")),
        krylov_atol=float(_get(cp, "run", "krylov_atol", "1e-14")),
        jacobi=_get(cp, "run", "jacobi", "true").lower() in ("1", "true", "yes"),
        convexity=_get(cp, "run", "convexity", "strict"),
        max_dt_retries=int(_get(cp, "run", "max_dt_retries", "3")),
    )
    t_end = _get(cp, "run", "t_end")
    if t_end is not None:
        run.t_end = parse_quantity(t_end, "time")
    dt = _get(cp, "run", "dt")
    if dt is not None:
        run.dt = parse_quantity(dt, "time")
    steps = _get(cp, "run", "steps")
    if steps is not None:
        run.steps = int(steps)

    if cp.has_section("grid"):
        run.scenario = "custom"
        run.scenario_config = _parse_scenario(cp, base_dir, run)
    return run


def _parse_scenario(cp, base_dir, run):
    ext = [float(x) for x in cp.get("grid", "extents").split()]
    cells = [int(x) for x in cp.get("grid", "cells").split()]
    dim = len(cells)
    extents = tuple((ext[2 * a], ext[2 * a + 1]) for a in range(dim))
    mask = None
    mask_file = _get(cp, "grid", "mask_file")
    if mask_file:
        import os
        _, _, mask = snapshots.read_mask(os.path.join(base_dir, mask_file))

    regions = []
    for section in sorted(s for s in cp.sections() if s.startswith("region.")):
        box_vals = [float(x) for x in cp.get(section, "box").split()]
        box = tuple((box_vals[2 * a], box_vals[2 * a + 1]) for a in range(dim))
        sigma = tuple(float(x) for x in cp.get(section, "sigma").split())
        regions.append(Region(
            box=box,
            phi=float(cp.get(section, "phi")),
            perm=parse_quantity(cp.get(section, "K"), "permeability"),
            sigma=sigma,
            s_w0=float(cp.get(section, "s_w0"))))

    bcs = {}
    for section in (s for s in cp.sections() if s.startswith("bc.")):
        side = section[3:]
        kind = _get(cp, section, "kind", "no-flow")
        bcs[side] = BoundaryCondition(
            kind=kind,
            flux_w=parse_quantity(_get(cp, section, "flux_w", "0"), "velocity"),
            pressure=parse_quantity(_get(cp, section, "pressure", "0"), "pressure"))

    return ScenarioConfig(
        name=_get(cp, "run", "name", "custom"),
        extents=extents, shape=tuple(cells), regions=regions,
        eta_w=parse_quantity(cp.get("fluids", "eta_w"), "viscosity"),
        eta_n=parse_quantity(cp.get("fluids", "eta_n"), "viscosity"),
        m=float(cp.get("fluids", "m")),
        dt=run.dt if run.dt is not None else parse_quantity(_get(cp, "fluids", "dt", "1"), "time"),
        t_end=run.t_end if run.t_end is not None else parse_quantity(_get(cp, "fluids", "t_end", "1"), "time"),
        bcs=bcs, mask=mask)


def serialize_config(run, mask_path=None):
    """Normalized INI text (SI units, fixed key order)."""
    cp = configparser.ConfigParser()
    cp["run"] = {}
    r = cp["run"]
    r["scheme"] = run.scheme
    r["scenario"] = run.scenario
    r["out"] = run.out
    if run.t_end is not None:
        r["t_end"] = repr(run.t_end)
    if run.dt is not None:
        r["dt"] = repr(run.dt)
    if run.steps is not None:
        r["steps"] = str(run.steps)
    r["snapshot_every"] = str(run.snapshot_every)
    r["fail_fast"] = "true" if run.fail_fast else "false"
    r["newton_tol"] = repr(run.newton_tol)
    r["krylov_rtol"] = repr(run.krylov_rtol)
    r["krylov_atol"] = repr(run.krylov_atol)
    r["jacobi"] = "true" if run.jacobi else "false"
    r["convexity"] = run.convexity
    r["max_dt_retries"] = str(run.max_dt_retries)

    sc = run.scenario_config
    if sc is not None:
        r["name"] = sc.name
        cp["grid"] = {
            "extents": " ".join(repr(v) for pair in sc.extents for v in pair),
            "cells": " ".join(str(n) for n in sc.shape),
        }
        if sc.mask is not None and mask_path is not None:
            cp["grid"]["mask_file"] = mask_path
        cp["fluids"] = {
            "eta_w": repr(sc.eta_w),
            "eta_n": repr(sc.eta_n),
            "m": repr(sc.m),
            "dt": repr(sc.dt),
            "t_end": repr(sc.t_end),
        }
        for i, region in enumerate(sc.regions, start=1):
            cp[f"region.{i}"] = {
                "box": " ".join(repr(v) for pair in region.box for v in pair),
                "phi": repr(region.phi),
                "K": repr(region.perm),
                "sigma": " ".join(repr(s) for s in region.sigma),
                "s_w0": repr(region.s_w0),
            }
        for side in sorted(sc.bcs):
            bc = sc.bcs[side]
            cp[f"bc.{side}"] = {
                "kind": bc.kind,
                "flux_w": repr(bc.flux_w),
                "pressure": repr(bc.pressure),
            }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
