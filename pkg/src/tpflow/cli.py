"""Command-line driver: run, table, audit, and mms-check subcommands."""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics, mms, snapshots
from .config import RunConfig, parse_config, serialize_config
from .coupled import BoundaryData, CoupledStep, step_coupled_first
from .elliptic import KrylovConfig
from .newton import NewtonConfig
from .physics import total_energy
from .stepping import SimState, SourceSpec, StepFailure, bootstrap, step_first, step_second
from .units import BAR


def _krylov(run):
    return KrylovConfig(rtol=run.krylov_rtol, atol=run.krylov_atol, jacobi=run.jacobi)


def _newton(run):
    return NewtonConfig(step_tol=run.newton_tol, krylov=_krylov(run))


def _write_snapshot(outdir, grid, state, tag):
    snapshots.write_field_text(os.path.join(outdir, f"s_w_{tag}.txt"), grid, state.s_w)
    snapshots.write_field_binary(os.path.join(outdir, f"s_w_{tag}.bin"), grid, state.s_w)
    snapshots.write_field_text(os.path.join(outdir, f"p_{tag}.txt"), grid, state.p)
    snapshots.write_field_binary(os.path.join(outdir, f"p_{tag}.bin"), grid, state.p)
    snapshots.write_vtk(os.path.join(outdir, f"snap_{tag}.vtk"), grid,
                        {"s_w": state.s_w, "s_n": 1.0 - state.s_w, "p": state.p})


def _check_invariants(rec, run, closed):
    """Spec'd per-step invariants; returns a list of violation strings."""
    bad = []
    margin = 1e-12
    if not (rec.smin > margin and rec.smax < 1.0 - margin):
        bad.append(f"step {rec.step}: saturation bounds violated "
                   f"(smin={rec.smin:.3e}, smax={rec.smax:.3e})")
    if closed:
        slack_tol = 1e-10 * max(1.0, abs(rec.energy_prev))
        if not (rec.diss_slack <= slack_tol):
            bad.append(f"step {rec.step}: energy dissipation violated "
                       f"(slack={rec.diss_slack:.3e})")
    if rec.mass_residual_scale > 0:
        limit = 10.0 * run.krylov_rtol * rec.mass_residual_scale + 10.0 * run.krylov_atol
        if rec.mass_residual > limit:
            bad.append(f"step {rec.step}: local mass residual {rec.mass_residual:.3e} "
                       f"exceeds {limit:.3e}")
    return bad


def run_simulation(run, echo=print):
    """Stepping loop with the dt-halving retry policy; returns exit status."""
    scenario = run.resolve_scenario()
    scenario.validate(run.scheme)
    grid, medium, params, s0 = scenario.build()
    dt0 = run.dt if run.dt is not None else scenario.dt
    t_end = run.t_end if run.t_end is not None else scenario.t_end
    n_steps = run.steps if run.steps is not None else int(round(t_end / dt0))

    mixed = scenario.has_mixed_bcs
    if mixed and run.scheme == "second":
        raise SystemExit("second-order stepping is defined for the no-flow "
                         "decoupled path; mixed boundary conditions run first order")

    os.makedirs(run.out, exist_ok=True)
    with open(os.path.join(run.out, "config.ini"), "w") as fh:
        fh.write(serialize_config(run))

    state = SimState.initial(grid, s0)
    if mixed:
        # start from the imposed boundary pressure rather than zero
        p0 = next((scenario.bc(s).pressure for s in scenario.sides
                   if scenario.bc(s).kind == "pressure"), 0.0)
        state.p = np.where(grid.active, p0, 0.0)
        bdata = BoundaryData.from_config(grid, scenario)
        solver = CoupledStep(grid, medium, params, bdata)
    sources = SourceSpec.zero()
    newton_cfg = _newton(run)
    krylov = _krylov(run)

    records = [diagnostics.initial_record(state, medium, params)]
    _write_snapshot(run.out, grid, state, f"{0:06d}")
    violations = []
    status = 0
    k = 0
    while k < n_steps and state.t < t_end * (1 - 1e-12):
        dt = min(dt0, t_end - state.t) if run.steps is None else dt0
        attempt = 0
        while True:
            try:
                if mixed:
                    state_new, rec, _ = step_coupled_first(
                        state, medium, params, sources, dt, bdata,
                        newton_cfg=newton_cfg, solver=solver)
                elif run.scheme == "second":
                    if state.s_w_prev is None:
                        state_new, rec = bootstrap(state, medium, params, sources, dt,
                                                   newton_cfg=newton_cfg, krylov=krylov)
                    else:
                        state_new, rec = step_second(state, medium, params, sources, dt,
                                                     newton_cfg=newton_cfg, krylov=krylov,
                                                     convexity=run.convexity)
                else:
                    state_new, rec = step_first(state, medium, params, sources, dt,
                                                newton_cfg=newton_cfg, krylov=krylov)
                break
            except StepFailure:
                attempt += 1
                if attempt > run.max_dt_retries:
                    raise
                dt *= 0.5
                echo(f"step {k + 1}: Newton failed, retrying with dt={dt:g}")
        state = state_new
        records.append(rec)
        k += 1
        bad = _check_invariants(rec, run, closed=not mixed)
        if bad:
            violations.extend(bad)
            for msg in bad:
                echo("VIOLATION " + msg)
            if run.fail_fast:
                status = 2
                break
        if k % run.snapshot_every == 0 or k == n_steps:
            _write_snapshot(run.out, grid, state, f"{k:06d}")

    diagnostics.write_series(records, os.path.join(run.out, "diagnostics.csv"))
    echo(f"completed {k} steps to t={state.t:g}; "
         f"{len(violations)} invariant violation(s); output in {run.out}")
    if violations and run.fail_fast:
        return 2
    return status


def run_table(preset, rows=None, out=None, exact_injection=False, echo=print):
    case_name, scheme, ladder = mms.preset_ladder(preset, rows)
    case = mms.build_case(case_name)
    threads = int(os.environ.get("TPF_THREADS", "1"))

    def entry(e):
        _, n, dt = e
        return mms.run_case(case, scheme, n, dt, convexity="runtime",
                            exact_injection=exact_injection)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(entry, ladder))
        rows_out = mms.convergence_table(case, scheme, ladder,
                                         run_entry=lambda e: results[ladder.index(e)])
    else:
        rows_out = mms.convergence_table(case, scheme, ladder,
                                         convexity="runtime",
                                         exact_injection=exact_injection)
    param = "tau" if scheme == "first" else "h"
    text = mms.render_table_text(rows_out, param)
    echo(f"{preset}: case {case_name}, {scheme}-order scheme")
    echo(text)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"{preset}.txt"), "w") as fh:
            fh.write(text)
        with open(os.path.join(out, f"{preset}.csv"), "w") as fh:
            fh.write(mms.render_table_csv(rows_out, param))
    return rows_out


def run_audit(outdir, echo=print):
    """Re-check invariants of a stored run from its snapshots and series."""
    run = parse_config(os.path.join(outdir, "config.ini"), base_dir=outdir)
    scenario = run.resolve_scenario()
    grid, medium, params, _ = scenario.build()
    records = diagnostics.read_series(os.path.join(outdir, "diagnostics.csv"))
    by_step = {rec.step: rec for rec in records}
    closed = not scenario.has_mixed_bcs

    problems = []
    # re-derive energy/mass/bounds from every stored snapshot
    import glob
    import re
    for path in sorted(glob.glob(os.path.join(outdir, "s_w_*.txt"))):
        step = int(re.search(r"s_w_(\d+)\.txt$", path).group(1))
        _, _, s_w = snapshots.read_field_text(path)
        rec = by_step.get(step)
        if rec is None:
            problems.append(f"snapshot step {step} missing from the series")
            continue
        act = grid.active
        e = total_energy(grid, np.where(act, s_w, 0.5), medium, params)
        from .operators import cell_inner
        mass_w = cell_inner(grid, medium.porosity, np.where(act, s_w, 0.0))
        if abs(e - rec.energy) > 1e-9 * max(1.0, abs(rec.energy)):
            problems.append(f"step {step}: stored energy {rec.energy!r} != recomputed {e!r}")
        if abs(mass_w - rec.mass_w) > 1e-9 * max(1.0, abs(rec.mass_w)):
            problems.append(f"step {step}: stored mass_w mismatch")
        if not (s_w[act].min() > 0.0 and s_w[act].max() < 1.0):
            problems.append(f"step {step}: snapshot saturations out of (0,1)")

    if closed and len(records) > 1:
        e_prev = records[0].energy
        m0_w, m0_n = records[0].mass_w, records[0].mass_n
        for rec in records[1:]:
            if rec.energy > e_prev + 1e-10 * max(1.0, abs(e_prev)):
                problems.append(f"step {rec.step}: energy increased")
            e_prev = rec.energy
            for name, m0, m in (("mass_w", m0_w, rec.mass_w), ("mass_n", m0_n, rec.mass_n)):
                if abs(m - m0) > 1e-10 * max(1.0, abs(m0)):
                    problems.append(f"step {rec.step}: {name} drift {m - m0:.3e}")

    for msg in problems:
        echo("AUDIT " + msg)
    echo(f"audit: {len(problems)} problem(s) found in {outdir}")
    return 0 if not problems else 2


def run_mms_check(case_name, samples=25, echo=print):
    case = mms.build_case(case_name)
    worst = mms.compare_sources(case, n_samples=samples)
    echo(f"case {case_name}: max |closed form - 8th-order FD| "
         f"q_w {worst['w']:.3e}, q_n {worst['n']:.3e}")
    return 0 if max(worst.values()) <= 1e-8 else 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="tpf",
        description="Structure-preserving two-phase porous-media flow simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a scenario")
    p_run.add_argument("--config", help="INI config path")
    p_run.add_argument("--scenario", help="builtin scenario name")
    p_run.add_argument("--scheme", choices=["first", "second"])
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--steps", type=int, help="truncate to this many steps")
    p_run.add_argument("--fail-fast", action="store_true",
                       help="exit nonzero on the first invariant violation")
    p_run.add_argument("--convexity", choices=["strict", "runtime"])

    p_table = sub.add_parser("table", help="MMS convergence table")
    p_table.add_argument("--preset", required=True,
                         choices=sorted(mms.PRESETS))
    p_table.add_argument("--rows", type=int, help="ladder length override")
    p_table.add_argument("--out", help="write table files here")
    p_table.add_argument("--exact-injection", action="store_true",
                         help="dry run: inject exact fields, expect zero errors")

    p_audit = sub.add_parser("audit", help="re-check invariants of a stored run")
    p_audit.add_argument("--out", required=True, help="run output directory")

    p_chk = sub.add_parser("mms-check", help="cross-validate manufactured sources")
    p_chk.add_argument("--case", required=True, choices=["A", "B"])
    p_chk.add_argument("--samples", type=int, default=25)

    args = parser.parse_args(argv)

    if args.command == "run":
        if args.config:
            run = parse_config(args.config, base_dir=os.path.dirname(args.config) or ".")
        else:
            run = RunConfig()
        if args.scenario:
            run.scenario = args.scenario
            run.scenario_config = None
        if args.scheme:
            run.scheme = args.scheme
        if args.out:
            run.out = args.out
        if args.steps is not None:
            run.steps = args.steps
        if args.fail_fast:
            run.fail_fast = True
        if args.convexity:
            run.convexity = args.convexity
        return run_simulation(run)
    if args.command == "table":
        run_table(args.preset, rows=args.rows, out=args.out,
                  exact_injection=args.exact_injection)
        return 0
    if args.command == "audit":
        return run_audit(args.out)
    if args.command == "mms-check":
        return run_mms_check(args.case, samples=args.samples)
    return 1


if __name__ == "__main__":
    sys.exit(main())
