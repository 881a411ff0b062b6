"""Experiment orchestration: single runs, eps sweeps, field and report output.

A run projects its initial velocity to the divergence-free space of its mode,
steps with a fixed dt chosen once from the initial stability limit (so
snapshots are uniformly spaced and schedules are shared across a sweep),
writes legacy-VTK snapshots and the energy/norm CSV ledgers, and returns the
in-memory history for diagnostics.  Outputs are deterministic for a fixed
configuration; a numerical abort flushes the last good snapshot.
"""

from __future__ import annotations

import math
import os
import time as _time
from dataclasses import dataclass

import numpy as np

from .aniso import (
    NumericsError,
    SimState,
    pressure_projection_anisotropic,
    stable_dt,
    step_anisotropic,
)
from .config import RunConfig
from .core import Grid, build_grid
from .diagnostics import (
    ConvergenceReport,
    EnergyReport,
    RunHistory,
    apriori_norms,
    energy_balance,
    spacetime_errors,
    translation_modulus,
    APRIORI_NORM_NAMES,
)
from .hydro import diagnose_w, step_hydrostatic, surface_pressure_projection
from .operators import StaggeredVelocity, apply_velocity_bcs, divergence

__all__ = [
    "RunResult",
    "SweepResult",
    "initial_velocity",
    "initial_concentration",
    "run_simulation",
    "epsilon_sweep",
    "write_vtk",
    "write_csv",
    "read_csv",
]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str, header, rows) -> None:
    """RFC-4180-style CSV: header row, '.' decimals, '\\n' newlines.

    Floats are written with repr (shortest round-trip), so parsing the file
    back reproduces the values exactly.
    """
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    header = lines[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return header, rows


def write_vtk(state: SimState, path: str, grid: Grid, title: str = "hydrolimit") -> None:
    """Legacy ASCII VTK snapshot, STRUCTURED_POINTS on the cell centres.

    Emits SCALARS C and p and VECTORS velocity (face values averaged to
    centres) as POINT_DATA; point order is x-fastest per the VTK convention.
    """
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    n = nx * ny * nz
    p3 = state.p if state.p.ndim == 3 else np.broadcast_to(state.p[:, :, None], (nx, ny, nz))
    v1, v2, v3 = state.u.center_components()

    parts = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        f"ORIGIN {_fmt(grid.dx / 2)} {_fmt(grid.dy / 2)} {_fmt(grid.dz / 2)}",
        f"SPACING {_fmt(grid.dx)} {_fmt(grid.dy)} {_fmt(grid.dz)}",
        f"POINT_DATA {n}",
        "SCALARS C double 1",
        "LOOKUP_TABLE default",
    ]
    parts.extend(_fmt(v) for v in state.C.ravel(order="F"))
    parts.append("SCALARS p double 1")
    parts.append("LOOKUP_TABLE default")
    parts.extend(_fmt(v) for v in p3.ravel(order="F"))
    parts.append("VECTORS velocity double")
    f1, f2, f3 = (a.ravel(order="F") for a in (v1, v2, v3))
    parts.extend(f"{_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in zip(f1, f2, f3))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def initial_velocity(cfg: RunConfig, grid: Grid) -> StaggeredVelocity:
    """Velocity preset sampled on the faces (before projection)."""
    kind = cfg.init.velocity
    if kind == "zero":
        return StaggeredVelocity.zeros(grid)
    if kind == "taylor_green_h":
        c = cfg.init.velocity_amp
        ax, ay, az = math.pi / grid.lx, math.pi / grid.ly, math.pi / grid.h
        X1, X2, X3 = grid.u1_positions()
        u1 = -c * np.cos(ax * X1) * np.sin(ay * X2) * np.sin(az * X3)
        Y1, Y2, Y3 = grid.u2_positions()
        u2 = c * np.sin(ax * Y1) * np.cos(ay * Y2) * np.sin(az * Y3)
        u1 = np.broadcast_to(u1, grid.shape_u1).copy()
        u2 = np.broadcast_to(u2, grid.shape_u2).copy()
        return StaggeredVelocity(u1, u2, np.zeros(grid.shape_u3))
    raise ValueError(f"unknown velocity preset {kind!r}")


def initial_concentration(cfg: RunConfig, grid: Grid) -> np.ndarray:
    kind = cfg.init.concentration
    if kind == "zero":
        return np.zeros(grid.shape_cells)
    if kind == "gaussian_blob":
        c = cfg.init.blob_center
        w = cfg.init.blob_width
        X1, X2, X3 = grid.centers()
        r2 = (X1 - c[0]) ** 2 + (X2 - c[1]) ** 2 + (X3 - c[2]) ** 2
        return cfg.init.blob_amp * np.exp(-r2 / w**2)
    raise ValueError(f"unknown concentration preset {kind!r}")


def _project_initial(u0: StaggeredVelocity, mode: str, eps: float, cfg: RunConfig, grid: Grid):
    """Enforce the divergence-free initial hypothesis of the respective mode."""
    theta = None
    u0 = apply_velocity_bcs(u0, theta, cfg.nu3, grid, "anisotropic" if mode == "aniso" else "hydrostatic")
    if mode == "aniso":
        u, p, _ = pressure_projection_anisotropic(
            u0, eps, 1.0, grid, tol=cfg.run.tol, max_iter=cfg.run.max_iter
        )
        return u, np.zeros(grid.shape_cells)
    u1, u2, _, _ = surface_pressure_projection(
        u0.u1, u0.u2, 1.0, grid, tol=cfg.run.tol, max_iter=cfg.run.max_iter
    )
    u3 = diagnose_w(u1, u2, grid)
    return StaggeredVelocity(u1, u2, u3), np.zeros((grid.nx, grid.ny))


@dataclass
class RunResult:
    history: RunHistory
    energy: EnergyReport
    norms: dict
    out_dir: str | None
    dt: float
    n_steps: int
    max_div: float
    runtime_s: float


def run_simulation(
    cfg: RunConfig,
    eps: float,
    mode: str,
    out_dir: str | None = None,
    dt: float | None = None,
    quiet: bool = True,
) -> RunResult:
    """Run one simulation to T and persist its artifacts.

    The time step is fixed up front: dt = T/N with N chosen so dt does not
    exceed the initial stability limit (or the supplied override); every step
    re-checks the limit and a violation aborts the run.  Snapshots are taken
    every ``snapshot_every`` steps (plus the initial and final states).
    """
    if mode not in ("aniso", "hydro"):
        raise ValueError(f"unknown mode {mode!r}")
    grid = build_grid(cfg.grid)
    params = cfg.phys_params(eps)
    M = cfg.diffusion
    theta = cfg.boundary_forcing(grid)
    source = cfg.source_spec(eps, mode)

    u0 = initial_velocity(cfg, grid)
    u0, p0 = _project_initial(u0, mode, eps, cfg, grid)
    state = SimState(0.0, 0, u0, p0, initial_concentration(cfg, grid))

    limit = stable_dt(state, params, M, grid, cfl=cfg.time.cfl, dt_max=cfg.time.dt_max)
    if dt is not None:
        if dt > limit * (1.0 + 1e-12):
            raise NumericsError(f"requested dt {dt} exceeds the initial limit {limit}")
        step_dt = dt
        n_steps = max(1, int(round(cfg.time.T / dt)))
    else:
        n_steps = max(1, int(math.ceil(cfg.time.T / limit - 1e-12)))
        step_dt = cfg.time.T / n_steps

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "snapshots"), exist_ok=True)

    def snap(s: SimState):
        if out_dir is not None:
            write_vtk(
                s,
                os.path.join(out_dir, "snapshots", f"step_{s.step:06d}.vtk"),
                grid,
                title=f"hydrolimit {mode} eps={eps:g} step={s.step}",
            )

    stepper = step_anisotropic if mode == "aniso" else step_hydrostatic
    states = [state]
    snap(state)
    max_div = float(np.max(np.abs(divergence(state.u, grid))))
    t0 = _time.perf_counter()
    p_old = None
    try:
        for n in range(1, n_steps + 1):
            # second-order extrapolated pressure guess: cheap CG warm start
            guess = None if p_old is None else 2.0 * state.p - p_old
            p_old = state.p
            state = stepper(
                state,
                params,
                M,
                theta,
                source,
                step_dt,
                grid,
                tol=cfg.run.tol,
                max_iter=cfg.run.max_iter,
                p_guess=guess,
            )
            max_div = max(max_div, float(np.max(np.abs(divergence(state.u, grid)))))
            if n % cfg.time.snapshot_every == 0 or n == n_steps:
                states.append(state)
                snap(state)
    except NumericsError:
        if out_dir is not None and states:
            write_vtk(
                states[-1],
                os.path.join(out_dir, "snapshots", "last_good.vtk"),
                grid,
                title=f"hydrolimit {mode} eps={eps:g} aborted",
            )
        raise
    runtime = _time.perf_counter() - t0

    snap_dt = step_dt * cfg.time.snapshot_every
    # The final snapshot may sit closer than one full interval to its
    # predecessor; drop it from the uniform ledger if the spacing is ragged.
    if n_steps % cfg.time.snapshot_every != 0:
        if len(states) > 2:
            states = states[:-1]
        else:
            snap_dt = n_steps * step_dt  # single interval: its actual length
    history = RunHistory(
        mode=mode,
        grid=grid,
        params=params,
        M=M,
        theta=theta,
        source=source,
        dt=snap_dt,
        states=states,
    )

    energy = energy_balance(history)
    norms = apriori_norms(history)

    if out_dir is not None:
        write_csv(
            os.path.join(out_dir, "energy.csv"),
            ["t", "E", "D", "W", "Q", "slack"],
            energy.rows(),
        )
        write_csv(
            os.path.join(out_dir, "norms.csv"),
            ["quantity", "value"],
            [(k, norms[k]) for k in APRIORI_NORM_NAMES],
        )
        _write_manifest(
            os.path.join(out_dir, "run.txt"),
            {
                "mode": mode,
                "eps": eps,
                "nx": grid.nx,
                "ny": grid.ny,
                "nz": grid.nz,
                "T": cfg.time.T,
                "dt": step_dt,
                "steps": n_steps,
                "snapshots": len(history.states),
                "cfl": cfg.time.cfl,
                "tol": cfg.run.tol,
                "seed": cfg.run.seed,
                "max_div": max_div,
                "status": "completed",
            },
        )

    if not quiet:
        print(
            f"[{mode} eps={eps:g}] {n_steps} steps, dt={step_dt:.3e}, "
            f"max|div|={max_div:.3e}, {runtime:.1f}s"
        )
    return RunResult(history, energy, norms, out_dir, step_dt, n_steps, max_div, runtime)


def _write_manifest(path: str, entries: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")


@dataclass
class SweepResult:
    report: ConvergenceReport
    hydro: RunResult
    aniso: dict  # eps -> RunResult
    translation: object
    norm_table: dict  # eps -> norms dict, plus "hydro"
    out_dir: str | None


def epsilon_sweep(cfg: RunConfig, out_dir: str | None = None, quiet: bool = True) -> SweepResult:
    """Hydrostatic reference plus one anisotropic run per eps in eps_list.

    All runs share dt (the minimum of the per-run initial limits) so the
    snapshot schedules line up for the convergence metrics.  Writes sweep.csv
    with one row per eps; partial results are flushed per completed run.
    """
    grid = build_grid(cfg.grid)
    eps_list = sorted(cfg.run.eps_list, reverse=True)

    # Common schedule: all runs start from the same initial data, so their
    # limits differ only through the eps-dependent rotation bound and the
    # mode of the initial projection.
    c0 = initial_concentration(cfg, grid)
    dts = []
    for eps, mode in [(e, "aniso") for e in eps_list] + [(eps_list[0], "hydro")]:
        u0p, _ = _project_initial(initial_velocity(cfg, grid), mode, eps, cfg, grid)
        s0 = SimState(0.0, 0, u0p, np.zeros(grid.shape_cells), c0)
        dts.append(
            stable_dt(
                s0, cfg.phys_params(eps), cfg.diffusion, grid,
                cfl=cfg.time.cfl, dt_max=cfg.time.dt_max,
            )
        )
    limit = min(dts)
    n_steps = max(1, int(math.ceil(cfg.time.T / limit - 1e-12)))
    dt = cfg.time.T / n_steps

    hydro_dir = os.path.join(out_dir, "hydro") if out_dir is not None else None
    if hydro_dir is not None:
        os.makedirs(hydro_dir, exist_ok=True)
    hydro = run_simulation(cfg, eps_list[0], "hydro", out_dir=hydro_dir, dt=dt, quiet=quiet)

    sweep_rows = []
    aniso_results = {}
    errors = {}
    norm_table = {"hydro": hydro.norms}
    translation = None
    for eps in eps_list:
        run_dir = os.path.join(out_dir, f"aniso_eps{eps:g}") if out_dir is not None else None
        if run_dir is not None:
            os.makedirs(run_dir, exist_ok=True)
        res = run_simulation(cfg, eps, "aniso", out_dir=run_dir, dt=dt, quiet=quiet)
        errs = spacetime_errors(res.history, hydro.history)
        errors[eps] = errs
        norm_table[eps] = res.norms
        slack_min = float(np.min(res.energy.slack))
        sweep_rows.append((eps, errs[0], errs[1], errs[2], slack_min, res.runtime_s))
        if out_dir is not None:
            write_csv(
                os.path.join(out_dir, "sweep.csv"),
                ["eps", "err_uH", "err_u3", "err_C", "energy_slack_min", "runtime_s"],
                sweep_rows,
            )
        if eps == eps_list[0]:
            # Translation-modulus certificate on the largest-eps run.
            hs = _translation_shifts(res.history)
            if hs is not None:
                translation = translation_modulus(
                    [s.C for s in res.history.states], res.history.dt, grid, hs
                )
        # Free the bulky history once its metrics are extracted.
        res.history.states = [res.history.states[0], res.history.states[-1]]
        aniso_results[eps] = res

    from .diagnostics import ConvergenceRow

    rows = [ConvergenceRow(eps, *errors[eps]) for eps in eps_list]

    def fit(vals):
        eps_arr = np.array(eps_list)
        vals = np.asarray(vals)
        if len(vals) >= 2 and np.all(vals > 0):
            return float(np.polyfit(np.log(eps_arr), np.log(vals), 1)[0])
        return float("nan")

    report = ConvergenceReport(
        rows=rows,
        rate_uH=fit([r.err_uH for r in rows]),
        rate_u3=fit([r.err_u3 for r in rows]),
        rate_C=fit([r.err_C for r in rows]),
    )
    return SweepResult(report, hydro, aniso_results, translation, norm_table, out_dir)


def _translation_shifts(history: RunHistory):
    """Shifts {1,2,4,8}*dt_snap intersected with (0, T/2)."""
    T = history.T
    hs = [m * history.dt for m in (1, 2, 4, 8) if m * history.dt < T / 2]
    return hs if len(hs) >= 3 else None
