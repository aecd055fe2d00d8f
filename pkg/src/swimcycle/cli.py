"""Command-line drivers: ``simulate``, ``find-cycle``, ``reconstruct``, ``validate-config``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Errors are
written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .body import ActuationSpec, BodyState, fish_template
from .coupling import (EnergyLedger, Stepper, SystemState, load_checkpoint,
                       save_checkpoint)
from .cycles import CycleProblem, PoincareConfig, find_cycle
from .errors import ConfigError, NumericalError, SwimcycleError
from .fluid import FluidGrid, FluidState, fluid_to_bytes
from .reduction import load_cycle, reconstruct, save_cycle
from .se2 import align

# -- building blocks ---------------------------------------------------------------


def build_grid(cfg: cfgmod.RunConfig) -> FluidGrid:
    g = cfg.grid
    return FluidGrid(g.nx, g.ny, g.Lx, g.Ly, g.mu, g.rho_f, g.sponge_width, g.sponge_rate, g.solver)


def build_mesh(cfg: cfgmod.RunConfig, grid: FluidGrid):
    b = cfg.body
    return fish_template(b.n_nodes, b.length, b.width, b.k_stretch, b.k_bend, b.damping, b.density,
                         center=tuple(grid.center))


def build_actuation(cfg: cfgmod.RunConfig) -> ActuationSpec:
    a = cfg.actuation
    return ActuationSpec(a.amplitude, a.period, a.wavenumber, a.pattern)


def build_stepper(cfg: cfgmod.RunConfig, workers: int = 1) -> Stepper:
    grid = build_grid(cfg)
    mesh = build_mesh(cfg, grid)
    try:
        return Stepper(grid, mesh, build_actuation(cfg), cfg.stepper.dt, cfg.stepper.k_penalty)
    except ValueError as e:
        raise ConfigError("stepper.dt", str(e)) from None


def build_problem(cfg: cfgmod.RunConfig, workers: int = 1) -> CycleProblem:
    c = cfg.cycle
    pc = PoincareConfig(
        period=cfg.actuation.period, tol=c.tol, max_iters=c.max_iters, accel=c.accel,
        anderson_m=c.anderson_m, probe_step=c.probe_step, probe_dim=c.probe_dim, mode=c.mode,
        n_snapshots=c.n_snapshots, weights=None if c.weights is None else tuple(c.weights),
        lift_tol=c.lift_tol, floquet=c.floquet, workers=workers,
    )
    return CycleProblem(build_stepper(cfg, workers), pc, length=cfg.body.length)


def initial_state(cfg: cfgmod.RunConfig, stepper: Stepper, seed: int) -> SystemState:
    """Rest state, or rest with node positions jittered by ``perturbation * length``."""
    body = BodyState.at_rest(stepper.mesh)
    if cfg.run.initial == "perturbed":
        rng = np.random.default_rng(seed)
        body.positions += cfg.run.perturbation * cfg.body.length * rng.standard_normal(body.positions.shape)
    return SystemState(body, FluidState.zeros(stepper.grid), 0.0)


# -- CSV with a comment header --------------------------------------------------------


def write_csv(path, meta: dict, columns, rows) -> None:
    """Comment lines ``# key: value`` then a header and ``repr``-formatted rows."""
    with open(path, "w") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}: {meta[k]}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def read_csv(path) -> tuple[dict, list, list]:
    meta, rows, columns = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = v
            elif columns is None:
                columns = line.split(",")
            elif line:
                rows.append([int(x) if x.lstrip("-").isdigit() else float(x) for x in line.split(",")])
    return meta, columns, rows


class _CsvStream:
    """Incremental writer matching :func:`write_csv`."""

    def __init__(self, path, meta, columns):
        self.fh = open(path, "w")
        for k in sorted(meta):
            self.fh.write(f"# {k}: {meta[k]}\n")
        self.fh.write(",".join(columns) + "\n")

    def write(self, row):
        self.fh.write(",".join(_fmt(x) for x in row) + "\n")

    def close(self):
        self.fh.close()


def _meta(cfg: cfgmod.RunConfig, seed: int, **extra) -> dict:
    d = {"config_hash": cfg.config_hash(), "seed": seed}
    d.update(extra)
    return d


def _out_dir(cfg: cfgmod.RunConfig, override) -> str:
    d = override or cfg.outputs.directory
    os.makedirs(d, exist_ok=True)
    return d


def _write_config_copy(cfg: cfgmod.RunConfig, out: str) -> None:
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfgmod.dumps(cfg))


# -- commands -----------------------------------------------------------------------


def _resume_key(d: dict) -> str:
    """Hash of the settings a resumed run must share with its checkpoint.

    The horizon and the output options may change, so a run can be extended.
    """
    d = {k: v for k, v in d.items() if k != "outputs"}
    d["run"] = {k: v for k, v in d.get("run", {}).items() if k != "horizon"}
    return cfgmod.config_hash(d)


def cmd_validate(cfg: cfgmod.RunConfig, args) -> dict:
    return {"valid": True, "config_hash": cfg.config_hash(), "config": cfg.to_dict()}


def cmd_simulate(cfg: cfgmod.RunConfig, args) -> dict:
    """Passive or actuated run over ``run.horizon``; writes ledger, trajectory and snapshots."""
    seed = cfg.outputs.seed
    out = _out_dir(cfg, args.out)
    stepper = build_stepper(cfg, args.workers)
    grid, mesh, act = stepper.grid, stepper.mesh, stepper.actuation
    n_steps = int(round(cfg.run.horizon / stepper.dt))
    start_step = 0
    if args.resume:
        head, state = load_checkpoint(args.resume)
        if _resume_key(head.get("config", {})) != _resume_key(cfg.to_dict()):
            raise ConfigError("--resume", "checkpoint was written with a different configuration")
        start_step = int(head["step"])
        seed = int(head["seed"])
    else:
        state = initial_state(cfg, stepper, seed)
    _write_config_copy(cfg, out)
    meta = _meta(cfg, seed)
    ledger = _CsvStream(os.path.join(out, "ledger.csv"), meta, EnergyLedger.CSV_COLUMNS)
    traj_cols = ["t"] + [f"{c}{i}" for i in range(mesh.n_nodes) for c in ("x", "y")]
    traj = _CsvStream(os.path.join(out, "trajectory.csv"), meta, traj_cols)
    o = cfg.outputs
    stride = math.gcd(o.ledger_every, o.trajectory_every)
    if o.snapshot_every:
        stride = math.gcd(stride, o.snapshot_every)
    e0 = stepper.ledger(state).E_total
    peak = state.fluid.max_speed()
    worst_increase = 0.0
    prev_e = e0
    step = start_step

    def emit(k, st):
        nonlocal peak, worst_increase, prev_e
        if k % o.ledger_every == 0:
            L = stepper.ledger(st)
            ledger.write(L.csv_row())
            if k > start_step:
                worst_increase = max(worst_increase, L.E_total - prev_e)
            prev_e = L.E_total
        if k % o.trajectory_every == 0:
            traj.write([st.t] + list(st.body.positions.ravel()))
        if o.snapshot_every and k % o.snapshot_every == 0:
            with open(os.path.join(out, f"fluid_{k:08d}.cyf"), "wb") as fh:
                fh.write(fluid_to_bytes(grid, st.fluid, st.t))
        peak = max(peak, st.fluid.max_speed())

    try:
        emit(step, state)
        while step < n_steps:
            k = min(stride, n_steps - step)
            stepper.advance(state, k, out=state)
            step += k
            emit(step, state)
    except NumericalError as e:
        e.args = (f"{e} (step {step}, t={state.t!r})",)
        raise
    finally:
        ledger.close()
        traj.close()
    save_checkpoint(os.path.join(out, "checkpoint.ckpt"), state, grid,
                    {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": seed, "step": step})
    final = stepper.ledger(state)
    shape_err = float(np.abs(align(state.body.positions, mesh.masses, mesh.template).shape - mesh.template).max())
    summary = {
        "config_hash": cfg.config_hash(), "seed": seed, "steps": step, "t": state.t,
        "E_initial": e0, "E_final": final.E_total, "max_energy_increase": worst_increase,
        "umax_final": state.fluid.max_speed(), "umax_peak": peak, "shape_distance": shape_err,
        "max_slip": stepper.max_slip,
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def _iteration_log(path, meta):
    stream = _CsvStream(path, meta, ["iter", "residual", "z.theta", "z.tx", "z.ty"])

    def log(it, r, z):
        stream.write([it, r, z.theta, z.tx, z.ty])
        stream.fh.flush()

    return stream, log


def cmd_find_cycle(cfg: cfgmod.RunConfig, args) -> dict:
    seed = cfg.outputs.seed
    out = _out_dir(cfg, args.out)
    problem = build_problem(cfg, args.workers)
    _write_config_copy(cfg, out)
    meta = _meta(cfg, seed)
    stream, log = _iteration_log(os.path.join(out, "iterations.csv"), meta)
    x0 = initial_state(cfg, problem.stepper, seed) if cfg.run.initial == "perturbed" else None
    t0 = time.perf_counter()
    try:
        result = find_cycle(problem, x0, log=log)
    finally:
        stream.close()
    result.meta = {"config_hash": cfg.config_hash(), "seed": seed,
                   "wall_seconds": round(time.perf_counter() - t0, 1)}
    save_cycle(result, os.path.join(out, "cycle.json"), {"config": cfg.to_dict()})
    return {"config_hash": cfg.config_hash(), "converged": True, "iterations": result.iterations,
            "residual": result.residual, "holonomy": result.holonomy.to_dict(),
            "floquet_max": max(result.floquet) if result.floquet else None, "stable": result.stable}


def cmd_reconstruct(cfg: cfgmod.RunConfig, args) -> dict:
    """Trajectory from a stored cycle; with ``--compare`` also a direct simulation."""
    cycle_path = args.cycle or os.path.join(cfg.outputs.directory, "cycle.json")
    try:
        loop, doc = load_cycle(cycle_path)
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError("--cycle", f"cannot read cycle file {cycle_path}: {e}") from None
    stored = doc.get("config")
    if stored is not None and cfgmod.config_hash(stored) != doc["meta"].get("config_hash"):
        raise ConfigError("--cycle", "cycle file config hash does not match its stored config")
    out = _out_dir(cfg, args.out)
    n_periods = args.periods or cfg.run.periods
    K = loop.n_snapshots
    T = loop.period
    problem = build_problem(cfg, args.workers)
    base = problem.pose(loop.start_state) if loop.start_state is not None else problem.canonical
    times = [k * T / K for k in range(n_periods * K)]
    recon = [reconstruct(loop, base, n_periods, t) for t in times]
    meta = _meta(cfg, cfg.outputs.seed, cycle_hash=doc["meta"].get("config_hash"))
    n = recon[0].shape[0]
    cols = ["t"] + [f"{c}{i}" for i in range(n) for c in ("x", "y")]
    write_csv(os.path.join(out, "reconstruction.csv"), meta, cols,
              [[t] + list(x.ravel()) for t, x in zip(times, recon)])
    summary = {"config_hash": cfg.config_hash(), "periods": n_periods, "samples": len(times),
               "holonomy": loop.holonomy.to_dict()}
    if args.compare:
        if loop.start_state is None:
            raise ConfigError("--cycle", "cycle file has no start state to simulate from")
        stepper = problem.stepper
        every = problem.steps // K
        state = SystemState(loop.start_state.body.copy(), loop.start_state.fluid.copy(), 0.0)
        rows, worst = [], 0.0
        for k, t in enumerate(times):
            if k:
                stepper.advance(state, every, out=state)
            d = float(np.max(np.linalg.norm(state.body.positions - recon[k], axis=1)))
            worst = max(worst, d)
            rows.append([t, d])
        write_csv(os.path.join(out, "comparison.csv"), meta, ["t", "discrepancy"], rows)
        summary["max_discrepancy"] = worst
    _write_json(os.path.join(out, "reconstruct_summary.json"), summary)
    return summary


def _write_json(path, d):
    with open(path, "w") as fh:
        fh.write(json.dumps(d, indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "find-cycle": cmd_find_cycle,
    "reconstruct": cmd_reconstruct,
    "validate-config": cmd_validate,
}


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swimcycle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides outputs.directory)")
        sp.add_argument("--workers", type=int, default=1, help="parallel Floquet probes / FFT threads")
        sp.add_argument("--seed", type=_seed, help="overrides outputs.seed")
        if name == "simulate":
            sp.add_argument("--resume", help="checkpoint to continue from")
        if name == "reconstruct":
            sp.add_argument("--cycle", help="cycle JSON written by find-cycle")
            sp.add_argument("--periods", type=int, help="number of periods (default run.periods)")
            sp.add_argument("--compare", action="store_true", help="also simulate directly and compare")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg.outputs.seed = args.seed
        result = COMMANDS[args.command](cfg, args)
    except SwimcycleError as e:
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        return e.exit_code
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
