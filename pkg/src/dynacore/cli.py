"""Command line entry point: run, transport, mesh-info."""

import argparse
import os
import sys

import numpy as np

from . import geometry as geo
from . import initial
from . import windfields as wf
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .config import ConfigError, load_config
from .diagnostics import diagnose, physical_winds, surface_pressure
from .fem import FemOperators
from .latlon import default_resolution, interpolate_to_latlon
from .mesh import CubedSphereMesh, VerticalMeshSpec
from .output import write_csv_slices, write_gridded
from .solver import SolverFailureError
from .timestepper import Timestepper
from .transport import Transport

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_experiment(config):
    """(mesh, fem, stepper, initial state) for a parsed config."""
    constants = config.constants
    case = config[("run", "case")]
    if case == "resting-atmosphere":
        # the resting test case is defined non-rotating
        from dataclasses import replace
        constants = replace(constants, omega=0.0)
        orography = initial.resting_orography
    else:
        def orography(lon, lat):
            return initial.gaussian_orography(lon, lat, a=constants.a)

    spec = VerticalMeshSpec(kind=config[("mesh", "vertical")],
                            z_top=config[("mesh", "z_top")],
                            layers=config[("mesh", "layers")])
    mesh = CubedSphereMesh(config[("mesh", "n")], spec, a=constants.a,
                           orography=orography)
    fem = FemOperators(mesh, constants)
    stepper = Timestepper(fem, config.timestepping(), log=print)
    if case == "resting-atmosphere":
        state = initial.init_resting_atmosphere(mesh, fem)
    else:
        state = initial.init_gaussian_hill(mesh, fem)
    return mesh, fem, stepper, state


def _gridded_fields(mesh, fem, stepper, state, points):
    nlat, nlon = default_resolution(mesh.n, points or None)
    w, uz = physical_winds(stepper.transport, fem, state.u)
    ps = surface_pressure(fem, state.Pi)
    return {
        "surface_pressure": interpolate_to_latlon(mesh, ps, nlat, nlon),
        "vertical_wind": interpolate_to_latlon(mesh, w, nlat, nlon),
        "zonal_wind": interpolate_to_latlon(mesh, uz, nlat, nlon),
    }


def run_experiment(config, steps=None, output_dir=None, checkpoint=None,
                   restart=None, csv=False, log=print):
    mesh, fem, stepper, state = build_experiment(config)
    constants = fem.const
    n_steps = config[("run", "steps")] if steps is None else steps
    outdir = output_dir or config[("run", "output_dir")]
    cadence = config[("run", "output_every")]
    points = config[("run", "latlon_points")]
    dt = config[("run", "dt")]
    os.makedirs(outdir, exist_ok=True)

    start = 0
    if restart is not None:
        state, info = read_checkpoint(restart, mesh, constants)
        start = info["step"]

    diag_path = os.path.join(outdir, "diagnostics.csv")
    mode = "a" if restart is not None and os.path.exists(diag_path) else "w"
    with open(diag_path, mode) as diag:
        rec = diagnose(state, fem, stepper.transport,
                       step=start, time=start * dt)
        if mode == "w":
            diag.write(rec.header() + "\n")
            diag.write(rec.line() + "\n")
        log(rec.line())

        def emit(step):
            fields = _gridded_fields(mesh, fem, stepper, state, points)
            if csv:
                write_csv_slices(outdir, fields, step=step)
            else:
                write_gridded(
                    os.path.join(outdir, f"grid_step{step:06d}.bin"),
                    fields, step=step, time=step * dt)

        if cadence > 0 and start == 0:
            emit(0)
        for k in range(start + 1, start + n_steps + 1):
            try:
                state, telemetry = stepper.step(state, k)
            except SolverFailureError as exc:
                log(f"solver failure at step {k}: {exc}")
                return EXIT_NUMERICAL
            bad = state.check_finite()
            if bad is not None:
                log(f"aborting: non-finite values in field "
                    f"'{bad}' at step {k}")
                return EXIT_NUMERICAL
            iters = max(t.iterations for t in telemetry)
            rec = diagnose(state, fem, stepper.transport, step=k,
                           time=k * dt, solver_iterations=iters)
            diag.write(rec.line() + "\n")
            log(rec.line())
            if cadence > 0 and k % cadence == 0:
                emit(k)

    if checkpoint is not None:
        write_checkpoint(checkpoint, state, mesh, constants,
                         step=start + n_steps, time=(start + n_steps) * dt)
    return EXIT_OK


def transport_case(case, n, layers, dt, steps, degree=2, monotone=False,
                   log=print):
    """Standalone transport experiment; prints error/conservation tables."""
    if degree != 2:
        raise ConfigError("only the degree-2 reconstruction is built")
    a = 6371229.0
    spec = VerticalMeshSpec(kind="uniform", z_top=10000.0, layers=layers)
    mesh = CubedSphereMesh(n, spec, a=a)
    tp = Transport(mesh)

    if case == "solid-body":
        axis = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
        u0 = 2.0 * np.pi * a / (12.0 * 86400.0)
        u = wf.solid_body_flux(mesh, axis, u0)
    elif case == "deformational":
        u = wf.deformational_flux(mesh, amplitude=1.0e7)
    else:
        raise ConfigError(f"unknown transport case {case!r}")
    winds = tp.winds_from_w2(u)

    xyz = mesh.column_centre_xyz()
    c0 = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    d = np.arccos(np.clip(xyz @ c0, -1.0, 1.0))
    s0 = np.where(d < 1.0, 0.5 * (1.0 + np.cos(np.pi * d)), 0.0)
    s0 = np.repeat(s0[..., None], mesh.m, axis=-1)

    vols = tp.volumes
    mass0 = float((s0 * vols).sum())
    s = s0.copy()
    log(f"{'step':>6} {'min':>12} {'max':>12} {'mass_rel':>12}")
    for k in range(1, steps + 1):
        s = tp.advect_w3(s, winds, dt, conservative=True, clip=monotone)
        if k % max(1, steps // 10) == 0 or k == steps:
            mass = float((s * vols).sum())
            log(f"{k:>6} {s.min():>12.5e} {s.max():>12.5e} "
                f"{mass / mass0 - 1.0:>12.5e}")
    err = s - s0
    l2 = np.sqrt(float((err ** 2 * vols).sum() / (s0 ** 2 * vols).sum()))
    log("final-state errors relative to the initial field:")
    log(f"l2 = {l2:.6e}  linf = {abs(err).max():.6e}")
    log(f"mass conservation error = {(s * vols).sum() / mass0 - 1.0:.3e}")
    return EXIT_OK


def mesh_info(n, layers, log=print):
    spec = VerticalMeshSpec(kind="uniform", z_top=10000.0, layers=layers)
    mesh = CubedSphereMesh(n, spec)
    log(mesh.summary())
    log(f"average grid spacing = "
        f"{geo.average_grid_spacing(n, mesh.a) / 1000.0:.1f} km")
    log(f"dofs: velocity = {mesh.n_w2}  density = {mesh.n_w3}  "
        f"temperature = {mesh.n_wtheta}")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(
        prog="dynacore",
        description="semi-implicit FEM/FV dynamical core on the sphere")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a configured experiment")
    runp.add_argument("--config", required=True)
    runp.add_argument("--steps", type=int, default=None)
    runp.add_argument("--output", default=None)
    runp.add_argument("--checkpoint", default=None,
                      help="write a checkpoint file at the end of the run")
    runp.add_argument("--restart", default=None,
                      help="resume from a checkpoint file")
    runp.add_argument("--csv", action="store_true",
                      help="emit CSV slices instead of binary grids")

    tp = sub.add_parser("transport", help="transport-only test")
    tp.add_argument("--case", required=True,
                    choices=["solid-body", "deformational"])
    tp.add_argument("--n", type=int, required=True)
    tp.add_argument("--layers", type=int, required=True)
    tp.add_argument("--dt", type=float, required=True)
    tp.add_argument("--steps", type=int, required=True)
    tp.add_argument("--degree", type=int, default=2)
    tp.add_argument("--monotone", action="store_true")

    mi = sub.add_parser("mesh-info", help="print mesh statistics")
    mi.add_argument("--n", type=int, required=True)
    mi.add_argument("--layers", type=int, required=True)
    return p


def main(argv=None):
    threads = os.environ.get("DYNACORE_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)
        os.environ.setdefault("OPENBLAS_NUM_THREADS", threads)

    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            return run_experiment(
                config, steps=args.steps, output_dir=args.output,
                checkpoint=args.checkpoint, restart=args.restart,
                csv=args.csv)
        if args.command == "transport":
            return transport_case(args.case, args.n, args.layers,
                                  args.dt, args.steps, degree=args.degree,
                                  monotone=args.monotone)
        return mesh_info(args.n, args.layers)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
