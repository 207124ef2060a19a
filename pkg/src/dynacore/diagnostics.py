"""Scalar diagnostics of a model state."""

from dataclasses import dataclass

import numpy as np

from . import geometry as geo


@dataclass
class DiagnosticsRecord:
    step: int
    time: float                 # [s]
    total_mass: float           # [kg]
    min_surface_pressure: float  # [hPa]
    max_w: float                # [m/s]
    max_u: float                # [m/s]
    solver_iterations: int

    def header(self):
        return ("step,time_s,total_mass_kg,min_ps_hPa,"
                "max_w_ms,max_u_ms,solver_iters")

    def line(self):
        return (f"{self.step},{self.time:.1f},{self.total_mass:.10e},"
                f"{self.min_surface_pressure:.6f},{self.max_w:.6e},"
                f"{self.max_u:.6e},{self.solver_iterations}")


def physical_winds(transport, fem, u):
    """Vertical and zonal wind components at cell centres.

    Returns (w, u_zonal) as (6, n, n, m) arrays.
    """
    mesh = fem.mesh
    uc = transport.cartesian_wind(transport.winds_from_w2(u))
    xyz = mesh.column_centre_xyz()
    lon, _ = geo.cartesian_to_lonlat(xyz)
    w = np.einsum('pijka,pija->pijk', uc, xyz)
    east = np.stack([-np.sin(lon), np.cos(lon), np.zeros_like(lon)], axis=-1)
    uz = np.einsum('pijka,pija->pijk', uc, east)
    return w, uz


def surface_pressure(fem, Pi):
    """Surface pressure [Pa] per column.

    Exner is extrapolated linearly in height from the lowest two cell
    levels down to the column surface.
    """
    mesh = fem.mesh
    c = fem.const
    Pig = Pi[fem.w3_dofs]
    rc = mesh.centre_data()[4]
    rn = mesh.r_nodes
    rsurf = 0.25 * (rn[:, :-1, :-1, 0] + rn[:, 1:, :-1, 0]
                    + rn[:, :-1, 1:, 0] + rn[:, 1:, 1:, 0])
    z0 = rc[..., 0] - rsurf
    z1 = rc[..., 1] - rsurf
    Pis = Pig[..., 0] + (Pig[..., 1] - Pig[..., 0]) * (-z0) / (z1 - z0)
    return c.p0 * Pis ** (1.0 / c.kappa)


def diagnose(state, fem, transport, step=0, time=0.0, solver_iterations=0):
    w, uz = physical_winds(transport, fem, state.u)
    ps = surface_pressure(fem, state.Pi)
    mass = float(fem.M3_diag @ state.rho)
    return DiagnosticsRecord(
        step=step, time=time, total_mass=mass,
        min_surface_pressure=float(ps.min()) / 100.0,
        max_w=float(np.abs(w).max()), max_u=float(np.abs(uz).max()),
        solver_iterations=solver_iterations)
