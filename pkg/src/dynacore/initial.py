"""Analytic initial states for the standard test cases.

Profiles are sampled at dof locations; the Exner pressure is then
re-integrated column by column with the discrete hydrostatic relation of
the weak pressure gradient so the columns start as balanced as sampling
permits, and the density follows from the equation of state.
"""

import numpy as np

from . import geometry as geo
from . import windfields as wf
from .timestepper import StateVector

# resting atmosphere over orography (cosine envelope mountain)
RESTING_H0 = 2000.0
RESTING_RM = 3.0 * np.pi / 4.0
RESTING_ZETA = np.pi / 16.0
RESTING_CENTRE = (3.0 * np.pi / 2.0, 0.0)   # (lon, lat)
RESTING_T0 = 300.0
RESTING_LAPSE = 0.0065

# Gaussian hill in a balanced zonal flow
GAUSS_H0 = 2000.0
GAUSS_ZETA = 1.5e6                           # halfwidth [m]
GAUSS_CENTRE = (-np.pi / 2.0, np.pi / 6.0)
GAUSS_T = 288.0
GAUSS_U0 = 20.0
GAUSS_PP = 9.3e4                             # polar surface pressure [Pa]


def resting_orography(lon, lat):
    """Wide cosine-bell mountain with a cosine-squared ripple."""
    rm = geo.great_circle_distance(lon, lat, *RESTING_CENTRE)
    zb = 0.5 * RESTING_H0 * (1.0 + np.cos(np.pi * rm / RESTING_RM)) \
        * np.cos(np.pi * rm / RESTING_ZETA) ** 2
    return np.where(rm < RESTING_RM, zb, 0.0)


def gaussian_orography(lon, lat, a=6371229.0):
    rm = geo.great_circle_distance(lon, lat, *GAUSS_CENTRE)
    # rm is an angle; the width is a physical length at radius a
    return GAUSS_H0 * np.exp(-(a * rm / GAUSS_ZETA) ** 2)


def _dof_radii(mesh):
    """Cell-centre and level radii at the column centre lines."""
    rc = mesh.centre_data()[4]
    rn = mesh.r_nodes
    rf = 0.25 * (rn[:, :-1, :-1, :] + rn[:, 1:, :-1, :]
                 + rn[:, :-1, 1:, :] + rn[:, 1:, 1:, :])
    return rc, rf


def _column_vec(fem, grid):
    """(6, n, n) per-column grid values -> column-ordered vector."""
    cols = fem.w3_dofs[..., 0] // fem.mesh.m
    out = np.empty(fem.mesh.n_columns)
    out[cols] = grid
    return out


def hydrostatic_exner(fem, theta, Pi_bottom):
    """Discretely hydrostatic Exner pressure, integrated per column.

    Chooses Pi so the radial weak pressure-gradient plus geopotential
    residual vanishes on every interior radial face, anchored at the
    given bottom-cell values.
    """
    mesh = fem.mesh
    c = fem.const
    m = mesh.m
    phi = fem.geopotential_w3().reshape(mesh.n_columns, m)
    th = theta.reshape(mesh.n_columns, m + 1)
    Pi = np.empty((mesh.n_columns, m))
    Pi[:, 0] = Pi_bottom
    for k in range(m - 1):
        Pi[:, k + 1] = Pi[:, k] + (phi[:, k] - phi[:, k + 1]) \
            / (c.cp * th[:, k + 1])
    return Pi.reshape(-1)


def density_from_state(fem, Pi, theta):
    """EOS-consistent density given Exner pressure and theta."""
    c = fem.const
    kap = c.kappa
    theta_c = fem.theta_cell_mean(theta)
    return c.p0 * Pi ** ((1.0 - kap) / kap) / (c.R * theta_c)


def init_resting_atmosphere(mesh, fem):
    """Resting constant-lapse-rate atmosphere over the wide mountain.

    The case is non-rotating; build the operators with omega = 0.
    """
    c = fem.const
    rc, rf = _dof_radii(mesh)
    zc = rc - mesh.a
    zf = rf - mesh.a
    ex = c.g / (c.cp * RESTING_LAPSE)

    def T(z):
        return RESTING_T0 - RESTING_LAPSE * z

    def Pi_analytic(z):
        return (T(z) / RESTING_T0) ** ex

    theta = np.empty(mesh.n_wtheta)
    theta[fem.wtheta_dofs] = T(zf) / Pi_analytic(zf)

    Pi_bottom = _column_vec(fem, Pi_analytic(zc[..., 0]))
    Pi = hydrostatic_exner(fem, theta, Pi_bottom)
    rho = density_from_state(fem, Pi, theta)
    return StateVector(np.zeros(mesh.n_w2), rho, theta, Pi)


def init_gaussian_hill(mesh, fem):
    """Isothermal atmosphere in balanced solid-body zonal flow."""
    c = fem.const
    rc, rf = _dof_radii(mesh)
    xyz = mesh.column_centre_xyz()
    _, lat = geo.cartesian_to_lonlat(xyz)
    kap = c.kappa

    def pressure(latv, z):
        bal = (2.0 * c.omega * c.a + GAUSS_U0) * GAUSS_U0 \
            / (2.0 * c.R * GAUSS_T) * np.cos(latv) ** 2
        return GAUSS_PP * np.exp(bal) * np.exp(-z * c.g / (c.R * GAUSS_T))

    def Pi_analytic(latv, z):
        return (pressure(latv, z) / c.p0) ** kap

    theta = np.empty(mesh.n_wtheta)
    theta[fem.wtheta_dofs] = GAUSS_T / Pi_analytic(
        lat[..., None], rf - mesh.a)

    Pi_bottom = _column_vec(fem, Pi_analytic(lat, (rc - mesh.a)[..., 0]))
    Pi = hydrostatic_exner(fem, theta, Pi_bottom)
    rho = density_from_state(fem, Pi, theta)
    u = wf.solid_body_flux(mesh, [0.0, 0.0, 1.0], GAUSS_U0)
    u[~mesh.w2_free] = 0.0       # no flow through the surface or lid
    return StateVector(u, rho, theta, Pi)
