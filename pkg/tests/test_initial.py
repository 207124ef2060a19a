"""Analytic initial states and scalar diagnostics."""

from dataclasses import replace

import numpy as np

from dynacore import mesh as msh
from dynacore import geometry as geo
from dynacore import initial
from dynacore.constants import EARTH
from dynacore.diagnostics import physical_winds, surface_pressure
from dynacore.fem import FemOperators
from dynacore.transport import Transport


def make(n=6, m=8, z_top=10000.0, constants=EARTH, orography=None):
    spec = msh.VerticalMeshSpec(kind="uniform", z_top=z_top, layers=m)
    mesh = msh.CubedSphereMesh(n, spec, a=constants.a, orography=orography)
    return mesh, FemOperators(mesh, constants)


def test_resting_orography_profile():
    lon0, lat0 = initial.RESTING_CENTRE
    assert initial.resting_orography(lon0, lat0) == 2000.0
    # half the envelope at rm = Rm/2, which sits on a ripple crest
    rm = initial.RESTING_RM / 2.0
    zb = initial.resting_orography(lon0 + rm, 0.0)
    assert abs(zb - 1000.0) < 1.0e-9
    assert initial.resting_orography(lon0 + initial.RESTING_RM, 0.0) == 0.0
    assert initial.resting_orography(lon0 + np.pi * 0.9, 0.0) == 0.0


def test_gaussian_orography_profile():
    lon0, lat0 = initial.GAUSS_CENTRE
    a = 6371229.0
    assert abs(initial.gaussian_orography(lon0, lat0, a) - 2000.0) < 1e-9
    rm = initial.GAUSS_ZETA / a
    zb = initial.gaussian_orography(lon0, lat0 + rm, a)
    assert abs(zb - 2000.0 * np.exp(-1.0)) < 1.0e-6


def test_resting_state_is_discretely_balanced():
    const = replace(EARTH, omega=0.0)
    mesh, fem = make(constants=const)
    state = initial.init_resting_atmosphere(mesh, fem)
    R = fem.momentum_rhs(state.u, state.theta, state.Pi,
                         fem.geopotential_w3())
    scale = np.abs(fem.D.T @ fem.geopotential_w3()).max()
    assert np.abs(R).max() < 1.0e-10 * scale


def test_initial_states_satisfy_the_equation_of_state():
    const = replace(EARTH, omega=0.0)
    mesh, fem = make(constants=const)
    for state in (initial.init_resting_atmosphere(mesh, fem),
                  initial.init_gaussian_hill(mesh, fem)):
        res = fem.eos_residual(state.Pi, state.rho, state.theta)
        assert np.abs(res).max() < 1.0e-12


def test_gaussian_hill_surface_pressure_profile():
    mesh, fem = make(n=8, m=10)
    state = initial.init_gaussian_hill(mesh, fem)
    ps = surface_pressure(fem, state.Pi) / 100.0    # hPa
    xyz = mesh.column_centre_xyz()
    _, lat = geo.cartesian_to_lonlat(xyz)
    polar = ps[np.abs(lat) > 1.4]
    assert abs(polar.mean() - 930.0) < 1.0
    # full analytic profile; ~1043.2 hPa at the equator
    c = EARTH
    bal = (2.0 * c.omega * c.a + initial.GAUSS_U0) * initial.GAUSS_U0 \
        / (2.0 * c.R * initial.GAUSS_T) * np.cos(lat) ** 2
    expect = initial.GAUSS_PP * np.exp(bal) / 100.0
    assert np.abs(ps / expect - 1.0).max() < 3.0e-3


def test_physical_winds_of_solid_body_flow():
    mesh, fem = make(n=8, m=4)
    tp = Transport(mesh)
    state = initial.init_gaussian_hill(mesh, fem)
    w, uz = physical_winds(tp, fem, state.u)
    xyz = mesh.column_centre_xyz()
    _, lat = geo.cartesian_to_lonlat(xyz)
    expect = initial.GAUSS_U0 * np.cos(lat)[..., None] \
        * (1.0 + (mesh.centre_data()[4] - mesh.a) / mesh.a)
    assert np.abs(w).max() < 0.05 * initial.GAUSS_U0
    assert np.abs(uz - expect).max() < 0.05 * initial.GAUSS_U0
