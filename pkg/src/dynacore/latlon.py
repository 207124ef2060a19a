"""Bilinear interpolation of cell-centred fields to a lat-lon grid."""

import numpy as np

from . import geometry as geo


def latlon_grid(nlat, nlon):
    """Cell-centred regular grid (lat ascending, lon in [-pi, pi))."""
    lat = -0.5 * np.pi + (np.arange(nlat) + 0.5) * np.pi / nlat
    lon = -np.pi + (np.arange(nlon) + 0.5) * 2.0 * np.pi / nlon
    return lat, lon


def default_resolution(n, points_per_quadrant=None):
    """2n points per 90 degrees unless overridden."""
    q = points_per_quadrant or 2 * n
    return 2 * q, 4 * q


def interpolate_to_latlon(mesh, field, nlat=None, nlon=None):
    """Interpolate a (6, n, n) or (6, n, n, L) per-column field.

    Bilinear in the panel angles, using the 2-cell halo so points near
    panel seams interpolate into the neighbouring panel instead of
    extrapolating.  Returns (nlat, nlon[, L]) with rows ordered south to
    north.
    """
    if nlat is None or nlon is None:
        nlat, nlon = default_resolution(mesh.n)
    lat, lon = latlon_grid(nlat, nlon)
    LAT, LON = np.meshgrid(lat, lon, indexing="ij")
    xyz = geo.lonlat_to_cartesian(LON, LAT)
    panel, xi, eta, _ = geo.cartesian_to_panel(xyz)
    p0 = panel - 1

    ext = mesh.extend_scalar(np.asarray(field), fill_corners=True)
    h = mesh.halo
    dxi = mesh.dxi
    # fractional index into the halo-extended centre grid
    fi = (xi + np.pi / 4.0) / dxi - 0.5 + h
    fj = (eta + np.pi / 4.0) / dxi - 0.5 + h
    i0 = np.clip(np.floor(fi).astype(int), 0, mesh.n + 2 * h - 2)
    j0 = np.clip(np.floor(fj).astype(int), 0, mesh.n + 2 * h - 2)
    wi = np.clip(fi - i0, 0.0, 1.0)
    wj = np.clip(fj - j0, 0.0, 1.0)

    def gather(di, dj):
        return ext[p0, i0 + di, j0 + dj]

    expand = (...,) + (None,) * (ext.ndim - 3)
    wi = wi[expand]
    wj = wj[expand]
    return ((1 - wi) * (1 - wj) * gather(0, 0)
            + wi * (1 - wj) * gather(1, 0)
            + (1 - wi) * wj * gather(0, 1)
            + wi * wj * gather(1, 1))
