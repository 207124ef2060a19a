"""Equiangular cubed-sphere panel geometry.

Each of the six panels carries angular coordinates (xi, eta) in
[-pi/4, pi/4].  A point with radial distance r maps to geocentric
Cartesian coordinates through

    X = r * R_p @ (1, tan xi, tan eta) / rho,   rho = sqrt(1 + t_xi^2 + t_eta^2),

where R_p is the fixed rotation matrix of panel p.  Panels are indexed
1..6 in the public API.
"""

import numpy as np

# Rotation matrix per panel (panels 1..6 stored at indices 0..5).
ROTATIONS = np.array([
    [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
    [[-1, 0, 0], [0, 0, 1], [0, 1, 0]],
    [[0, 0, -1], [-1, 0, 0], [0, 1, 0]],
    [[0, 0, -1], [0, 1, 0], [1, 0, 0]],
    [[0, -1, 0], [0, 0, 1], [-1, 0, 0]],
], dtype=float)


class PanelIndexError(ValueError):
    """Panel index outside 1..6."""


def panel_rotation(panel):
    """Rotation matrix R_p for panel in 1..6."""
    if not 1 <= panel <= 6:
        raise PanelIndexError(f"panel index must be in 1..6, got {panel}")
    return ROTATIONS[panel - 1].copy()


def panel_to_cartesian(panel, xi, eta, r):
    """Map panel coordinates (xi, eta, r) to geocentric Cartesian points.

    Broadcasts over array-valued xi, eta, r; returns an array with a
    trailing axis of length 3.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    r = np.asarray(r, dtype=float)
    t_xi = np.tan(xi)
    t_eta = np.tan(eta)
    rho = np.sqrt(1.0 + t_xi ** 2 + t_eta ** 2)
    local = np.stack([np.ones_like(t_xi), t_xi, t_eta], axis=-1) / rho[..., None]
    R = panel_rotation(panel)
    return (r[..., None] * local) @ R.T


def panel_basis(panel, xi, eta, r):
    """Columns (e_xi, e_eta, e_r) of d(chi)/d(xi) at panel points.

    Returns an array of shape (..., 3, 3); the columns are the tangent
    vectors with respect to xi, eta and r.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    r = np.asarray(r, dtype=float)
    t_xi = np.tan(xi)
    t_eta = np.tan(eta)
    rho = np.sqrt(1.0 + t_xi ** 2 + t_eta ** 2)

    f = r / rho ** 3
    e_xi = np.stack([
        -f * (1 + t_xi ** 2) * t_xi,
        f * (1 + t_xi ** 2) * (1 + t_eta ** 2),
        -f * (1 + t_xi ** 2) * t_xi * t_eta,
    ], axis=-1)
    e_eta = np.stack([
        -f * (1 + t_eta ** 2) * t_eta,
        -f * (1 + t_eta ** 2) * t_xi * t_eta,
        f * (1 + t_eta ** 2) * (1 + t_xi ** 2),
    ], axis=-1)
    e_r = np.stack([
        np.ones_like(t_xi) / rho,
        t_xi / rho,
        t_eta / rho,
    ], axis=-1)

    M = np.stack([e_xi, e_eta, e_r], axis=-1)
    R = panel_rotation(panel)
    return np.einsum('ab,...bc->...ac', R, M)


def cartesian_to_panel(points):
    """Invert the panel map: points (..., 3) -> (panel, xi, eta, r).

    Each point is assigned to the panel whose local first axis has the
    largest positive projection; points on edges go to the lower panel
    index consistently.
    """
    pts = np.asarray(points, dtype=float)
    r = np.linalg.norm(pts, axis=-1)
    # local first component per panel: (R_p^T x)[0]
    proj = np.einsum('pa,...a->...p', ROTATIONS[:, :, 0], pts)
    panel0 = np.argmax(proj, axis=-1)
    Rsel = ROTATIONS[panel0]
    local = np.einsum('...ba,...b->...a', Rsel, pts)
    xi = np.arctan2(local[..., 1], local[..., 0])
    eta = np.arctan2(local[..., 2], local[..., 0])
    return panel0 + 1, xi, eta, r


def lonlat_to_cartesian(lon, lat, r=1.0):
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    return np.stack([
        r * np.cos(lat) * np.cos(lon),
        r * np.cos(lat) * np.sin(lon),
        r * np.sin(lat) * np.ones_like(lon),
    ], axis=-1)


def cartesian_to_lonlat(points):
    pts = np.asarray(points, dtype=float)
    lon = np.arctan2(pts[..., 1], pts[..., 0])
    hyp = np.hypot(pts[..., 0], pts[..., 1])
    lat = np.arctan2(pts[..., 2], hyp)
    return lon, lat


def great_circle_distance(lon1, lat1, lon2, lat2):
    """Central angle between two lon/lat points, in radians."""
    s = (np.sin(lat1) * np.sin(lat2)
         + np.cos(lat1) * np.cos(lat2) * np.cos(np.asarray(lon2) - lon1))
    return np.arccos(np.clip(s, -1.0, 1.0))


def average_grid_spacing(n, a):
    """Square root of the average cell area of a Cn cubed-sphere mesh [m]."""
    return np.sqrt(4.0 * np.pi * a ** 2 / (6.0 * n ** 2))
