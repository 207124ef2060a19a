"""Analytic wind fields as discretely divergence-free face fluxes.

A flux field assembled from edge circulations of a vector potential A
(u = curl A) satisfies the discrete divergence identity exactly: the
flux through every face is the signed sum of the circulations along its
four edges, so the sum over the faces of any cell telescopes to zero.
Edges are taken as straight chords between mesh vertices and the
circulations are evaluated with Gauss quadrature (exactly, for the
quadratic potential of solid-body rotation).
"""

import numpy as np

from .geometry import panel_to_cartesian


def _vertex_positions(mesh):
    """Physical coordinates of every mesh vertex: (6, n+1, n+1, m+1, 3)."""
    n, m = mesh.n, mesh.m
    XI, ETA = np.meshgrid(mesh.xi_nodes, mesh.xi_nodes, indexing='ij')
    out = np.empty((6, n + 1, n + 1, m + 1, 3))
    for p in range(6):
        unit = panel_to_cartesian(p + 1, XI, ETA, 1.0)
        out[p] = unit[:, :, None, :] * mesh.r_nodes[p][..., None]
    return out


def _chord_circulation(A_fn, x1, x2, order=5):
    """Integral of A . dl along straight segments from x1 to x2."""
    g, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (g + 1.0)
    w = 0.5 * w
    d = x2 - x1
    total = np.zeros(x1.shape[:-1])
    for si, wi in zip(s, w):
        total += wi * np.einsum('...a,...a->...',
                                A_fn(x1 + si * d), d)
    return total


def circulation_flux(mesh, A_fn, order=5, constrain_boundary=False):
    """W2 flux dofs of u = curl A from edge circulations of A.

    The resulting field has exactly zero discrete divergence in every
    cell (up to rounding on panel edges).  With constrain_boundary the
    top and bottom fluxes are forced to zero for use with the rigid-lid
    solver; this perturbs the divergence of the boundary cells by the
    (small) flux the potential carries through those faces.
    """
    V = _vertex_positions(mesh)
    n, m = mesh.n, mesh.m

    # edge circulations: along eta, along xi and along r
    E_eta = _chord_circulation(A_fn, V[:, :, :-1, :], V[:, :, 1:, :], order)
    E_xi = _chord_circulation(A_fn, V[:, :-1, :, :], V[:, 1:, :, :], order)
    E_r = _chord_circulation(A_fn, V[..., :-1, :], V[..., 1:, :], order)

    # xi-face (i, j, k): boundary loop in the (eta, r) parameter plane
    uxi = (E_eta[:, :, :, :-1] + E_r[:, :, 1:, :]
           - E_eta[:, :, :, 1:] - E_r[:, :, :-1, :])
    # eta-face (i, j, k): boundary loop in the (r, xi) parameter plane
    ueta = (E_r[:, :-1, :, :] + E_xi[:, :, :, 1:]
            - E_r[:, 1:, :, :] - E_xi[:, :, :, :-1])
    # radial face (i, j, k): boundary loop in the (xi, eta) plane
    uv = (E_xi[:, :, :-1, :] + E_eta[:, 1:, :, :]
          - E_xi[:, :, 1:, :] - E_eta[:, :-1, :, :])

    out = np.zeros(mesh.n_w2)
    k = np.arange(m)
    out[mesh.xi_fid[..., None] * m + k] = \
        uxi * mesh.xi_fsign[..., None]
    out[mesh.eta_fid[..., None] * m + k] = \
        ueta * mesh.eta_fsign[..., None]
    rdofs = mesh.n_side_faces * m + mesh.col_pij[..., None] * (m + 1) \
        + np.arange(m + 1)
    out[rdofs] = uv
    if constrain_boundary:
        out[~mesh.w2_free] = 0.0
    return out


def solid_body_potential(axis, rate, r0=6371229.0):
    """Vector potential of u = rate * axis x X (rigid rotation).

    The gauge offset r0 keeps the potential small near the shell so the
    large cancellations in the face circulations stay well conditioned.
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)

    def A_fn(x):
        r2 = np.einsum('...a,...a->...', x, x)
        return -0.5 * rate * (r2 - r0 * r0)[..., None] * axis

    return A_fn


def solid_body_flux(mesh, axis, speed):
    """Flux dofs of rigid rotation with equatorial speed `speed` at r=a."""
    rate = speed / mesh.a
    return circulation_flux(mesh, solid_body_potential(axis, rate), order=3)


def deformational_flux(mesh, amplitude=1.0):
    """A smooth, non-symmetric, exactly divergence-free test wind."""
    a1 = solid_body_potential([0.3, -0.7, 0.648], amplitude / mesh.a)

    def A_fn(x):
        r = np.linalg.norm(x, axis=-1)
        xh = x / r[..., None]
        # superpose a wavy potential aligned with a second axis
        wig = np.sin(2.0 * xh[..., 0] + 1.0) * np.cos(3.0 * xh[..., 2])
        extra = 0.4 * amplitude / mesh.a * (r ** 2 * wig)[..., None] \
            * np.array([0.2, 0.5, -0.8])
        return a1(x) + extra

    return circulation_flux(mesh, A_fn, order=5)


def columnar_flux(mesh, psi_fn, layer_weights=None):
    """Layer-independent horizontal flux from a vertex streamfunction.

    psi_fn maps unit vectors (..., 3) to a scalar; the flux through a
    side face is the streamfunction difference between its two vertex
    columns, so the discrete divergence vanishes identically and the
    radial fluxes are exactly zero.
    """
    n, m = mesh.n, mesh.m
    XI, ETA = np.meshgrid(mesh.xi_nodes, mesh.xi_nodes, indexing='ij')
    psi = np.empty((6, n + 1, n + 1))
    for p in range(6):
        psi[p] = psi_fn(panel_to_cartesian(p + 1, XI, ETA, 1.0))
    if layer_weights is None:
        layer_weights = np.ones(m)
    w = np.asarray(layer_weights, dtype=float)

    uxi = (psi[:, :, 1:] - psi[:, :, :-1])[..., None] * w
    ueta = -(psi[:, 1:, :] - psi[:, :-1, :])[..., None] * w

    out = np.zeros(mesh.n_w2)
    k = np.arange(m)
    out[mesh.xi_fid[..., None] * m + k] = uxi * mesh.xi_fsign[..., None]
    out[mesh.eta_fid[..., None] * m + k] = ueta * mesh.eta_fsign[..., None]
    return out


def columnar_rotation_flux(mesh, axis, speed):
    """Columnar analogue of rigid rotation (no radial flux at all)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    # streamfunction of rigid rotation, scaled to a volume flux per layer
    dz = np.diff(mesh.vertical.epsilon()) * mesh.z_top

    def psi(xhat):
        return -speed * mesh.a * (xhat @ axis)

    return columnar_flux(mesh, psi, layer_weights=dz)
