"""Extruded equiangular cubed-sphere mesh.

Topology, vertical extrusion with orography, the vertex-based coordinate
field (xi, eta, r) and the factorised Jacobian

    J = (dchi/dxi) (dxi/dchihat)

evaluated from the trilinear interpolant of the per-cell vertex
coordinates.  Horizontal cells are indexed (panel, i, j) with i along xi
and j along eta; the 3-d cell index adds the layer k (0 at the bottom).

Degree-of-freedom numbering conventions used throughout the package:

* W3 (one value per cell):      dof = column * m + k
* Wtheta (one per level/column): dof = column * (m + 1) + k
* W2 side faces (xi/eta normal): dof = face_id * m + k, for
  face_id in [0, n_side_faces); followed by
* W2 radial faces:               dof = n_side_faces * m + column * (m+1) + k

where column = (panel * n + j) * n + i.  Every W2 dof stores the volume
flux through its face along a fixed global orientation; per-cell sign
tables convert to panel-local orientation.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import (ROTATIONS, panel_basis, panel_to_cartesian,
                       cartesian_to_panel, cartesian_to_lonlat)


class InvalidResolutionError(ValueError):
    """Fewer than 3 cells per panel edge."""


class DegenerateColumnError(ValueError):
    """Surface height reaches or exceeds the model top."""


class InvertedCellError(RuntimeError):
    """Non-positive Jacobian determinant."""


SIDES = ('W', 'E', 'S', 'N')

# 2-point Gauss-Legendre rule on [0, 1], tensorised below.
_GL2 = (0.5 * (1.0 - 1.0 / np.sqrt(3.0)), 0.5 * (1.0 + 1.0 / np.sqrt(3.0)))


def quadrature_points_3d():
    """Tensor-product 2x2x2 Gauss points and weights on the unit cube."""
    g = np.array(_GL2)
    pts = np.array([[x, y, z] for x in g for y in g for z in g])
    wts = np.full(8, 1.0 / 8.0)
    return pts, wts


def quadrature_points_2d():
    g = np.array(_GL2)
    pts = np.array([[x, y] for x in g for y in g])
    wts = np.full(4, 1.0 / 4.0)
    return pts, wts


@dataclass(frozen=True)
class VerticalMeshSpec:
    """Vertical level distribution: uniform or quadratically stretched."""
    kind: str = "uniform"
    z_top: float = 12000.0
    gamma: float = 15.0
    layers: int = 10

    def __post_init__(self):
        if self.kind not in ("uniform", "quadratic"):
            raise ValueError(f"unknown vertical mesh kind {self.kind!r}")
        if self.z_top <= 0.0:
            raise ValueError("model top must be positive")
        if self.kind == "quadratic" and self.gamma <= 0.0:
            raise ValueError("stretching parameter must be positive")

    def epsilon(self):
        """Non-dimensional level positions eps_k, k = 0..layers."""
        s = np.arange(self.layers + 1) / self.layers
        if self.kind == "uniform":
            return s
        g = self.gamma
        return (np.sqrt(g * s ** 2 + 1.0) - 1.0) / (np.sqrt(g + 1.0) - 1.0)


def build_vertical_levels(spec, z_B):
    """Level heights z_k = z_T eps_k + z_B (1 - eps_k) above the sphere.

    z_B broadcasts over columns; raises DegenerateColumnError if any
    surface height reaches the model top.
    """
    z_B = np.asarray(z_B, dtype=float)
    if np.any(z_B >= spec.z_top):
        raise DegenerateColumnError("surface height >= model top")
    if np.any(z_B < 0.0):
        raise ValueError("surface height must be non-negative")
    eps = spec.epsilon()
    return spec.z_top * eps + z_B[..., None] * (1.0 - eps)


def _containing_panels(x, tol=1.0e-12):
    """All panels (1..6) whose closed coordinate patch contains unit vector x."""
    out = []
    for p in range(6):
        y = ROTATIONS[p].T @ x
        if y[0] > 0 and abs(y[1]) <= y[0] * (1 + tol) + tol \
                and abs(y[2]) <= y[0] * (1 + tol) + tol:
            out.append(p + 1)
    return out


def _edge_point(p, side, t):
    q = np.pi / 4
    if side == 'W':
        xi, eta = -q, t
    elif side == 'E':
        xi, eta = q, t
    elif side == 'S':
        xi, eta = t, -q
    else:
        xi, eta = t, q
    return panel_to_cartesian(p, xi, eta, 1.0)


def _edge_axis(p, side, t):
    """Unit vector of the panel axis transverse to the given side at t."""
    q = np.pi / 4
    if side in ('W', 'E'):
        xi, eta, col = (-q if side == 'W' else q), t, 0
    else:
        xi, eta, col = t, (-q if side == 'S' else q), 1
    B = panel_basis(p, xi, eta, 1.0)
    v = B[:, col]
    return v / np.linalg.norm(v)


def _discover_edge_links():
    """Connectivity of the 12 panel edges.

    Returns a dict (panel, side) -> (panel2, side2, flip, sign) where
    flip says whether the along-edge index reverses and sign relates the
    transverse coordinate axes of the two panels at the shared faces.
    """
    links = {}
    t0 = 0.1918375  # generic along-edge angle, avoids symmetry points
    for p in range(1, 7):
        for side in SIDES:
            x = _edge_point(p, side, t0)
            cands = [q for q in _containing_panels(x) if q != p]
            assert len(cands) == 1, (p, side, cands)
            p2 = cands[0]
            y = ROTATIONS[p2 - 1].T @ x
            xi2 = np.arctan2(y[1], y[0])
            eta2 = np.arctan2(y[2], y[0])
            q = np.pi / 4
            tol = 1.0e-10
            if abs(xi2 + q) < tol:
                side2, beta = 'W', eta2
            elif abs(xi2 - q) < tol:
                side2, beta = 'E', eta2
            elif abs(eta2 + q) < tol:
                side2, beta = 'S', xi2
            else:
                assert abs(eta2 - q) < tol
                side2, beta = 'N', xi2
            if abs(beta - t0) < tol:
                flip = False
            else:
                assert abs(beta + t0) < tol
                flip = True
            a1 = _edge_axis(p, side, t0)
            a2 = _edge_axis(p2, side2, beta)
            d = float(a1 @ a2)
            assert abs(d) > 0.5
            links[(p, side)] = (p2, side2, flip, 1 if d > 0 else -1)
    # consistency: links must be mutual
    for (p, side), (p2, side2, flip, sgn) in links.items():
        back = links[(p2, side2)]
        assert back[0] == p and back[1] == side and back[2] == flip
        assert back[3] == sgn
    return links


def _ghost_cell(links, n, p, side, depth, k):
    """(panel, i, j) of the cell `depth` rows beyond `side` at along-index k."""
    p2, side2, flip, _ = links[(p, side)]
    k2 = n - 1 - k if flip else k
    if side2 == 'W':
        return p2, depth - 1, k2
    if side2 == 'E':
        return p2, n - depth, k2
    if side2 == 'S':
        return p2, k2, depth - 1
    return p2, k2, n - depth


class CubedSphereMesh:
    """Extruded equiangular cubed-sphere shell at resolution CnLm."""

    def __init__(self, n, vertical, a=6371229.0, orography=None):
        if n < 3:
            raise InvalidResolutionError(f"need n >= 3 cells per edge, got {n}")
        self.n = int(n)
        self.m = int(vertical.layers)
        self.a = float(a)
        self.vertical = vertical
        self.z_top = vertical.z_top
        self.dxi = np.pi / (2 * n)

        self.xi_nodes = -np.pi / 4 + np.arange(n + 1) * self.dxi
        self.xi_centres = -np.pi / 4 + (np.arange(n) + 0.5) * self.dxi

        # surface height at horizontal nodes (continuous across panels)
        XI, ETA = np.meshgrid(self.xi_nodes, self.xi_nodes, indexing='ij')
        self.z_B_nodes = np.zeros((6, n + 1, n + 1))
        if orography is not None:
            for p in range(6):
                pts = panel_to_cartesian(p + 1, XI, ETA, 1.0)
                lon, lat = cartesian_to_lonlat(pts)
                self.z_B_nodes[p] = orography(lon, lat)
        self.eps = vertical.epsilon()
        # r at every vertex of the extruded mesh: (6, n+1, n+1, m+1)
        z = build_vertical_levels(vertical, self.z_B_nodes)
        self.r_nodes = self.a + z

        self.links = _discover_edge_links()
        self._build_face_maps()
        self._build_halo_maps(halo=2)
        self._build_cell_dof_tables()

        self._centre_cache = None
        self._volume_cache = None
        self._quad_cache = None

    # ------------------------------------------------------------------
    # index helpers
    # ------------------------------------------------------------------

    @property
    def n_columns(self):
        return 6 * self.n * self.n

    @property
    def n_cells(self):
        return self.n_columns * self.m

    @property
    def n_w3(self):
        return self.n_cells

    @property
    def n_wtheta(self):
        return self.n_columns * (self.m + 1)

    @property
    def n_w2(self):
        return self.n_side_faces * self.m + self.n_columns * (self.m + 1)

    def column_index(self, p, i, j):
        """Flat column index of cell (panel 0..5, i, j)."""
        return (p * self.n + j) * self.n + i

    def rdof(self, col, k):
        return self.n_side_faces * self.m + col * (self.m + 1) + k

    # ------------------------------------------------------------------
    # topology construction
    # ------------------------------------------------------------------

    def _build_face_maps(self):
        n = self.n
        self.xi_fid = np.full((6, n + 1, n), -1, dtype=np.int64)
        self.xi_fsign = np.zeros((6, n + 1, n), dtype=np.int8)
        self.eta_fid = np.full((6, n, n + 1), -1, dtype=np.int64)
        self.eta_fsign = np.zeros((6, n, n + 1), dtype=np.int8)

        nid = 0
        # panel-interior faces
        for p in range(6):
            for i in range(1, n):
                self.xi_fid[p, i, :] = nid + np.arange(n)
                self.xi_fsign[p, i, :] = 1
                nid += n
            for j in range(1, n):
                self.eta_fid[p, :, j] = nid + np.arange(n)
                self.eta_fsign[p, :, j] = 1
                nid += n

        def boundary_slot(p, side, k):
            if side == 'W':
                return self.xi_fid, self.xi_fsign, (p - 1, 0, k)
            if side == 'E':
                return self.xi_fid, self.xi_fsign, (p - 1, n, k)
            if side == 'S':
                return self.eta_fid, self.eta_fsign, (p - 1, k, 0)
            return self.eta_fid, self.eta_fsign, (p - 1, k, n)

        seen = set()
        for p in range(1, 7):
            for side in SIDES:
                p2, side2, flip, sgn = self.links[(p, side)]
                key = frozenset([(p, side), (p2, side2)])
                if key in seen:
                    continue
                seen.add(key)
                ids = nid + np.arange(n)
                nid += n
                for k in range(n):
                    f, s, loc = boundary_slot(p, side, k)
                    f[loc] = ids[k]
                    s[loc] = 1
                for k in range(n):
                    k2 = n - 1 - k if flip else k
                    f, s, loc = boundary_slot(p2, side2, k2)
                    f[loc] = ids[k]
                    s[loc] = sgn
        assert len(seen) == 12
        assert nid == 12 * n * n
        self.n_side_faces = nid
        assert np.all(self.xi_fid >= 0) and np.all(self.eta_fid >= 0)

    def _build_halo_maps(self, halo):
        """Extended-index maps for scalar halo exchange of width `halo`."""
        n = self.n
        h = self.halo = halo
        ext_p = np.full((6, n + 2 * h, n + 2 * h), -1, dtype=np.int64)
        ext_i = np.full_like(ext_p, 0)
        ext_j = np.full_like(ext_p, 0)
        ext_p[:, h:h + n, h:h + n] = np.arange(6)[:, None, None]
        ext_i[:, h:h + n, h:h + n] = np.broadcast_to(
            np.arange(n)[None, :, None], (6, n, n))
        ext_j[:, h:h + n, h:h + n] = np.broadcast_to(
            np.arange(n)[None, None, :], (6, n, n))

        for p in range(1, 7):
            for side in SIDES:
                for depth in range(1, h + 1):
                    for k in range(n):
                        p2, i2, j2 = _ghost_cell(self.links, n, p, side,
                                                 depth, k)
                        if side == 'W':
                            ii, jj = -depth, k
                        elif side == 'E':
                            ii, jj = n - 1 + depth, k
                        elif side == 'S':
                            ii, jj = k, -depth
                        else:
                            ii, jj = k, n - 1 + depth
                        ext_p[p - 1, ii + h, jj + h] = p2 - 1
                        ext_i[p - 1, ii + h, jj + h] = i2
                        ext_j[p - 1, ii + h, jj + h] = j2
        self.ext_p, self.ext_i, self.ext_j = ext_p, ext_i, ext_j
        self.ext_valid = ext_p >= 0

        # corner ghost slots have no cell across the edge (three panels
        # meet there); their nominal extended angles do point into the
        # diagonally adjacent panel, so resolve each slot to the cell
        # containing that direction.  Reconstruction stencils built on
        # these filled maps are never gapped.
        fp, fi, fj = ext_p.copy(), ext_i.copy(), ext_j.copy()
        ang = self.xi_centres[0] + (np.arange(n + 2 * h) - h) * self.dxi
        for p0, qi, qj in np.argwhere(ext_p < 0):
            d = panel_to_cartesian(p0 + 1, ang[qi], ang[qj], 1.0)
            p2, xi2, eta2, _ = cartesian_to_panel(d)
            fp[p0, qi, qj] = p2 - 1
            fi[p0, qi, qj] = int(np.clip((xi2 + np.pi / 4) // self.dxi,
                                         0, n - 1))
            fj[p0, qi, qj] = int(np.clip((eta2 + np.pi / 4) // self.dxi,
                                         0, n - 1))
        self.ext_fill_p, self.ext_fill_i, self.ext_fill_j = fp, fi, fj

    def extend_scalar(self, s, fill_corners=False):
        """Halo-extend a (6, n, n, ...) per-column array to (6, n+2h, n+2h, ...).

        Invalid corner ghosts are filled with zeros (use `ext_valid` to
        mask them) unless fill_corners is set, in which case they take
        the value of the nearest cell on the diagonal panel.
        """
        if fill_corners:
            return s[self.ext_fill_p, self.ext_fill_i, self.ext_fill_j]
        p = np.where(self.ext_p < 0, 0, self.ext_p)
        out = s[p, self.ext_i, self.ext_j]
        out[~self.ext_valid] = 0.0
        return out

    def neighbor_column(self, p, i, j):
        """Column (panel0, i, j) with one index possibly out of range.

        Returns None for corner ghosts.  Panel index is 0-based here.
        """
        n = self.n
        h = self.halo
        if not (-h <= i < n + h and -h <= j < n + h):
            raise IndexError("index beyond halo width")
        pp = self.ext_p[p, i + h, j + h]
        if pp < 0:
            return None
        return pp, self.ext_i[p, i + h, j + h], self.ext_j[p, i + h, j + h]

    def _build_cell_dof_tables(self):
        """Per-cell W2 dof indices and signs for the 6 local faces.

        Local face order: W, E, S, N, D, U.  Sign converts the global
        dof (flux along the global face orientation) to the panel-local
        coefficient along +xi, +eta or +r.
        """
        n, m = self.n, self.m
        cols = np.arange(self.n_columns).reshape(6, n, n)  # [p, j, i] order!
        # column_index(p,i,j) = (p n + j) n + i  -> reshape is [p, j, i]
        col_pij = cols.transpose(0, 2, 1)  # [p, i, j]
        self.col_pij = col_pij

        k = np.arange(m)
        side = lambda fid: fid[..., None] * m + k  # noqa: E731

        self.dof_W = side(self.xi_fid[:, :-1, :])[:, :, :, :]
        self.sgn_W = self.xi_fsign[:, :-1, :, None].astype(float)
        self.dof_E = side(self.xi_fid[:, 1:, :])
        self.sgn_E = self.xi_fsign[:, 1:, :, None].astype(float)
        self.dof_S = side(self.eta_fid[:, :, :-1])
        self.sgn_S = self.eta_fsign[:, :, :-1, None].astype(float)
        self.dof_N = side(self.eta_fid[:, :, 1:])
        self.sgn_N = self.eta_fsign[:, :, 1:, None].astype(float)

        base = self.n_side_faces * m
        self.dof_D = base + col_pij[..., None] * (m + 1) + k
        self.dof_U = base + col_pij[..., None] * (m + 1) + (k + 1)
        one = np.ones(self.dof_D.shape)
        self.sgn_D = one
        self.sgn_U = one

        self.cell_dofs = np.stack(
            [self.dof_W, self.dof_E, self.dof_S, self.dof_N,
             self.dof_D, self.dof_U], axis=-1)
        self.cell_signs = np.stack(
            [np.broadcast_to(self.sgn_W, self.dof_W.shape),
             np.broadcast_to(self.sgn_E, self.dof_E.shape),
             np.broadcast_to(self.sgn_S, self.dof_S.shape),
             np.broadcast_to(self.sgn_N, self.dof_N.shape),
             self.sgn_D, self.sgn_U], axis=-1)

        # outward orientation of the local faces in the divergence
        self.face_orient = np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0])

        # mask of unconstrained W2 dofs (top/bottom radial faces are fixed)
        free = np.ones(self.n_w2, dtype=bool)
        colf = np.arange(self.n_columns)
        free[self.rdof(colf, 0)] = False
        free[self.rdof(colf, m)] = False
        self.w2_free = free

    # ------------------------------------------------------------------
    # geometry / Jacobians
    # ------------------------------------------------------------------

    def cell_vertex_r(self):
        """Vertex radii per cell: (6, n, n, m, 2, 2, 2) for (di, dj, dk)."""
        rn = self.r_nodes
        n, m = self.n, self.m
        out = np.empty((6, n, n, m, 2, 2, 2))
        for di in range(2):
            for dj in range(2):
                for dk in range(2):
                    out[..., di, dj, dk] = rn[:, di:di + n, dj:dj + n,
                                              dk:dk + m].transpose(0, 1, 2, 3)
        return out

    def jacobians_at(self, points):
        """Factorised Jacobian at reference points for every cell.

        points: (npts, 3) in the unit cube.  Returns (J, detJ, xi, eta, r)
        with J of shape (6, n, n, m, npts, 3, 3).
        """
        pts = np.asarray(points, dtype=float)
        n, m = self.n, self.m
        npts = pts.shape[0]
        rv = self.cell_vertex_r()

        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        # trilinear weights and derivatives for r
        wx = np.stack([1 - x, x])
        wy = np.stack([1 - y, y])
        wz = np.stack([1 - z, z])
        dwx = np.array([-np.ones(npts), np.ones(npts)])
        w3 = np.einsum('aq,bq,cq->qabc', wx, wy, wz)
        dx3 = np.einsum('aq,bq,cq->qabc', dwx, wy, wz)
        dy3 = np.einsum('aq,bq,cq->qabc', wx, dwx, wz)
        dz3 = np.einsum('aq,bq,cq->qabc', wx, wy, dwx)

        r = np.einsum('...abc,qabc->...q', rv, w3)
        dr = np.stack([np.einsum('...abc,qabc->...q', rv, d)
                       for d in (dx3, dy3, dz3)], axis=-1)  # (...,q,3)

        xi = (self.xi_nodes[:n][None, :, None, None, None]
              + x[None, None, None, None, :] * self.dxi)
        xi = np.broadcast_to(xi, (6, n, n, m, npts))
        eta = (self.xi_nodes[:n][None, None, :, None, None]
               + y[None, None, None, None, :] * self.dxi)
        eta = np.broadcast_to(eta, (6, n, n, m, npts))

        # dxi/dchihat: rows (xi, eta, r), lower triangular
        A = np.zeros((6, n, n, m, npts, 3, 3))
        A[..., 0, 0] = self.dxi
        A[..., 1, 1] = self.dxi
        A[..., 2, :] = dr

        # dchi/dxi from the analytic panel basis
        B = np.empty((6, n, n, m, npts, 3, 3))
        for p in range(6):
            B[p] = panel_basis(p + 1, xi[p], eta[p], r[p])

        J = B @ A
        detB = np.linalg.det(B)
        detJ = detB * (self.dxi * self.dxi * dr[..., 2])
        if np.any(detJ <= 0):
            bad = np.argwhere(detJ <= 0)[0]
            raise InvertedCellError(f"non-positive detJ at cell {bad[:4]}")
        return J, detJ, xi, eta, r

    def cell_jacobian(self, p, i, j, k, chihat):
        """(J, detJ) for a single cell at reference points (npts, 3)."""
        J, detJ, _, _, _ = self._single_cell_jacobian(p, i, j, k,
                                                      np.atleast_2d(chihat))
        return J, detJ

    def _single_cell_jacobian(self, p, i, j, k, pts):
        rv = self.cell_vertex_r()[p, i, j, k]
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        w = lambda t: np.stack([1 - t, t])  # noqa: E731
        wx, wy, wz = w(x), w(y), w(z)
        dw = np.array([-np.ones(len(x)), np.ones(len(x))])
        r = np.einsum('abc,aq,bq,cq->q', rv, wx, wy, wz)
        drx = np.einsum('abc,aq,bq,cq->q', rv, dw, wy, wz)
        dry = np.einsum('abc,aq,bq,cq->q', rv, wx, dw, wz)
        drz = np.einsum('abc,aq,bq,cq->q', rv, wx, wy, dw)
        xi = self.xi_nodes[i] + x * self.dxi
        eta = self.xi_nodes[j] + y * self.dxi
        A = np.zeros((len(x), 3, 3))
        A[:, 0, 0] = self.dxi
        A[:, 1, 1] = self.dxi
        A[:, 2, 0] = drx
        A[:, 2, 1] = dry
        A[:, 2, 2] = drz
        B = panel_basis(p + 1, xi, eta, r)
        J = B @ A
        detJ = np.linalg.det(B) * self.dxi ** 2 * drz
        if np.any(detJ <= 0):
            raise InvertedCellError(f"non-positive detJ in cell {(p, i, j, k)}")
        return J, detJ, xi, eta, r

    def reference_map(self, p, i, j, k, pts):
        """Physical Cartesian coordinates of reference points of one cell."""
        pts = np.atleast_2d(pts)
        _, _, xi, eta, r = self._single_cell_jacobian(p, i, j, k, pts)
        return panel_to_cartesian(p + 1, xi, eta, r)

    def quad_data(self):
        """Cached (J, detJ, weights) at the 2x2x2 quadrature points."""
        if self._quad_cache is None:
            pts, wts = quadrature_points_3d()
            J, detJ, _, _, _ = self.jacobians_at(pts)
            self._quad_cache = (J, detJ, wts)
        return self._quad_cache

    def volumes(self):
        """Quadrature cell volumes (6, n, n, m); also the FV measure."""
        if self._volume_cache is None:
            _, detJ, wts = self.quad_data()
            self._volume_cache = np.einsum('...q,q->...', detJ, wts)
        return self._volume_cache

    def centre_data(self):
        """J, detJ and coordinates at cell centres."""
        if self._centre_cache is None:
            c = np.array([[0.5, 0.5, 0.5]])
            J, detJ, xi, eta, r = self.jacobians_at(c)
            self._centre_cache = (J[..., 0, :, :], detJ[..., 0],
                                  xi[..., 0], eta[..., 0], r[..., 0])
        return self._centre_cache

    def column_centre_xyz(self):
        """Unit-sphere position of each column centre: (6, n, n, 3)."""
        out = np.empty((6, self.n, self.n, 3))
        XI, ETA = np.meshgrid(self.xi_centres, self.xi_centres, indexing='ij')
        for p in range(6):
            out[p] = panel_to_cartesian(p + 1, XI, ETA, 1.0)
        return out

    def total_volume(self):
        return float(self.volumes().sum())

    def summary(self):
        """Plain-text mesh summary."""
        _, detJ, _ = self.quad_data()
        lines = [
            f"cubed-sphere mesh C{self.n}L{self.m}",
            f"n = {self.n}  layers = {self.m}  radius = {self.a:.1f} m",
            f"columns = {self.n_columns}  cells = {self.n_cells}",
            f"cells per panel = {self.n * self.n * self.m}",
            f"min detJ = {detJ.min():.6e}  max detJ = {detJ.max():.6e}",
            f"total volume = {self.total_volume():.8e} m^3",
        ]
        return "\n".join(lines)
