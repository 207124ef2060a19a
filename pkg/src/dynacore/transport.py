"""Finite-volume transport on the cubed-sphere columns.

Scalars are advected with a directionally split scheme: a half step in
the vertical, a full horizontal step, and a second vertical half step.
Within each direction an explicit Runge-Kutta scheme advances the field
in advective form, while face fluxes evaluated at the stage values are
accumulated so that flux-form variables receive a single conservative
divergence update at the end.

Face values come from upwind-biased polynomial reconstructions: a
degree-2 polynomial fitted by least squares over the 5x5 neighbourhood
of the upwind cell in the horizontal (on a tangent plane through the
face point), and a quadratic through three cell values in the vertical.
Reconstructions on panel-edge faces are computed once per face and
copied to both adjacent panels, which keeps cross-panel fluxes exactly
antisymmetric.
"""

from dataclasses import dataclass, field

import numpy as np

from .mesh import SIDES


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit Runge-Kutta coefficients; default is three-stage SSP."""
    a: tuple = ((), (1.0,), (0.25, 0.25))
    b: tuple = (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0)

    @property
    def stages(self):
        return len(self.b)


@dataclass
class TransportConfig:
    max_courant_horizontal: float = 1.0
    max_courant_vertical: float = 1.0
    tableau: ButcherTableau = field(default_factory=ButcherTableau)


def lagrange_weights(xs, x):
    """Interpolation weights of points xs (..., npts) evaluated at x."""
    xs = np.asarray(xs, dtype=float)
    npts = xs.shape[-1]
    w = np.ones(xs.shape[:-1] + (npts,))
    for i in range(npts):
        for j in range(npts):
            if i == j:
                continue
            w[..., i] *= (x - xs[..., j]) / (xs[..., i] - xs[..., j])
    return w


class Transport:
    """Precomputed stencils and split advection steps for one mesh."""

    def __init__(self, mesh, config=None):
        self.mesh = mesh
        self.config = config or TransportConfig()
        self.volumes = mesh.volumes()
        n, m = mesh.n, mesh.m
        vt = np.empty((6, n, n, m + 1))
        vt[..., 1:-1] = 0.5 * (self.volumes[..., :-1] + self.volumes[..., 1:])
        vt[..., 0] = 0.5 * self.volumes[..., 0]
        vt[..., -1] = 0.5 * self.volumes[..., -1]
        self.theta_volumes = vt

        self._build_wind_maps()
        self._build_edge_table()
        self._build_horizontal_weights()
        self._build_vertical_weights()

    # ------------------------------------------------------------------
    # wind handling
    # ------------------------------------------------------------------

    def _build_wind_maps(self):
        mesh = self.mesh
        n, m = mesh.n, mesh.m
        k = np.arange(m)
        self._xi_dof = mesh.xi_fid[..., None] * m + k
        self._xi_sign = mesh.xi_fsign[..., None].astype(float)
        self._eta_dof = mesh.eta_fid[..., None] * m + k
        self._eta_sign = mesh.eta_fsign[..., None].astype(float)
        base = mesh.n_side_faces * m
        self._r_dof = base + mesh.col_pij[..., None] * (m + 1) \
            + np.arange(m + 1)

    def winds_from_w2(self, u):
        """Panel-local staggered flux arrays (uxi, ueta, uv) from W2 dofs."""
        uxi = u[self._xi_dof] * self._xi_sign
        ueta = u[self._eta_dof] * self._eta_sign
        uv = u[self._r_dof]
        return uxi, ueta, uv

    def winds_to_w2(self, winds):
        """Scatter staggered winds back to a W2 vector (inverse gather)."""
        uxi, ueta, uv = winds
        out = np.zeros(self.mesh.n_w2)
        out[self._xi_dof] = uxi * self._xi_sign
        out[self._eta_dof] = ueta * self._eta_sign
        out[self._r_dof] = uv
        return out

    def divergence(self, winds):
        """Cell-integrated flux divergence divided by the cell volume."""
        uxi, ueta, uv = winds
        num = (uxi[:, 1:, :, :] - uxi[:, :-1, :, :]
               + ueta[:, :, 1:, :] - ueta[:, :, :-1, :]
               + uv[..., 1:] - uv[..., :-1])
        return num / self.volumes

    def theta_level_winds(self, winds):
        """Horizontal winds averaged to the theta levels."""
        uxi, ueta, uv = winds
        n, m = self.mesh.n, self.mesh.m

        def avg(u):
            out = np.empty(u.shape[:-1] + (m + 1,))
            out[..., 1:-1] = 0.5 * (u[..., :-1] + u[..., 1:])
            out[..., 0] = u[..., 0]
            out[..., -1] = u[..., -1]
            return out

        return avg(uxi), avg(ueta)

    def substeps(self, winds, dt):
        """(horizontal, vertical) substep counts from the Courant numbers."""
        uxi, ueta, uv = winds
        ch = (0.5 * (abs(uxi[:, 1:]) + abs(uxi[:, :-1]))
              + 0.5 * (abs(ueta[:, :, 1:]) + abs(ueta[:, :, :-1])))
        cv = np.maximum(abs(uv[..., 1:]), abs(uv[..., :-1]))
        ch = float((ch * dt / self.volumes).max())
        cv = float((cv * dt / self.volumes).max())
        nh = max(1, int(np.ceil(ch / self.config.max_courant_horizontal)))
        nv = max(1, int(np.ceil(cv / self.config.max_courant_vertical)))
        return nh, nv

    # ------------------------------------------------------------------
    # stencil precomputation
    # ------------------------------------------------------------------

    def _build_edge_table(self):
        """One record per panel edge for face-value synchronisation."""
        mesh = self.mesh
        table = []
        seen = set()
        for p in range(1, 7):
            for side in SIDES:
                p2, side2, flip, sgn = mesh.links[(p, side)]
                key = frozenset([(p, side), (p2, side2)])
                if key in seen:
                    continue
                seen.add(key)
                table.append((p - 1, side, p2 - 1, side2, flip, sgn))
        self.edge_table = table

    def _build_horizontal_weights(self):
        """Least-squares reconstruction weights for every face and side.

        For each horizontal face and each upwind side, a degree-2
        polynomial in tangent-plane coordinates about the face point is
        fitted to the 25 cell values around the upwind cell; the stored
        weights evaluate the fit at the face point.  The weights do not
        depend on the layer.
        """
        mesh = self.mesh
        n = mesh.n
        h = mesh.halo
        xyz = mesh.column_centre_xyz()
        ext = np.zeros((6, n + 2 * h, n + 2 * h, 3))
        for c in range(3):
            ext[..., c] = mesh.extend_scalar(xyz[..., c], fill_corners=True)
        valid = np.ones(ext.shape[:3], dtype=bool)

        from .geometry import panel_to_cartesian
        xc, xn = mesh.xi_centres, mesh.xi_nodes

        def face_points(dir_xi):
            if dir_xi:
                XI, ETA = np.meshgrid(xn, xc, indexing='ij')
                pts = np.empty((6, n + 1, n, 3))
            else:
                XI, ETA = np.meshgrid(xc, xn, indexing='ij')
                pts = np.empty((6, n, n + 1, 3))
            for p in range(6):
                pts[p] = panel_to_cartesian(p + 1, XI, ETA, 1.0)
            return pts

        def weights_for(face_pts, end_a, end_b, up_i, up_j):
            """face_pts, end_a, end_b: (6, A, B, 3); upwind cell offsets.

            end_a/end_b are the face endpoints; in the gnomonic plane
            the face is the straight segment between them, which gives
            exact segment moments for the face-average evaluation.
            """
            A, B = face_pts.shape[1], face_pts.shape[2]
            npt = face_pts / np.linalg.norm(face_pts, axis=-1, keepdims=True)
            hi = ext.shape[1] - 1
            rng6 = np.arange(6)[:, None, None]

            def project(pos):
                dn = np.einsum('pabc,pabc->pab', pos, npt)
                dn = np.where(dn > 0.1, dn, 1.0)
                gn = pos / dn[..., None] - npt
                return gn / mesh.dxi

            # tangent-plane basis at each face point: e1 towards the
            # upwind cell so the face-tangential direction is e2
            pos_up = ext[rng6, np.clip(up_i + h, 0, hi),
                         np.clip(up_j + h, 0, hi)]
            dn = np.einsum('pabc,pabc->pab', pos_up, npt)
            e1 = pos_up / dn[..., None] - npt
            e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
            e2 = np.cross(npt, e1)

            X = np.zeros((6, A, B, 5, 5))
            Y = np.zeros((6, A, B, 5, 5))
            OK = np.zeros((6, A, B, 5, 5))
            for a in range(5):
                for b in range(5):
                    # clipping only affects the outermost faces, whose
                    # weights on that side are replaced by the edge sync
                    ii = np.clip(up_i + (a - 2) + h, 0, hi)
                    jj = np.clip(up_j + (b - 2) + h, 0, hi)
                    gn = project(ext[rng6, ii, jj])
                    X[..., a, b] = np.einsum('pabc,pabc->pab', gn, e1)
                    Y[..., a, b] = np.einsum('pabc,pabc->pab', gn, e2)
                    OK[..., a, b] = valid[rng6, ii, jj]

            # the dofs are cell means, so fit the cell averages of the
            # monomials; the second moments use parallelogram edge
            # vectors estimated from neighbouring stencil positions
            dXa = np.gradient(X, axis=-2)
            dXb = np.gradient(X, axis=-1)
            dYa = np.gradient(Y, axis=-2)
            dYb = np.gradient(Y, axis=-1)
            cxx = (dXa * dXa + dXb * dXb) / 12.0
            cxy = (dXa * dYa + dXb * dYb) / 12.0
            cyy = (dYa * dYa + dYb * dYb) / 12.0
            sh = (6, A, B, 25)
            X, Y, OK = X.reshape(sh), Y.reshape(sh), OK.reshape(sh)
            G = np.stack([np.ones(sh), X, Y,
                          X * X + cxx.reshape(sh),
                          X * Y + cxy.reshape(sh),
                          Y * Y + cyy.reshape(sh)], axis=-1)
            G = G * OK[..., None]

            # distance weighting centred on the upwind cell keeps the
            # fit upwind-biased and damped; wider weights (or the plain
            # unweighted fit) are linearly unstable on the sphere mesh
            d2 = (X - X[..., 12:13]) ** 2 + (Y - Y[..., 12:13]) ** 2
            V = OK * np.exp(-d2 / 0.8 ** 2)
            AtA = np.einsum('...ka,...k,...kb->...ab', G, V, G)

            # evaluation: average of the fit over the straight segment
            # between the projected face endpoints
            pa = project(end_a)
            pb = project(end_b)
            mx = 0.5 * (np.einsum('pabc,pabc->pab', pa + pb, e1))
            my = 0.5 * (np.einsum('pabc,pabc->pab', pa + pb, e2))
            dx = 0.5 * (np.einsum('pabc,pabc->pab', pb - pa, e1))
            dy = 0.5 * (np.einsum('pabc,pabc->pab', pb - pa, e2))
            e0 = np.stack([np.ones_like(mx), mx, my,
                           mx * mx + dx * dx / 3.0,
                           mx * my + dx * dy / 3.0,
                           my * my + dy * dy / 3.0], axis=-1)
            beta_row = np.linalg.solve(AtA, e0[..., None])[..., 0]
            w = np.einsum('...a,...ka->...k', beta_row, G) * V
            # the fit reproduces constants only to the round-off of the
            # normal-equation solve; renormalise so it does so exactly
            w /= w.sum(axis=-1, keepdims=True)
            return w.reshape(6, A, B, 5, 5)

        def node_points(XI, ETA):
            pts = np.empty((6,) + XI.shape + (3,))
            for p in range(6):
                pts[p] = panel_to_cartesian(p + 1, XI, ETA, 1.0)
            return pts

        XN, EN = np.meshgrid(xn, xn, indexing='ij')
        corners = node_points(XN, EN)                        # (6,n+1,n+1,3)

        fx = face_points(True)
        fi = np.arange(n + 1)[None, :, None]
        fj = np.arange(n)[None, None, :]
        ea, eb = corners[:, :, :-1], corners[:, :, 1:]
        self.Wxi_low = weights_for(fx, ea, eb, fi - 1, fj + 0 * fi)
        self.Wxi_high = weights_for(fx, ea, eb, fi, fj + 0 * fi)
        fe = face_points(False)
        fi = np.arange(n)[None, :, None]
        fj = np.arange(n + 1)[None, None, :]
        ea, eb = corners[:, :-1, :], corners[:, 1:, :]
        self.Weta_low = weights_for(fe, ea, eb, fi + 0 * fj, fj - 1)
        self.Weta_high = weights_for(fe, ea, eb, fi + 0 * fj, fj)

    def _build_vertical_weights(self):
        """Quadratic (or lower, near boundaries) reconstruction weights."""
        mesh = self.mesh
        n, m = mesh.n, mesh.m
        rv = mesh.cell_vertex_r()
        rc = rv.mean(axis=(-3, -2, -1))                       # (6,n,n,m)
        rn = mesh.r_nodes
        rf = 0.25 * (rn[:, :-1, :-1, :] + rn[:, 1:, :-1, :]
                     + rn[:, :-1, 1:, :] + rn[:, 1:, 1:, :])
        self.r_cell = rc
        self.r_face = rf

        npts = min(3, m)
        self._v_npts = npts
        # interior radial faces k = 1..m-1, two upwind variants
        starts_up = np.clip(np.arange(1, m) - 2, 0, m - npts)
        starts_dn = np.clip(np.arange(1, m) - 1, 0, m - npts)
        self._v_start_up = starts_up
        self._v_start_dn = starts_dn
        def mean_fit_weights(lo, hi, x0):
            """Weights of a polynomial fitted to cell means, at x0.

            lo, hi: (..., npts) cell edges; the fitted polynomial has
            the prescribed mean over every cell and is evaluated at x0.
            """
            scale = hi[..., -1] - lo[..., 0]
            a = (lo - x0[..., None]) / scale[..., None]
            b = (hi - x0[..., None]) / scale[..., None]
            cols = [np.ones_like(a), 0.5 * (a + b)]
            if a.shape[-1] > 2:
                cols.append((a * a + a * b + b * b) / 3.0)
            M = np.stack(cols, axis=-1)
            e = np.zeros(M.shape[:-2] + (M.shape[-1],))
            e[..., 0] = 1.0
            return np.linalg.solve(np.swapaxes(M, -1, -2), e[..., None])[..., 0]

        wu = np.empty((6, n, n, m - 1, npts))
        wd = np.empty((6, n, n, m - 1, npts))
        for idx, k in enumerate(range(1, m)):
            su, sd = starts_up[idx], starts_dn[idx]
            wu[..., idx, :] = mean_fit_weights(
                rf[..., su:su + npts], rf[..., su + 1:su + npts + 1],
                rf[..., k])
            wd[..., idx, :] = mean_fit_weights(
                rf[..., sd:sd + npts], rf[..., sd + 1:sd + npts + 1],
                rf[..., k])
        self._vw_up, self._vw_dn = wu, wd

        # theta reconstruction at the cell centres from level values
        nth = min(3, m + 1)
        self._t_npts = nth
        st_up = np.clip(np.arange(m) - 1, 0, m + 1 - nth)
        st_dn = np.clip(np.arange(m), 0, m + 1 - nth)
        self._t_start_up = st_up
        self._t_start_dn = st_dn
        tu = np.empty((6, n, n, m, nth))
        td = np.empty((6, n, n, m, nth))
        for k in range(m):
            su, sd = st_up[k], st_dn[k]
            tu[..., k, :] = lagrange_weights(rf[..., su:su + nth], rc[..., k])
            td[..., k, :] = lagrange_weights(rf[..., sd:sd + nth], rc[..., k])
        self._tw_up, self._tw_dn = tu, td

    # ------------------------------------------------------------------
    # face reconstructions
    # ------------------------------------------------------------------

    def horizontal_face_values(self, s, uxi, ueta):
        """Upwind face values on xi and eta faces for a layered scalar.

        s: (6, n, n, L); the wind arrays fix the upwind side and must be
        staggered compatibly: (6, n+1, n, L) and (6, n, n+1, L).
        Panel-edge faces are evaluated once and copied to both panels.
        """
        mesh = self.mesh
        n = mesh.n
        s_ext = mesh.extend_scalar(s, fill_corners=True)

        low_xi = np.zeros((6, n, n) + s.shape[3:])
        high_xi = np.zeros_like(low_xi)
        low_eta = np.zeros_like(low_xi)
        high_eta = np.zeros_like(low_xi)
        # accumulate deviations from the upwind cell value so constant
        # fields reconstruct exactly (the weights sum to one)
        for a in range(5):
            for b in range(5):
                blk = s_ext[:, a:a + n, b:b + n] - s
                low_xi += self.Wxi_low[:, 1:, :, a, b][..., None] * blk
                high_xi += self.Wxi_high[:, :-1, :, a, b][..., None] * blk
                low_eta += self.Weta_low[:, :, 1:, a, b][..., None] * blk
                high_eta += self.Weta_high[:, :, :-1, a, b][..., None] * blk
        low_xi += s
        high_xi += s
        low_eta += s
        high_eta += s
        # low_xi holds faces 1..n (value from cell i-1); high_xi faces 0..n-1

        fxi = np.zeros((6, n + 1, n) + s.shape[3:])
        feta = np.zeros((6, n, n + 1) + s.shape[3:])
        fxi[:, 1:-1] = np.where(uxi[:, 1:-1] >= 0,
                                low_xi[:, :-1], high_xi[:, 1:])
        feta[:, :, 1:-1] = np.where(ueta[:, :, 1:-1] >= 0,
                                    low_eta[:, :, :-1], high_eta[:, :, 1:])

        def inner_value(p, side):
            if side == 'W':
                return high_xi[p, 0]
            if side == 'E':
                return low_xi[p, -1]
            if side == 'S':
                return high_eta[p, :, 0]
            return low_eta[p, :, -1]

        def wind_slot(p, side):
            if side == 'W':
                return uxi[p, 0]
            if side == 'E':
                return uxi[p, n]
            if side == 'S':
                return ueta[p, :, 0]
            return ueta[p, :, n]

        def assign(p, side, val):
            if side == 'W':
                fxi[p, 0] = val
            elif side == 'E':
                fxi[p, n] = val
            elif side == 'S':
                feta[p, :, 0] = val
            else:
                feta[p, :, n] = val

        for (p, side, p2, side2, flip, sgn) in self.edge_table:
            A = inner_value(p, side)
            B = inner_value(p2, side2)
            if flip:
                B = B[::-1]
            U = wind_slot(p, side)
            if side in ('E', 'N'):
                val = np.where(U >= 0, A, B)
            else:
                val = np.where(U >= 0, B, A)
            assign(p, side, val)
            assign(p2, side2, val[::-1] if flip else val)
        return fxi, feta

    def vertical_face_values(self, s, uv):
        """Upwind values on the interior radial faces: (6, n, n, m+1).

        Boundary faces carry the adjacent cell value (their flux is zero
        through the rigid boundaries anyway).
        """
        m = self.mesh.m
        npts = self._v_npts
        out = np.empty(s.shape[:3] + (m + 1,))
        out[..., 0] = s[..., 0]
        out[..., m] = s[..., m - 1]
        for idx, k in enumerate(range(1, m)):
            su = self._v_start_up[idx]
            sd = self._v_start_dn[idx]
            vu = np.einsum('...p,...p->...', self._vw_up[..., idx, :],
                           s[..., su:su + npts])
            vd = np.einsum('...p,...p->...', self._vw_dn[..., idx, :],
                           s[..., sd:sd + npts])
            out[..., k] = np.where(uv[..., k] >= 0, vu, vd)
        return out

    def theta_centre_values(self, th, uv):
        """Level-based scalar reconstructed at cell centres: (6,n,n,m)."""
        m = self.mesh.m
        nth = self._t_npts
        wc = 0.5 * (uv[..., :-1] + uv[..., 1:])
        out = np.empty(th.shape[:3] + (m,))
        for k in range(m):
            su = self._t_start_up[k]
            sd = self._t_start_dn[k]
            vu = np.einsum('...p,...p->...', self._tw_up[..., k, :],
                           th[..., su:su + nth])
            vd = np.einsum('...p,...p->...', self._tw_dn[..., k, :],
                           th[..., sd:sd + nth])
            out[..., k] = np.where(wc[..., k] >= 0, vu, vd)
        return out

    # ------------------------------------------------------------------
    # directional tendencies and fluxes
    # ------------------------------------------------------------------

    def _tendency_h(self, s, uxi, ueta, vols):
        fxi, feta = self.horizontal_face_values(s, uxi, ueta)
        cx = 0.5 * (uxi[:, :-1] + uxi[:, 1:])
        ce = 0.5 * (ueta[:, :, :-1] + ueta[:, :, 1:])
        adv = (cx * (fxi[:, 1:] - fxi[:, :-1])
               + ce * (feta[:, :, 1:] - feta[:, :, :-1])) / vols
        return -adv, (fxi * uxi, feta * ueta)

    def _tendency_v(self, s, uv, vols):
        fv = self.vertical_face_values(s, uv)
        cv = 0.5 * (uv[..., :-1] + uv[..., 1:])
        adv = cv * (fv[..., 1:] - fv[..., :-1]) / vols
        return -adv, fv * uv

    def _tendency_theta_h(self, th, uxi_t, ueta_t):
        fxi, feta = self.horizontal_face_values(th, uxi_t, ueta_t)
        cx = 0.5 * (uxi_t[:, :-1] + uxi_t[:, 1:])
        ce = 0.5 * (ueta_t[:, :, :-1] + ueta_t[:, :, 1:])
        adv = (cx * (fxi[:, 1:] - fxi[:, :-1])
               + ce * (feta[:, :, 1:] - feta[:, :, :-1])) / self.theta_volumes
        return -adv

    def _tendency_theta_v(self, th, uv):
        m = self.mesh.m
        tc = self.theta_centre_values(th, uv)
        adv = np.zeros_like(th)
        adv[..., 1:m] = uv[..., 1:m] * (tc[..., 1:] - tc[..., :-1]) \
            / self.theta_volumes[..., 1:m]
        return -adv

    # ------------------------------------------------------------------
    # Runge-Kutta directional steps
    # ------------------------------------------------------------------

    def _rk_dir(self, s, tendency, dt, nsub, clip_fn=None,
                collect_flux=False):
        """Advance one direction with the configured explicit RK scheme.

        tendency(y) returns (dy/dt, fluxes); the advective state is
        advanced substep by substep while the stage fluxes accumulate
        with the RK weights (times dt) for a later conservative update.
        """
        tab = self.config.tableau
        h = dt / nsub
        flux_acc = None
        for _ in range(nsub):
            s0 = s
            ks = []
            fl = []
            for i in range(tab.stages):
                y = s0
                for j, aij in enumerate(tab.a[i]):
                    if aij != 0.0:
                        y = y + h * aij * ks[j]
                k, f = tendency(y)
                ks.append(k)
                if collect_flux:
                    fl.append(f)
            s = s0
            for i, bi in enumerate(tab.b):
                s = s + h * bi * ks[i]
            if clip_fn is not None:
                s = clip_fn(s, s0)
            if collect_flux:
                for i, bi in enumerate(tab.b):
                    if flux_acc is None:
                        flux_acc = [h * bi * np.asarray(f) for f in
                                    (fl[i] if isinstance(fl[i], tuple)
                                     else (fl[i],))]
                    else:
                        parts = (fl[i] if isinstance(fl[i], tuple)
                                 else (fl[i],))
                        for t, f in enumerate(parts):
                            flux_acc[t] = flux_acc[t] + h * bi * f
        return s, flux_acc

    # ------------------------------------------------------------------
    # neighbourhood clipping
    # ------------------------------------------------------------------

    def clip_horizontal(self, s, s_ref):
        ext = self.mesh.extend_scalar(s_ref, fill_corners=True)
        lo = ext
        hi = ext
        n = self.mesh.n
        smin = np.full(s.shape, np.inf)
        smax = np.full(s.shape, -np.inf)
        for a in range(5):
            for b in range(5):
                smin = np.minimum(smin, lo[:, a:a + n, b:b + n])
                smax = np.maximum(smax, hi[:, a:a + n, b:b + n])
        return np.clip(s, smin, smax)

    def clip_vertical(self, s, s_ref):
        L = s.shape[-1]
        smin = np.full(s.shape, np.inf)
        smax = np.full(s.shape, -np.inf)
        for d in range(-2, 3):
            lo = max(0, d)
            hi = min(L, L + d)
            smin[..., lo - d:hi - d] = np.minimum(
                smin[..., lo - d:hi - d], s_ref[..., lo:hi])
            smax[..., lo - d:hi - d] = np.maximum(
                smax[..., lo - d:hi - d], s_ref[..., lo:hi])
        return np.clip(s, smin, smax)

    # ------------------------------------------------------------------
    # split transport drivers
    # ------------------------------------------------------------------

    def advect_w3(self, s, winds, dt, conservative=False, clip=False):
        """Transport a cell scalar over dt with the split V-H-V scheme.

        Returns the transported field.  With conservative=True the
        result is the initial field minus the accumulated flux
        divergence (exact constant preservation and mass conservation);
        otherwise it is the advective cascade end state.
        """
        uxi, ueta, uv = winds
        nh, nv = self.substeps(winds, dt)
        vols = self.volumes
        clip_h = self.clip_horizontal if clip else None
        clip_v = self.clip_vertical if clip else None

        def tend_v(y):
            return self._tendency_v(y, uv, vols)

        def tend_h(y):
            return self._tendency_h(y, uxi, ueta, vols)

        s1, f1 = self._rk_dir(s, tend_v, 0.5 * dt, nv, clip_v, conservative)
        s2, f2 = self._rk_dir(s1, tend_h, dt, nh, clip_h, conservative)
        s3, f3 = self._rk_dir(s2, tend_v, 0.5 * dt, nv, clip_v, conservative)
        if not conservative:
            return s3
        div = (f2[0][:, 1:] - f2[0][:, :-1]
               + f2[1][:, :, 1:] - f2[1][:, :, :-1]
               + (f1[0] + f3[0])[..., 1:] - (f1[0] + f3[0])[..., :-1])
        out = s - div / vols
        if clip:
            out = self.clip_vertical(
                self.clip_horizontal(out, s), s)
        return out

    def advect_theta(self, th, winds, dt, clip=False):
        """Advective transport of a level-based scalar over dt."""
        uxi_t, ueta_t = self.theta_level_winds(winds)
        uv = winds[2]
        nh, nv = self.substeps(winds, dt)
        clip_h = self.clip_horizontal if clip else None
        clip_v = self.clip_vertical if clip else None

        def tend_v(y):
            return self._tendency_theta_v(y, uv), None

        def tend_h(y):
            return self._tendency_theta_h(y, uxi_t, ueta_t), None

        t1, _ = self._rk_dir(th, tend_v, 0.5 * dt, nv, clip_v)
        t2, _ = self._rk_dir(t1, tend_h, dt, nh, clip_h)
        t3, _ = self._rk_dir(t2, tend_v, 0.5 * dt, nv, clip_v)
        return t3

    def cell_centre_wind(self, winds):
        """Computational wind vector at cell centres: (6, n, n, m, 3)."""
        uxi, ueta, uv = winds
        return np.stack([
            0.5 * (uxi[:, :-1] + uxi[:, 1:]),
            0.5 * (ueta[:, :, :-1] + ueta[:, :, 1:]),
            0.5 * (uv[..., :-1] + uv[..., 1:]),
        ], axis=-1)

    def cartesian_wind(self, winds):
        """Physical wind at cell centres from the staggered fluxes."""
        Jc, detc, _, _, _ = self.mesh.centre_data()
        uc = self.cell_centre_wind(winds)
        return np.einsum('...ab,...b->...a', Jc, uc) / detc[..., None]

    def advect_momentum(self, winds_adv, winds_field, dt):
        """Advective increments of the Cartesian wind components.

        winds_adv carries the transporting velocity, winds_field the
        transported one.  Returns (n_cells, 3) increments in the
        flattened cell order used by the weak projection.
        """
        ucart = self.cartesian_wind(winds_field)
        out = np.empty_like(ucart)
        for c in range(3):
            s = ucart[..., c]
            out[..., c] = self.advect_w3(s, winds_adv, dt) - s
        return out.reshape(-1, 3)
