"""Mixed finite-element operators at lowest order.

Velocity lives in the face (Raviart-Thomas) space W2, densities and
Exner pressure in the cellwise-constant space W3, potential temperature
in the vertically continuous space Wtheta.  All integrals are pulled
back to the reference cube through the Piola map v = J vhat / detJ and
evaluated with 2x2x2 Gauss quadrature; cellwise-constant test and trial
functions are kept on the reference cell so the divergence pairing is a
plain signed sum of face fluxes.

Sign conventions: a W2 dof is the volume flux along the fixed global
orientation of its face; the per-cell tables of the mesh convert to the
panel-local (+xi, +eta, +r) coefficients used by the reference basis

    vhat_W = (1-x, 0, 0),  vhat_E = (x, 0, 0),  ...  vhat_U = (0, 0, z).
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import quadrature_points_3d


def reference_w2_basis(points):
    """Values of the 6 local face basis functions: (6, npts, 3)."""
    pts = np.atleast_2d(points)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    zero = np.zeros_like(x)
    vals = np.array([
        [1 - x, zero, zero],
        [x, zero, zero],
        [zero, 1 - y, zero],
        [zero, y, zero],
        [zero, zero, 1 - z],
        [zero, zero, z],
    ])
    return vals.transpose(0, 2, 1)


def reference_wtheta_basis(points):
    """Level basis (lower, upper) at reference points: (2, npts)."""
    z = np.atleast_2d(points)[:, 2]
    return np.stack([1 - z, z])


class MassSolveError(RuntimeError):
    """Conjugate-gradient mass solve failed to converge."""


class FemOperators:
    """Assembled operators for one mesh and constant set."""

    def __init__(self, mesh, constants, mu=0.0):
        self.mesh = mesh
        self.const = constants
        self.mu = mu if callable(mu) else float(mu)

        m = mesh.m
        self.w3_dofs = mesh.col_pij[..., None] * m + np.arange(m)
        self.wtheta_dofs = mesh.col_pij[..., None] * (m + 1) + np.arange(m + 1)

        self._assemble_geometry()
        self._assemble_matrices()
        self._m2_solver = None

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------

    def _assemble_geometry(self):
        mesh = self.mesh
        pts, wts = quadrature_points_3d()
        J, detJ, _ = mesh.quad_data()
        nc = mesh.n_cells
        Jf = J.reshape(nc, 8, 3, 3)
        dJf = detJ.reshape(nc, 8)
        self._Jq = Jf
        self._detJq = dJf
        self._wq = wts
        self._vhat = reference_w2_basis(pts)          # (6, 8, 3)
        self._what = reference_wtheta_basis(pts)      # (2, 8)

        self.cell_dofs = mesh.cell_dofs.reshape(nc, 6)
        self.cell_signs = mesh.cell_signs.reshape(nc, 6)
        self.w3_flat = self.w3_dofs.reshape(nc)
        wt = np.stack([self.wtheta_dofs[..., :-1], self.wtheta_dofs[..., 1:]],
                      axis=-1)
        self.wtheta_flat = wt.reshape(nc, 2)

        # vertical metric factor |J e3| |J^-T e3| at quadrature points
        Je3 = Jf[..., :, 2]
        c01 = np.cross(Jf[..., :, 0], Jf[..., :, 1])
        gv = (np.linalg.norm(Je3, axis=-1) * np.linalg.norm(c01, axis=-1)
              / dJf)
        # buoyancy block geometry: (nc, 2 theta, 2 vertical face)
        wb = self._what[:, None, :] * self._what[None, :, :]   # (2,2,8)
        self._buoy_geom = np.einsum('abq,cq,q->cab', wb, gv, wts)

        # weak projection vectors g_{c,l} = sum_q w_q J(q) vhat_l(q)
        self._gproj = np.einsum('cqab,lqb,q->cla', Jf, self._vhat, wts)

    def _pair_matrix(self, loc, mask_constrained=True, lump_identity=False):
        """Assemble a W2 x W2 matrix from per-cell 6x6 local blocks."""
        mesh = self.mesh
        rows = np.repeat(self.cell_dofs[:, :, None], 6, axis=2)
        cols = np.repeat(self.cell_dofs[:, None, :], 6, axis=1)
        vals = self.cell_signs[:, :, None] * self.cell_signs[:, None, :] * loc
        if mask_constrained:
            free = mesh.w2_free
            keep = free[rows] & free[cols]
            vals = np.where(keep, vals, 0.0)
        M = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(mesh.n_w2, mesh.n_w2)).tocsr()
        M.sum_duplicates()
        if lump_identity:
            diag = M.diagonal()
            scale = diag[mesh.w2_free].mean()
            fixed = np.where(mesh.w2_free, 0.0, scale)
            M = M + sp.diags(fixed)
        return M

    def _assemble_matrices(self):
        mesh = self.mesh
        J, detJ, wq = self._Jq, self._detJq, self._wq
        vhat = self._vhat

        K = np.einsum('cqka,cqkb->cqab', J, J) / detJ[..., None, None]
        loc = np.einsum('lqa,cqab,nqb,q->cln', vhat, K, vhat, wq)
        self.M2 = self._pair_matrix(loc, lump_identity=True)
        self.M2_diag = self.M2.diagonal()

        # Coriolis pairing 2 vhat^T J^T [Omega x] J vhat / detJ (skew)
        W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        W = 2.0 * self.const.omega * W
        KC = np.einsum('cqka,kd,cqdb->cqab', J, W, J) / detJ[..., None, None]
        locC = np.einsum('lqa,cqab,nqb,q->cln', vhat, KC, vhat, wq)
        self.MC = self._pair_matrix(locC)

        # vertical damping pairing: mu vhat^T (J^T J / detJ) P3 vhat';
        # mu may be a constant or a profile mu(z)
        if callable(self.mu) or self.mu != 0.0:
            P3 = np.zeros((3, 3))
            P3[2, 2] = 1.0
            if callable(self.mu):
                pts, _ = quadrature_points_3d()
                r = mesh.jacobians_at(pts)[4].reshape(mesh.n_cells, -1)
                muq = self.mu(r - mesh.a)
            else:
                muq = np.full((mesh.n_cells, wq.size), self.mu)
            locm = np.einsum('lqa,cqab,bd,nqd,q,cq->cln',
                             vhat, K, P3, vhat, wq, muq)
            self.Mmu = self._pair_matrix(locm)
        else:
            self.Mmu = sp.csr_matrix((mesh.n_w2, mesh.n_w2))

        # W3 mass: diagonal of cell volumes
        self.M3_diag = np.zeros(mesh.n_w3)
        self.M3_diag[self.w3_flat] = mesh.volumes().reshape(-1)

        # Wtheta mass, tridiagonal per column
        mloc = np.einsum('aq,bq,cq,q->cab', self._what, self._what,
                         detJ, wq)
        rows = np.repeat(self.wtheta_flat[:, :, None], 2, axis=2)
        cols = np.repeat(self.wtheta_flat[:, None, :], 2, axis=1)
        self.Mtheta = sp.coo_matrix(
            (mloc.ravel(), (rows.ravel(), cols.ravel())),
            shape=(mesh.n_wtheta, mesh.n_wtheta)).tocsr()
        self.Mtheta.sum_duplicates()
        self.Mtheta_lumped = np.asarray(self.Mtheta.sum(axis=1)).ravel()

        # divergence: signed sum of face fluxes per cell
        orient = mesh.face_orient
        rows = np.repeat(self.w3_flat[:, None], 6, axis=1)
        vals = self.cell_signs * orient
        vals = np.where(mesh.w2_free[self.cell_dofs], vals, 0.0)
        self.D = sp.coo_matrix(
            (vals.ravel(), (rows.ravel(), self.cell_dofs.ravel())),
            shape=(mesh.n_w3, mesh.n_w2)).tocsr()
        self.DT = self.D.T.tocsr()

        # side-face averaging of cell means for the pressure-gradient term
        nsf = mesh.n_side_faces
        m = mesh.m
        side_dofs = self.cell_dofs[:, :4]
        r = side_dofs.ravel()
        c = np.repeat(self.w3_flat[:, None], 4, axis=1).ravel()
        self.side_avg = sp.coo_matrix(
            (np.full(r.size, 0.5), (r, c)),
            shape=(nsf * m, mesh.n_w3)).tocsr()

    # ------------------------------------------------------------------
    # mass applications and solves
    # ------------------------------------------------------------------

    def m2_solve(self, b, tol=1.0e-12, maxiter=2000):
        """Solve M2 x = b by Jacobi-preconditioned conjugate gradients."""
        if self._m2_solver is None:
            inv = 1.0 / self.M2_diag
            self._m2_solver = spla.LinearOperator(
                self.M2.shape, matvec=lambda v: inv * v)
        bn = np.linalg.norm(b)
        if bn == 0.0:
            return np.zeros_like(b)
        x, info = spla.cg(self.M2, b, rtol=tol, atol=0.0,
                          maxiter=maxiter, M=self._m2_solver)
        if info != 0:
            raise MassSolveError(f"M2 solve did not converge (info={info})")
        return x

    def theta_cell_mean(self, theta):
        """Cell means of a Wtheta field as a flat W3 vector."""
        out = np.zeros(self.mesh.n_w3)
        out[self.w3_flat] = 0.5 * (theta[self.wtheta_flat[:, 0]]
                                   + theta[self.wtheta_flat[:, 1]])
        return out

    def theta_at_faces(self, theta):
        """Potential temperature sampled on every W2 face.

        Side faces carry the average of the two adjacent cell means;
        radial faces carry the shared level value itself.
        """
        mesh = self.mesh
        out = np.empty(mesh.n_w2)
        nsd = mesh.n_side_faces * mesh.m
        out[:nsd] = self.side_avg @ self.theta_cell_mean(theta)
        out[nsd:] = theta
        return out

    # ------------------------------------------------------------------
    # pressure gradient and linearised couplings
    # ------------------------------------------------------------------

    def pressure_gradient(self, theta, Pi):
        """Weak form of -cp theta grad(Pi) tested against W2: a W2 vector."""
        r = self.const.cp * self.theta_at_faces(theta) * (self.DT @ Pi)
        r[~self.mesh.w2_free] = 0.0
        return r

    def gradient_matrix(self, theta_ref):
        """G: W3 -> W2, the pressure gradient frozen at theta_ref."""
        face = self.const.cp * self.theta_at_faces(theta_ref)
        face[~self.mesh.w2_free] = 0.0
        return sp.diags(face) @ self.DT

    def vertical_pressure_coupling(self, Pi_ref):
        """Diagonal pairing of radial-face dofs with their Wtheta dof.

        Returns the diagonal (length n_wtheta): applied to a Wtheta
        increment it gives the radial-face part of the pressure-gradient
        perturbation c_p theta' (Pi_below - Pi_above).
        """
        mesh = self.mesh
        m = mesh.m
        d = np.zeros(mesh.n_wtheta)
        # (D^T Pi) restricted to radial faces already encodes the jump
        jump = (self.DT @ Pi_ref)[mesh.n_side_faces * m:]
        d[:] = self.const.cp * jump
        # boundary faces are constrained
        d[self.wtheta_dofs[..., 0].ravel()] *= 0.0
        d[self.wtheta_dofs[..., -1].ravel()] *= 0.0
        return d

    def apply_vertical_pressure(self, dcoef, dtheta):
        """W2 vector from a Wtheta increment using the diagonal coupling."""
        mesh = self.mesh
        out = np.zeros(mesh.n_w2)
        out[mesh.n_side_faces * mesh.m:] = dcoef * dtheta
        return out

    def buoyancy_matrix(self, theta_ref):
        """P: W2 -> Wtheta, vertical advection of the reference theta.

        Row (column, level), columns are the two radial-face dofs of the
        cell; entries integrate what_a what_b |Je3| |J^-T e3| against the
        reference theta jump across the cell.
        """
        mesh = self.mesh
        dtheta = (theta_ref[self.wtheta_flat[:, 1]]
                  - theta_ref[self.wtheta_flat[:, 0]])
        vals = self._buoy_geom * dtheta[:, None, None]
        vdofs = self.cell_dofs[:, 4:6]
        free = mesh.w2_free[vdofs]
        vals = vals * free[:, None, :]
        rows = np.repeat(self.wtheta_flat[:, :, None], 2, axis=2)
        cols = np.repeat(vdofs[:, None, :], 2, axis=1)
        P = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(mesh.n_wtheta, mesh.n_w2)).tocsr()
        P.sum_duplicates()
        return P

    # ------------------------------------------------------------------
    # equation of state
    # ------------------------------------------------------------------

    def eos_pressure_from_state(self, rho, theta):
        """Exner pressure satisfying the equation of state cell by cell."""
        c = self.const
        kap = c.kappa
        theta_c = self.theta_cell_mean(theta)
        return (c.R * rho * theta_c / c.p0) ** (kap / (1.0 - kap))

    def eos_residual(self, Pi, rho, theta):
        """p0 Pi^{(1-kappa)/kappa} / (R rho theta) - 1 at the cell nodes."""
        c = self.const
        kap = c.kappa
        theta_c = self.theta_cell_mean(theta)
        return c.p0 * Pi ** ((1.0 - kap) / kap) / (c.R * rho * theta_c) - 1.0

    def eos_linearisation(self, Pi, rho, theta):
        """Diagonals (E_Pi, E_rho) and matrix E_theta of the state law.

        The linearised node equation reads
            E_Pi dPi - E_rho drho - E_theta dtheta = -residual,
        the exact Jacobian of `eos_residual` with flipped Pi sign kept
        positive for a stably-defined Helmholtz problem.
        """
        c = self.const
        kap = c.kappa
        theta_c = self.theta_cell_mean(theta)
        X = c.p0 * Pi ** ((1.0 - kap) / kap) / (c.R * rho * theta_c)
        E_Pi = X * ((1.0 - kap) / kap) / Pi
        E_rho = X / rho
        half = X / (2.0 * theta_c)
        rows = np.repeat(self.w3_flat[:, None], 2, axis=1)
        vals = np.stack([half[self.w3_flat], half[self.w3_flat]], axis=-1)
        E_theta = sp.coo_matrix(
            (vals.ravel(), (rows.ravel(), self.wtheta_flat.ravel())),
            shape=(self.mesh.n_w3, self.mesh.n_wtheta)).tocsr()
        return E_Pi, E_rho, E_theta

    # ------------------------------------------------------------------
    # momentum helpers
    # ------------------------------------------------------------------

    def geopotential_w3(self):
        """g (r - a) sampled at cell centres as a W3 vector."""
        _, _, _, _, rc = self.mesh.centre_data()
        out = np.zeros(self.mesh.n_w3)
        out[self.w3_flat] = self.const.g * (rc.reshape(-1) - self.mesh.a)
        return out

    def momentum_rhs(self, u, theta, Pi, phi=None):
        """Weak momentum forcing: Coriolis, buoyancy and pressure gradient."""
        if phi is None:
            phi = self.geopotential_w3()
        r = -(self.MC @ u) + (self.DT @ phi) + self.pressure_gradient(
            theta, Pi)
        r[~self.mesh.w2_free] = 0.0
        return r

    def project_cartesian_increment(self, acart):
        """Weak W2 representation of a cellwise-constant Cartesian field.

        acart: (n_cells_flat, 3) in the flattened (panel,i,j,k) cell
        order.  Returns <v, a> for every W2 test function.
        """
        per = np.einsum('cla,ca->cl', self._gproj, acart) * self.cell_signs
        out = np.zeros(self.mesh.n_w2)
        np.add.at(out, self.cell_dofs.ravel(), per.ravel())
        out[~self.mesh.w2_free] = 0.0
        return out

    def dump_operators(self, path):
        """Write the sparse operator triplets to a .npz file."""
        np.savez(
            path,
            M2_data=self.M2.data, M2_indices=self.M2.indices,
            M2_indptr=self.M2.indptr,
            MC_data=self.MC.data, MC_indices=self.MC.indices,
            MC_indptr=self.MC.indptr,
            Mtheta_data=self.Mtheta.data, Mtheta_indices=self.Mtheta.indices,
            Mtheta_indptr=self.Mtheta.indptr,
            D_data=self.D.data, D_indices=self.D.indices,
            D_indptr=self.D.indptr,
            M3_diag=self.M3_diag,
            shape=np.array([self.mesh.n_w2, self.mesh.n_w3,
                            self.mesh.n_wtheta]),
        )
