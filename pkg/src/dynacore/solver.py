"""Krylov solution of the semi-implicit linear increment system.

The four-field system (momentum, density, potential temperature, Exner
pressure) is reduced to a Helmholtz problem for the pressure increment
by eliminating the other variables with diagonally lumped mass matrices
(Coriolis dropped from the lumped approximation).  The Helmholtz
operator is inverted approximately by one v-cycle of a geometric
multigrid with horizontal-only coarsening -- columns stay intact and
the smoother is a damped vertical-line (column-block) relaxation, since
the grid anisotropy concentrates stiffness in the vertical.  That
approximate Schur inverse preconditions a generalised conjugate
residual iteration on the full block system.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverFailureError(RuntimeError):
    """Krylov iteration failed; carries the residual history."""

    def __init__(self, message, iterations=0, history=None):
        super().__init__(message)
        self.iterations = iterations
        self.history = history or []


@dataclass(frozen=True)
class ReferenceState:
    """Linearisation state: velocity part is identically zero."""
    rho: np.ndarray      # W3
    theta: np.ndarray    # Wtheta
    Pi: np.ndarray       # W3

    def __post_init__(self):
        for name in ("rho", "theta", "Pi"):
            v = getattr(self, name)
            if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
                raise ValueError(f"reference {name} must be positive")


@dataclass
class SolverConfig:
    tolerance: float = 1.0e-6
    max_iterations: int = 100
    levels: int = 10                # cap; the mesh limits the real depth
    smoother_sweeps: int = 2
    smoother_relax: float = 0.9
    restart: int = 40
    tau_u: float = 0.5
    tau_rho: float = 1.0
    tau_theta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.levels < 1:
            raise ValueError("need at least one multigrid level")


def rho_at_faces(fem, rho):
    """A W3 density sampled on every W2 face (simple two-cell average)."""
    mesh = fem.mesh
    m = mesh.m
    out = np.empty(mesh.n_w2)
    nsd = mesh.n_side_faces * m
    out[:nsd] = fem.side_avg @ rho
    rc = rho.reshape(mesh.n_columns, m)
    rad = np.empty((mesh.n_columns, m + 1))
    rad[:, 1:-1] = 0.5 * (rc[:, :-1] + rc[:, 1:])
    rad[:, 0] = rc[:, 0]
    rad[:, -1] = rc[:, -1]
    out[nsd:] = rad.reshape(-1)
    return out


class LinearSystem:
    """The block operator of the implicit increment equations.

    Rows: momentum (W2), continuity (W3), potential temperature
    (Wtheta) and the sampled equation of state (W3).  All couplings are
    frozen at the reference state and carry their tau dt factors.
    """

    def __init__(self, fem, ref, dt, config=None):
        self.fem = fem
        self.mesh = fem.mesh
        self.ref = ref
        self.dt = float(dt)
        self.config = config or SolverConfig()
        c = self.config

        self.A0 = (fem.M2 + dt * fem.Mmu + c.tau_u * dt * fem.MC).tocsr()
        self.Pcoef = c.tau_u * dt * fem.vertical_pressure_coupling(ref.Pi)
        self.G = (c.tau_u * dt * fem.gradient_matrix(ref.theta)).tocsr()
        self.Ptheta = (c.tau_theta * dt * fem.buoyancy_matrix(
            ref.theta)).tocsr()
        rf = rho_at_faces(fem, ref.rho)
        rf[~self.mesh.w2_free] = 0.0
        self.rho_face = rf
        self.Dr = (c.tau_rho * dt * fem.D @ sp.diags(rf)).tocsr()
        self.E_Pi, self.E_rho, self.E_theta = fem.eos_linearisation(
            ref.Pi, ref.rho, ref.theta)

        self._build_scales()

    def _build_scales(self):
        """Row equilibration weights for the mixed-units residual norm.

        Each equation is scaled by the size of its largest term under
        natural variable magnitudes (acoustic-speed volume fluxes,
        reference density and temperature, order-one Exner), so a
        scaled residual of 1e-6 always means a part-per-million
        imbalance of that equation, even for rows dominated by a stiff
        balance such as hydrostasy.
        """
        fem, c = self.fem, self.fem.const
        mesh = self.mesh
        th_ref = float(np.mean(self.ref.theta))
        cs = np.sqrt(c.cp * c.R * th_ref / (c.cp - c.R))

        # natural column magnitudes
        u_col = cs * self._face_areas()
        rho_col = self.ref.rho
        th_col = self.ref.theta

        row_u = abs(self.A0) @ u_col + abs(self.G) @ np.ones(mesh.n_w3)
        row_u += fem.apply_vertical_pressure(np.abs(self.Pcoef), th_col)
        row_rho = fem.M3_diag * rho_col + abs(self.Dr) @ u_col
        row_th = abs(fem.Mtheta) @ th_col + abs(self.Ptheta) @ u_col
        row_Pi = self.E_Pi + self.E_rho * rho_col \
            + abs(self.E_theta) @ th_col
        self._scale = 1.0 / np.concatenate(
            [row_u, row_rho, row_th, row_Pi])

    def _face_areas(self):
        """Approximate physical area of every W2 face."""
        mesh = self.mesh
        Jc, detc, _, _, _ = mesh.centre_data()
        h = np.linalg.norm(Jc, axis=-2)               # cell extents
        A = detc[..., None] / h                       # face areas by axis
        per_face = np.stack([A[..., 0], A[..., 0], A[..., 1], A[..., 1],
                             A[..., 2], A[..., 2]], axis=-1)
        out = np.zeros(mesh.n_w2)
        cnt = np.zeros(mesh.n_w2)
        np.add.at(out, mesh.cell_dofs.reshape(-1, 6).ravel(),
                  per_face.reshape(-1, 6).ravel())
        np.add.at(cnt, mesh.cell_dofs.reshape(-1, 6).ravel(), 1.0)
        return out / np.maximum(cnt, 1.0)

    # -- block application ------------------------------------------------

    def apply(self, du, drho, dtheta, dPi):
        fem = self.fem
        ru = self.A0 @ du \
            - fem.apply_vertical_pressure(self.Pcoef, dtheta) \
            - self.G @ dPi
        rrho = fem.M3_diag * drho + self.Dr @ du
        rtheta = fem.Mtheta @ dtheta + self.Ptheta @ du
        rPi = self.E_Pi * dPi - self.E_rho * drho - self.E_theta @ dtheta
        return ru, rrho, rtheta, rPi

    # -- packing ----------------------------------------------------------

    def pack(self, blocks):
        return np.concatenate(blocks)

    def unpack(self, x):
        mesh = self.mesh
        i1 = mesh.n_w2
        i2 = i1 + mesh.n_w3
        i3 = i2 + mesh.n_wtheta
        return x[:i1], x[i1:i2], x[i2:i3], x[i3:]

    def scale_vector(self):
        return self._scale

    def matvec(self, x):
        return self.pack(self.apply(*self.unpack(x)))


def _column_blocks(H, n_columns, m):
    """Per-column dense diagonal blocks of a W3 operator: (ncol, m, m)."""
    C = H.tocoo()
    rc = C.row // m
    mask = rc == C.col // m
    out = np.zeros((n_columns, m, m))
    np.add.at(out, (rc[mask], C.row[mask] % m, C.col[mask] % m),
              C.data[mask])
    return out


class Multigrid:
    """Geometric v-cycle for a W3 Helmholtz operator.

    Coarsening is horizontal only (cell agglomeration 2x2 per panel,
    columns intact) with piecewise-constant prolongation and averaging
    restriction; coarse operators are Galerkin products.  The smoother
    solves the per-column diagonal blocks exactly (a vertical-line
    relaxation), damped for the horizontal coupling.
    """

    def __init__(self, H, n, m, sweeps=2, relax=0.9, max_levels=10):
        self.sweeps = sweeps
        self.relax = relax
        self.ops = [H.tocsr()]
        self.prolong = []
        ncur = n
        while len(self.ops) < max_levels and ncur % 2 == 0 and ncur >= 6:
            nc = ncur // 2
            P = self._prolongation(ncur, nc, m)
            Hc = (0.25 * P.T @ self.ops[-1] @ P).tocsr()
            self.prolong.append(P)
            self.ops.append(Hc)
            ncur = nc
        self.blockinv = []
        ncols = 6 * n * n
        ncur = n
        for H_l in self.ops:
            blocks = _column_blocks(H_l, 6 * ncur * ncur, m)
            self.blockinv.append(np.linalg.inv(blocks))
            ncur //= 2
        self.coarse_lu = spla.splu(self.ops[-1].tocsc())
        del ncols

    @staticmethod
    def _prolongation(nf, nc, m):
        """Piecewise-constant coarse-to-fine W3 transfer."""
        p, J, I = np.meshgrid(np.arange(6), np.arange(nc), np.arange(nc),
                              indexing='ij')
        colc = ((p * nc + J) * nc + I)
        rows = []
        cols = []
        for di in range(2):
            for dj in range(2):
                colf = (p * nf + (2 * J + dj)) * nf + (2 * I + di)
                k = np.arange(m)
                rows.append((colf[..., None] * m + k).ravel())
                cols.append((colc[..., None] * m + k).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sp.coo_matrix(
            (np.ones(rows.size), (rows, cols)),
            shape=(6 * nf * nf * m, 6 * nc * nc * m)).tocsr()

    def _smooth(self, level, x, b, sweeps):
        H = self.ops[level]
        Binv = self.blockinv[level]
        m = Binv.shape[1]
        for _ in range(sweeps):
            r = b - H @ x
            dx = np.einsum('cab,cb->ca', Binv, r.reshape(-1, m))
            x = x + self.relax * dx.reshape(-1)
        return x

    def _cycle(self, level, b):
        if level == len(self.ops) - 1:
            return self.coarse_lu.solve(b)
        x = self._smooth(level, np.zeros_like(b), b, self.sweeps)
        r = b - self.ops[level] @ x
        rc = 0.25 * (self.prolong[level].T @ r)
        x = x + self.prolong[level] @ self._cycle(level + 1, rc)
        return self._smooth(level, x, b, self.sweeps)

    def vcycle(self, b):
        return self._cycle(0, b)


class SchurPreconditioner:
    """Approximate inverse of the block system via a pressure Helmholtz.

    Velocity, density and temperature increments are eliminated with
    diagonally lumped M_theta and M2 (damping kept, Coriolis dropped);
    what remains is a Helmholtz operator on the Exner increment, solved
    with one multigrid v-cycle.
    """

    def __init__(self, linsys):
        self.sys = linsys
        fem = linsys.fem
        mesh = linsys.mesh
        self._u_scale = linsys._scale[:mesh.n_w2]
        cfg = linsys.config
        m = mesh.m
        ncol = mesh.n_columns
        nsd = mesh.n_side_faces * m

        self.M3_inv = 1.0 / fem.M3_diag
        self.Mth_inv = 1.0 / fem.Mtheta_lumped
        Mth_blocks = _column_blocks(fem.Mtheta.tocsr(), ncol, m + 1)
        self.Mth_binv = np.linalg.inv(Mth_blocks)

        a_diag = fem.M2_diag + linsys.dt * fem.Mmu.diagonal()
        self._build_velocity_inverse(a_diag, fem, mesh, cfg, m, ncol, nsd)
        self.AG = (self.Ainv @ linsys.G).tocsr()
        Hrho = sp.diags(linsys.E_rho * self.M3_inv) @ (linsys.Dr @ self.AG)
        Hth = linsys.E_theta @ (sp.diags(self.Mth_inv)
                                @ (linsys.Ptheta @ self.AG))
        self.H = (sp.diags(linsys.E_Pi) + Hrho + Hth).tocsr()
        if np.any(self.H.diagonal() <= 0.0):
            raise SolverFailureError("Helmholtz diagonal not positive")
        self.mg = Multigrid(self.H, mesh.n, m,
                            sweeps=cfg.smoother_sweeps,
                            relax=cfg.smoother_relax,
                            max_levels=cfg.levels)

    def _build_velocity_inverse(self, a_diag, fem, mesh, cfg, m, ncol, nsd):
        """Sparse inverse of the lumped momentum operator.

        Side faces are plain diagonal; the radial faces of each column
        couple through the buoyancy elimination, giving a dense
        (m+1)x(m+1) block per column that is inverted directly.
        """
        if np.any(a_diag == 0.0):
            raise SolverFailureError("zero lumped momentum diagonal")
        kk = np.arange(m + 1)
        A2 = (fem.M2 + self.sys.dt * fem.Mmu).tocsr()
        ablk = _column_blocks(A2[nsd:, nsd:].tocsr(), ncol, m + 1)

        # theta-elimination coupling on the radial faces of each column
        wt = fem.wtheta_flat
        dtheta = self.sys.ref.theta[wt[:, 1]] - self.sys.ref.theta[wt[:, 0]]
        vals = fem._buoy_geom * dtheta[:, None, None]    # (nc, level, face)
        raddofs = fem.cell_dofs[:, 4:6]
        free = mesh.w2_free[raddofs]
        colc = fem.w3_flat // m
        kc = fem.w3_flat % m
        Pblk = np.zeros((ncol, m + 1, m + 1))
        for a in range(2):
            for b in range(2):
                np.add.at(Pblk, (colc, kc + a, kc + b),
                          vals[:, a, b] * free[:, b])
        Pblk *= cfg.tau_theta * self.sys.dt
        coef = self.sys.Pcoef.reshape(ncol, m + 1)
        buoy = coef[:, :, None] * np.einsum(
            'cab,cbd->cad', self.Mth_binv, Pblk)
        inv_blocks = np.linalg.inv(ablk + buoy)

        ii = nsd + (np.arange(ncol)[:, None, None] * (m + 1)
                    + kk[None, :, None]) + 0 * kk[None, None, :]
        jj = nsd + (np.arange(ncol)[:, None, None] * (m + 1)
                    + kk[None, None, :]) + 0 * kk[None, :, None]
        rows = np.concatenate([np.arange(nsd), ii.ravel()])
        cols = np.concatenate([np.arange(nsd), jj.ravel()])
        data = np.concatenate([1.0 / a_diag[:nsd], inv_blocks.ravel()])
        self.Ainv = sp.coo_matrix(
            (data, (rows, cols)),
            shape=(mesh.n_w2, mesh.n_w2)).tocsr()

    def mtheta_solve(self, v):
        """Exact Wtheta mass solve (block tridiagonal per column)."""
        out = np.einsum('cab,cb->ca', self.Mth_binv,
                        v.reshape(self.Mth_binv.shape[0], -1))
        return out.reshape(-1)

    def _coupled_momentum(self, u):
        """The full theta-eliminated momentum operator (mass + Coriolis)."""
        sys = self.sys
        return sys.A0 @ u + sys.fem.apply_vertical_pressure(
            sys.Pcoef, self.mtheta_solve(sys.Ptheta @ u))

    def _velocity_solve(self, b, iters=8, tol=1.0e-3):
        """Approximate momentum inverse: short inner Krylov iteration.

        A few conjugate-residual steps preconditioned by the lumped
        inverse recover the consistent-mass off-diagonals and the
        Coriolis coupling; plain relaxation sweeps are useless here
        because the Coriolis term makes the operator non-normal with
        large transient growth.
        """
        S = self._u_scale
        x = np.zeros_like(b)
        r = b.copy()
        n0 = np.linalg.norm(r * S)
        if n0 == 0.0:
            return x
        zs, qs = [], []
        for _ in range(iters):
            z = self.Ainv @ r
            q = self._coupled_momentum(z) * S
            for zj, qj in zip(zs, qs):
                beta = q @ qj
                q -= beta * qj
                z -= beta * zj
            qn = np.linalg.norm(q)
            if qn == 0.0:
                break
            q /= qn
            z /= qn
            alpha = q @ (r * S)
            x += alpha * z
            r -= alpha * (q / S)
            if np.linalg.norm(r * S) <= tol * n0:
                break
            zs.append(z)
            qs.append(q)
        return x

    def apply(self, bu, brho, btheta, bPi):
        sys = self.sys
        fem = sys.fem
        bu_c = bu + fem.apply_vertical_pressure(
            sys.Pcoef, self.mtheta_solve(btheta))
        u0 = self._velocity_solve(bu_c)
        rho0 = self.M3_inv * (brho - sys.Dr @ u0)
        th0 = self.mtheta_solve(btheta - sys.Ptheta @ u0)
        rhs = bPi + sys.E_rho * rho0 + sys.E_theta @ th0
        dPi = self.mg.vcycle(rhs)
        du = self._velocity_solve(bu_c + sys.G @ dPi)
        drho = self.M3_inv * (brho - sys.Dr @ du)
        dth = self.mtheta_solve(btheta - sys.Ptheta @ du)
        return du, drho, dth, dPi


@dataclass
class SolveResult:
    blocks: tuple
    iterations: int
    residual: float
    history: list


def krylov_solve(linsys, rhs_blocks, precon=None, config=None):
    """Right-preconditioned GCR iteration on the scaled block system.

    Returns a SolveResult whose blocks solve `linsys` applied to x =
    rhs to the configured relative tolerance; raises SolverFailureError
    when the iteration budget is exhausted.
    """
    cfg = config or linsys.config
    if precon is None:
        precon = SchurPreconditioner(linsys)
    S = linsys.scale_vector()
    b = linsys.pack(rhs_blocks) * S
    normb = np.linalg.norm(b)
    if normb == 0.0:
        zero = tuple(np.zeros_like(v) for v in rhs_blocks)
        return SolveResult(zero, 0, 0.0, [0.0])

    x = np.zeros_like(b)
    r = b.copy()
    history = []
    zs, qs = [], []
    for it in range(1, cfg.max_iterations + 1):
        z = linsys.pack(precon.apply(*linsys.unpack(r / S)))
        q = linsys.matvec(z) * S
        for zj, qj in zip(zs, qs):
            beta = q @ qj
            q = q - beta * qj
            z = z - beta * zj
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise SolverFailureError("Krylov breakdown (zero direction)",
                                     it, history)
        q /= qn
        z /= qn
        alpha = q @ r
        x += alpha * z
        r -= alpha * q
        res = np.linalg.norm(r) / normb
        history.append(res)
        if res <= cfg.tolerance:
            return SolveResult(tuple(linsys.unpack(x)), it, res, history)
        if len(qs) >= cfg.restart:
            zs, qs = [], []
            # recompute the true residual to stop recurrence drift
            r = b - linsys.matvec(x) * S
        else:
            zs.append(z)
            qs.append(q)
    raise SolverFailureError(
        f"no convergence in {cfg.max_iterations} iterations "
        f"(residual {history[-1]:.3e})", cfg.max_iterations, history)
