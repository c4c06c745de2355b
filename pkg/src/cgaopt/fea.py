"""Weakly coupled thermo-elastic FEA on bilinear quads (plane stress, unit thickness).

Per element the physics is linear in one scalar property each:

    K_m,e  = E_e * K0                      structural stiffness
    K_T,e  = kappa_e * KT0                 conduction
    f_th,e = E_e * alpha_e * C0 @ (T_e - T0)   thermal load

so the reference matrices K0, KT0, C0 are integrated once (2x2 Gauss) for the
uniform grid, and composition enters only through the element scalars.
Compliance is J = f . u with f = f_m + f_th.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from .errors import IllPosedProblem, InvalidArgument, SolverFailure
from .materials import Props
from .mesh import BoundaryConditions, Grid2D, scatter_add

GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
RESIDUAL_TOL = 1e-8


def plane_stress_D(E: float, nu: float) -> np.ndarray:
    return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def _shape(xi, eta):
    N = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
    dN = 0.25 * np.array([_XI * (1 + _ETA * eta), _ETA * (1 + _XI * xi)])  # (2, 4) d/dxi, d/deta
    return N, dN


def strain_displacement(xy: np.ndarray, xi: float, eta: float):
    """B (3x8), grad N (2x4), N (4,) and det J at a reference point."""
    N, dN = _shape(xi, eta)
    J = dN @ xy
    detJ = np.linalg.det(J)
    dNdx = np.linalg.solve(J, dN)
    B = np.zeros((3, 8))
    B[0, 0::2] = dNdx[0]
    B[1, 1::2] = dNdx[1]
    B[2, 0::2] = dNdx[1]
    B[2, 1::2] = dNdx[0]
    return B, dNdx, N, detJ


@dataclass(frozen=True)
class ElementMatrices:
    K0: np.ndarray  # (8, 8) stiffness for E = 1
    KT0: np.ndarray  # (4, 4) conduction for kappa = 1
    C0: np.ndarray  # (8, 4) thermal load per unit E*alpha and nodal temperature rise
    N_int: np.ndarray  # (4,) integral of shape functions (body load lumping)


def quad_element_matrices(xy: np.ndarray, nu: float) -> ElementMatrices:
    D1 = plane_stress_D(1.0, nu)
    m = np.array([1.0, 1.0, 0.0])
    K0 = np.zeros((8, 8))
    KT0 = np.zeros((4, 4))
    C0 = np.zeros((8, 4))
    N_int = np.zeros(4)
    for xi in GAUSS_2:
        for eta in GAUSS_2:
            B, dNdx, N, detJ = strain_displacement(xy, xi, eta)
            if detJ <= 0:
                raise InvalidArgument("element has non-positive Jacobian; check connectivity orientation")
            K0 += B.T @ D1 @ B * detJ
            KT0 += dNdx.T @ dNdx * detJ
            C0 += np.outer(B.T @ D1 @ m, N) * detJ
            N_int += N * detJ
    return ElementMatrices(K0, KT0, C0, N_int)


class _Pattern:
    """Fixed sparsity pattern: sums per-element blocks straight into CSC data."""

    def __init__(self, rows, cols, n_rows, n_cols):
        keep = (rows >= 0) & (cols >= 0)
        self.keep = keep
        key = cols[keep].astype(np.int64) * n_rows + rows[keep]
        uniq, self.inverse = np.unique(key, return_inverse=True)
        self.n_rows, self.n_cols = n_rows, n_cols
        self.indices = (uniq % n_rows).astype(np.int32)
        col_of = uniq // n_rows
        self.indptr = np.searchsorted(col_of, np.arange(n_cols + 1)).astype(np.int32)
        self.nnz = uniq.size

    def matrix(self, values: np.ndarray) -> sp.csc_matrix:
        data = np.bincount(self.inverse, weights=values.ravel()[self.keep], minlength=self.nnz)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n_rows, self.n_cols))


class _LinearSolver:
    def __init__(self, A: sp.csc_matrix, method: str, what: str):
        self.A, self.method, self.what = A, method, what
        if method == "direct":
            try:
                # symmetric positive definite: minimum degree on A^T + A, no pivoting
                self.lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise IllPosedProblem(f"{what} system is singular: {exc}") from exc
        elif method == "cg":
            d = A.diagonal()
            if np.any(d <= 0):
                raise IllPosedProblem(f"{what} system has non-positive diagonal")
            self.Minv = sp.diags(1.0 / d)
        else:
            raise InvalidArgument(f"unknown solver {method!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            x = self.lu.solve(b)
        else:
            x, info = cg(self.A, b, rtol=RESIDUAL_TOL * 1e-2, atol=0.0, M=self.Minv, maxiter=20 * b.size)
            if info != 0:
                raise SolverFailure(f"{self.what}: CG did not converge (info={info})")
        bn = np.linalg.norm(b)
        res = np.linalg.norm(self.A @ x - b)
        if not np.all(np.isfinite(x)) or (bn > 0 and res > RESIDUAL_TOL * bn):
            raise SolverFailure(f"{self.what}: relative residual {res / max(bn, 1e-300):.3e} exceeds {RESIDUAL_TOL}")
        return x


@dataclass
class ThermalSolution:
    T: np.ndarray
    T0: float
    solver: _LinearSolver | None = None


@dataclass
class StructuralSolution:
    u: np.ndarray
    f: np.ndarray  # f_m + f_th, full length
    J: float
    solver: _LinearSolver | None = None


@dataclass(frozen=True)
class ElementProps:
    """Floored element properties and their composition gradients (N, S)."""

    E: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    density: np.ndarray
    dE: np.ndarray
    dkappa: np.ndarray
    dalpha: np.ndarray
    ddensity: np.ndarray


def element_props(material, rho: np.ndarray, e_floor: float = 1e-6, kappa_floor: float = 1e-6) -> ElementProps:
    """Evaluate properties at element compositions and apply the stiffness floors.

    Below a floor the property is clamped and its gradient is zero.
    """
    p: Props = material.props(rho)
    g: Props = material.prop_grads(rho)
    e_low = p.E < e_floor
    k_low = p.kappa < kappa_floor
    return ElementProps(
        E=np.where(e_low, e_floor, p.E),
        kappa=np.where(k_low, kappa_floor, p.kappa),
        alpha=p.alpha,
        density=p.density,
        dE=np.where(e_low[:, None], 0.0, g.E),
        dkappa=np.where(k_low[:, None], 0.0, g.kappa),
        dalpha=g.alpha,
        ddensity=g.density,
    )


class ThermoElasticModel:
    """Grid + boundary conditions with precomputed element matrices and sparsity."""

    def __init__(self, grid: Grid2D, bcs: BoundaryConditions, nu: float = 0.3, T0: float = 0.0,
                 solver: str = "direct"):
        self.grid, self.bcs, self.nu, self.T0, self.solver = grid, bcs, nu, T0, solver
        xy = grid.nodes[grid.elements[0]]
        self.mats = quad_element_matrices(xy, nu)
        self.edof = grid.element_dofs()
        self.enode = grid.elements
        n_dof = 2 * grid.n_nodes

        fixed = np.array(sorted(bcs.fixed_dofs), dtype=int)
        self.fixed = fixed
        self.free = np.setdiff1d(np.arange(n_dof), fixed)
        self.u_fixed = np.zeros(n_dof)
        self.u_fixed[fixed] = [bcs.fixed_dofs[d] for d in fixed]
        self.dof_map = np.full(n_dof, -1)
        self.dof_map[self.free] = np.arange(self.free.size)
        fix_map = np.full(n_dof, -1)
        fix_map[fixed] = np.arange(fixed.size)
        r = np.repeat(self.edof, 8, axis=1)
        c = np.tile(self.edof, (1, 8))
        self._k_ff = _Pattern(self.dof_map[r].ravel(), self.dof_map[c].ravel(), self.free.size, self.free.size)
        self._k_fp = _Pattern(self.dof_map[r].ravel(), fix_map[c].ravel(), self.free.size, max(fixed.size, 1))

        # mechanical load vector: nodal loads + consistent body force
        f_m = bcs.forces.copy()
        bx, by = bcs.body_force
        if bx or by:
            scatter_add(f_m, self.edof[:, 0::2], bx * self.mats.N_int)
            scatter_add(f_m, self.edof[:, 1::2], by * self.mats.N_int)
        self.f_m = f_m

        self.thermal_active = bcs.thermal_active
        tfixed = np.array(sorted(bcs.fixed_temps), dtype=int)
        self.t_fixed = tfixed
        self.t_free = np.setdiff1d(np.arange(grid.n_nodes), tfixed)
        self.T_fixed = np.full(grid.n_nodes, 0.0)
        self.T_fixed[tfixed] = [bcs.fixed_temps[n] for n in tfixed]
        self.t_map = np.full(grid.n_nodes, -1)
        self.t_map[self.t_free] = np.arange(self.t_free.size)
        tfix_map = np.full(grid.n_nodes, -1)
        tfix_map[tfixed] = np.arange(tfixed.size)
        rt = np.repeat(self.enode, 4, axis=1)
        ct = np.tile(self.enode, (1, 4))
        self._kt_ff = _Pattern(self.t_map[rt].ravel(), self.t_map[ct].ravel(), self.t_free.size, self.t_free.size)
        self._kt_fp = _Pattern(self.t_map[rt].ravel(), tfix_map[ct].ravel(), self.t_free.size, max(tfixed.size, 1))
        q = bcs.heat.copy()
        if bcs.heat_source:
            scatter_add(q, self.enode, bcs.heat_source * self.mats.N_int)
        self.q = q

    # -- thermal -----------------------------------------------------------
    def solve_thermal(self, kappa: np.ndarray) -> ThermalSolution:
        n = self.grid.n_nodes
        if not self.thermal_active:
            if np.any(self.q != 0):
                raise IllPosedProblem("heat loads given but no fixed-temperature nodes")
            return ThermalSolution(np.full(n, self.T0), self.T0)
        vals = kappa[:, None, None] * self.mats.KT0
        A = self._kt_ff.matrix(vals)
        rhs = self.q[self.t_free] - self._kt_fp.matrix(vals) @ self.T_fixed[self.t_fixed] if self.t_fixed.size else self.q[self.t_free]
        T = self.T_fixed.copy()
        solver = None
        if self.t_free.size:
            solver = _LinearSolver(A, self.solver, "thermal")
            T[self.t_free] = solver.solve(rhs)
        return ThermalSolution(T, self.T0, solver)

    # -- structural --------------------------------------------------------
    def thermal_force(self, E: np.ndarray, alpha: np.ndarray, T: np.ndarray) -> np.ndarray:
        dT = T[self.enode] - self.T0  # (Ne, 4)
        fe = (E * alpha)[:, None] * (dT @ self.mats.C0.T)  # (Ne, 8)
        f = np.zeros(2 * self.grid.n_nodes)
        scatter_add(f, self.edof, fe)
        return f

    def solve_structural(self, E: np.ndarray, f_th: np.ndarray | None = None) -> StructuralSolution:
        fx = self.fixed
        if not (np.any(fx % 2 == 0) and np.any(fx % 2 == 1) and fx.size >= 3):
            raise IllPosedProblem("supports do not remove rigid-body modes (need >= 3 fixed DOFs in both axes)")
        f = self.f_m if f_th is None else self.f_m + f_th
        vals = E[:, None, None] * self.mats.K0
        A = self._k_ff.matrix(vals)
        rhs = f[self.free] - self._k_fp.matrix(vals) @ self.u_fixed[self.fixed]
        solver = _LinearSolver(A, self.solver, "structural")
        u = self.u_fixed.copy()
        u[self.free] = solver.solve(rhs)
        if not np.all(np.isfinite(u)) or np.abs(u).max() > 1e15:
            raise IllPosedProblem("structural solve is numerically singular")
        return StructuralSolution(u, f, float(f @ u), solver)

    # -- adjoint -----------------------------------------------------------
    def sensitivity(self, props: ElementProps, thermal: ThermalSolution, struct: StructuralSolution) -> np.ndarray:
        """dJ/d rho_e^(j), shape (Ne, S), by a coupled adjoint.

        With K u = f (free rows), f = f_m + f_th(rho, T) and K_T T = q:
          lam  solves K_ff lam = f_F          (lam = u_F when prescribed u = 0)
          a    = u + lam on free DOFs, prescribed values on fixed DOFs
          eta  solves K_T,ff eta = (G^T a)_F, G = d f_th / d T
          dJ   = a . df_th|_T - lam . dK u - eta . dK_T T
        """
        u, f, T = struct.u, struct.f, thermal.T
        lam = np.zeros_like(u)
        if np.any(self.u_fixed):
            lam[self.free] = struct.solver.solve(f[self.free])
        else:
            lam[self.free] = u[self.free]
        a = u.copy()
        a[self.free] += lam[self.free]

        u_e, lam_e, a_e = u[self.edof], lam[self.edof], a[self.edof]
        dT_e = T[self.enode] - self.T0
        s_E = -np.einsum("ei,ij,ej->e", lam_e, self.mats.K0, u_e)
        s_Ealpha = np.einsum("ei,ij,ej->e", a_e, self.mats.C0, dT_e)

        dEalpha = props.dE * props.alpha[:, None] + props.E[:, None] * props.dalpha
        grad = s_E[:, None] * props.dE + s_Ealpha[:, None] * dEalpha

        if self.thermal_active and self.t_free.size:
            # G^T a : element-wise E alpha C0^T a_e scattered to nodes
            gta_e = (props.E * props.alpha)[:, None] * (a_e @ self.mats.C0)
            gta = np.zeros(self.grid.n_nodes)
            scatter_add(gta, self.enode, gta_e)
            eta = np.zeros(self.grid.n_nodes)
            eta[self.t_free] = thermal.solver.solve(gta[self.t_free])
            s_k = -np.einsum("ei,ij,ej->e", eta[self.enode], self.mats.KT0, T[self.enode])
            grad = grad + s_k[:, None] * props.dkappa
        return grad

    def evaluate(self, props: ElementProps):
        thermal = self.solve_thermal(props.kappa)
        f_th = self.thermal_force(props.E, props.alpha, thermal.T) if self.thermal_active else None
        struct = self.solve_structural(props.E, f_th)
        return thermal, struct


def assemble_and_solve_thermal(grid, bcs, kappa, solver="direct") -> ThermalSolution:
    return ThermoElasticModel(grid, bcs, solver=solver).solve_thermal(np.asarray(kappa, float))


def thermal_force(grid, props: ElementProps, T, T0=0.0, nu=0.3) -> np.ndarray:
    model = ThermoElasticModel(grid, BoundaryConditions.empty(grid), nu=nu, T0=T0)
    return model.thermal_force(props.E, props.alpha, np.asarray(T, float))


def assemble_and_solve_structural(grid, bcs, props: ElementProps, f_th=None, nu=0.3,
                                  solver="direct") -> StructuralSolution:
    return ThermoElasticModel(grid, bcs, nu=nu, solver=solver).solve_structural(props.E, f_th)
