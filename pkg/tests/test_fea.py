import numpy as np
import pytest
import sympy as sym

from cgaopt.errors import IllPosedProblem
from cgaopt.fea import (ElementProps, GAUSS_2, ThermoElasticModel, assemble_and_solve_structural,
                        assemble_and_solve_thermal, element_props, strain_displacement, thermal_force)
from cgaopt.materials import LinearSingleMaterial, PropertyAnchor, fit_rbf
from cgaopt.mesh import BoundaryConditions, Grid2D, RegionSpec, build_grid, select_nodes, tributary_weights

NU = 0.3


def uniform_props(n, E=1.0, kappa=1.0, alpha=0.0, S=1):
    z = np.zeros((n, S))
    full = lambda v: np.full(n, float(v))
    return ElementProps(full(E), full(kappa), full(alpha), full(1.0), z, z, z, z)


def sympy_unit_square(nu):
    """Exact element integrals on the unit square: stiffness (E=1) and thermal load (E*alpha*dT=1)."""
    x, y = sym.symbols("x y")
    N = [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y]
    B = sym.zeros(3, 8)
    for i, Ni in enumerate(N):
        B[0, 2 * i] = sym.diff(Ni, x)
        B[1, 2 * i + 1] = sym.diff(Ni, y)
        B[2, 2 * i] = sym.diff(Ni, y)
        B[2, 2 * i + 1] = sym.diff(Ni, x)
    nu = sym.Rational(nu).limit_denominator(1000)
    D = 1 / (1 - nu**2) * sym.Matrix([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    K = (B.T * D * B).applyfunc(lambda e: sym.integrate(e, (x, 0, 1), (y, 0, 1)))
    f = (B.T * D * sym.Matrix([1, 1, 0])).applyfunc(lambda e: sym.integrate(e, (x, 0, 1), (y, 0, 1)))
    return np.array(K, dtype=float), np.array(f, dtype=float).ravel()


@pytest.fixture(scope="module")
def exact_unit():
    return sympy_unit_square(NU)


# -- thermal ---------------------------------------------------------------

def strip(n):
    g = build_grid(n, 1, float(n), 1.0)
    bc = BoundaryConditions.empty(g)
    bc.fix_temperature(select_nodes(g, RegionSpec(0, 0, 0, 1)), 0.0)
    bc.fix_temperature(select_nodes(g, RegionSpec(n, n, 0, 1)), 1.0)
    return g, bc


def test_conduction_strip_is_linear():
    n = 7
    g, bc = strip(n)
    sol = assemble_and_solve_thermal(g, bc, np.full(g.n_elem, 2.5))
    expected = g.nodes[:, 0] / n
    assert np.abs(sol.T - expected).max() < 1e-10


def test_constant_boundary_temperature():
    g = build_grid(4, 3, 2, 1)
    bc = BoundaryConditions.empty(g)
    x, y = g.nodes.T
    boundary = np.flatnonzero((x == 0) | (x == 2) | (y == 0) | (y == 1))
    bc.fix_temperature(boundary, 3.7)
    sol = assemble_and_solve_thermal(g, bc, np.random.default_rng(0).uniform(0.5, 2, g.n_elem))
    assert np.allclose(sol.T, 3.7, atol=1e-12)


def test_doubling_conductivity_halves_deviation():
    g = build_grid(5, 3, 2, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix_temperature(select_nodes(g, RegionSpec(0, 0, 0, 1)), 1.0)
    right = select_nodes(g, RegionSpec(2, 2, 0, 1))
    bc.add_heat(right, 0.8, tributary_weights(g, right))
    bc.heat_source = 0.3
    kappa = np.random.default_rng(1).uniform(0.5, 2, g.n_elem)
    T1 = assemble_and_solve_thermal(g, bc, kappa).T
    T2 = assemble_and_solve_thermal(g, bc, 2 * kappa).T
    assert np.allclose(T2 - 1.0, (T1 - 1.0) / 2, atol=1e-12)


def test_thermal_without_dirichlet_is_ill_posed():
    g = build_grid(2, 2, 1, 1)
    bc = BoundaryConditions.empty(g)
    bc.add_heat([0], 1.0)
    with pytest.raises(IllPosedProblem):
        assemble_and_solve_thermal(g, bc, np.ones(g.n_elem))


# -- thermal load ----------------------------------------------------------

def test_thermal_force_zero_cases():
    g = build_grid(3, 2, 3, 2)
    rng = np.random.default_rng(0)
    assert np.all(thermal_force(g, uniform_props(g.n_elem, alpha=0.7), np.full(g.n_nodes, 1.5), T0=1.5) == 0)
    assert np.all(thermal_force(g, uniform_props(g.n_elem, alpha=0.0), rng.uniform(size=g.n_nodes)) == 0)


def test_thermal_force_single_element_symbolic(exact_unit):
    _, f_exact = exact_unit
    g = build_grid(1, 1, 1, 1)
    dT = 2.0
    f = thermal_force(g, uniform_props(1, E=1.0, alpha=1.0), np.full(4, dT), T0=0.0, nu=NU)
    # element nodes in the symbolic oracle are CCW from the origin = grid connectivity order
    f_elem = f[g.element_dofs()[0]]
    assert np.allclose(f_elem, dT * f_exact, rtol=1e-12, atol=1e-14)


# -- structural ------------------------------------------------------------

def cantilever_2x1():
    g = build_grid(2, 1, 2, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix(select_nodes(g, RegionSpec(0, 0, 0, 1)), "xy")
    bc.add_force(select_nodes(g, RegionSpec(2, 2, 1, 1)), (0.0, -1.0))
    return g, bc


def test_no_load_no_displacement():
    g, bc = cantilever_2x1()
    bc.forces[:] = 0
    s = assemble_and_solve_structural(g, bc, uniform_props(g.n_elem))
    assert np.all(s.u == 0) and s.J == 0


def test_compliance_quadratic_in_load():
    g, bc = cantilever_2x1()
    J1 = assemble_and_solve_structural(g, bc, uniform_props(g.n_elem)).J
    bc.forces *= 3.0
    J3 = assemble_and_solve_structural(g, bc, uniform_props(g.n_elem)).J
    assert J3 == pytest.approx(9 * J1, rel=1e-12)


def test_two_element_cantilever_dense_oracle(exact_unit):
    K_e, _ = exact_unit
    g, bc = cantilever_2x1()
    K = np.zeros((12, 12))
    for e in range(g.n_elem):
        d = g.element_dofs()[e]
        for a in range(8):
            for b in range(8):
                K[d[a], d[b]] += K_e[a, b]
    free = [i for i in range(12) if i not in bc.fixed_dofs]
    u = np.zeros(12)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], bc.forces[free])
    J_oracle = bc.forces @ u
    J = assemble_and_solve_structural(g, bc, uniform_props(g.n_elem), nu=NU).J
    assert abs(J - J_oracle) <= 1e-10 * abs(J_oracle)


def test_stiffness_symmetric():
    g, bc = cantilever_2x1()
    m = ThermoElasticModel(g, bc)
    assert np.allclose(m.mats.K0, m.mats.K0.T, atol=1e-14)
    assert np.allclose(m.mats.KT0, m.mats.KT0.T, atol=1e-14)
    A = m._k_ff.matrix(np.ones(g.n_elem)[:, None, None] * m.mats.K0).toarray()
    assert np.allclose(A, A.T) and np.linalg.eigvalsh(A).min() > 0


def test_insufficient_supports_are_ill_posed():
    g = build_grid(2, 1, 2, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix([0], "xy")
    bc.add_force([5], (0, -1))
    with pytest.raises(IllPosedProblem):
        assemble_and_solve_structural(g, bc, uniform_props(g.n_elem))


@pytest.mark.parametrize("n", [1, 2])
def test_patch_test_constant_strain(n):
    g = build_grid(n, n, 2.0, 2.0)
    a = np.array([0.01, -0.02])
    H = np.array([[0.003, -0.001], [0.002, 0.004]])
    affine = lambda xy: a + xy @ H.T
    x, y = g.nodes.T
    boundary = np.flatnonzero((x == 0) | (x == 2) | (y == 0) | (y == 2))
    bc = BoundaryConditions.empty(g)
    for node in boundary:
        bc.fix([node], "xy", affine(g.nodes[node]))
    s = assemble_and_solve_structural(g, bc, uniform_props(g.n_elem, E=2.0))
    exact = affine(g.nodes).ravel()
    assert np.abs(s.u - exact).max() < 1e-10
    eps_exact = np.array([H[0, 0], H[1, 1], H[0, 1] + H[1, 0]])
    for conn, dofs in zip(g.elements, g.element_dofs()):
        for xi in GAUSS_2:
            for eta in GAUSS_2:
                B = strain_displacement(g.nodes[conn], xi, eta)[0]
                assert np.abs(B @ s.u[dofs] - eps_exact).max() < 1e-10


def test_assembly_permutation_invariance():
    g, bc = cantilever_2x1()
    g = build_grid(4, 2, 2, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix(select_nodes(g, RegionSpec(0, 0, 0, 1)), "xy")
    bc.add_force(select_nodes(g, RegionSpec(2, 2, 0, 0)), (0.0, -1.0))
    rng = np.random.default_rng(0)
    E = rng.uniform(0.2, 1.5, g.n_elem)
    perm = rng.permutation(g.n_elem)
    gp = Grid2D(g.nx, g.ny, g.lx, g.ly, g.nodes, g.elements[perm])
    props = uniform_props(g.n_elem)
    J = ThermoElasticModel(g, bc).solve_structural(E).J
    Jp = ThermoElasticModel(gp, bc).solve_structural(E[perm]).J
    assert Jp == pytest.approx(J, rel=1e-12)


# -- sensitivities ---------------------------------------------------------

def binary_system():
    anchors = [PropertyAnchor((1.0, 0.0), 1.0, 1.0, 0.4, 0.3),
               PropertyAnchor((0.0, 1.0), 0.3, 0.2, 1.0, 1.0),
               PropertyAnchor((0.5, 0.5), 0.7, 0.55, 0.6, 0.5)]
    return fit_rbf(anchors, 1.0)


def thermo_problem():
    g = build_grid(4, 2, 2, 1)
    bc = BoundaryConditions.empty(g)
    left = select_nodes(g, RegionSpec(0, 0, 0, 1))
    bc.fix(left, "xy")
    bc.fix_temperature(left, 0.5)
    bc.add_force(select_nodes(g, RegionSpec(2, 2, 0, 0)), (0.3, -1.0))
    bc.heat_source = 2.0
    return g, bc


def compliance(model, material, rho):
    props = element_props(material, rho)
    _, s = model.evaluate(props)
    return s.J


def fd_sensitivity(model, material, rho, h=1e-6):
    fd = np.zeros_like(rho)
    for e in range(rho.shape[0]):
        for j in range(rho.shape[1]):
            rp, rm = rho.copy(), rho.copy()
            rp[e, j] += h
            rm[e, j] -= h
            fd[e, j] = (compliance(model, material, rp) - compliance(model, material, rm)) / (2 * h)
    return fd


def test_coupled_adjoint_matches_fd():
    g, bc = thermo_problem()
    model = ThermoElasticModel(g, bc, T0=-0.2)
    mat = binary_system()
    rho = np.random.default_rng(2).uniform(0.2, 0.8, size=(g.n_elem, 2))
    props = element_props(mat, rho)
    th, st = model.evaluate(props)
    assert np.ptp(th.T) > 0.1  # non-uniform temperature exercises the thermal adjoint
    an = model.sensitivity(props, th, st)
    fd = fd_sensitivity(model, mat, rho)
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-4


def test_adjoint_with_prescribed_displacement_matches_fd():
    g, bc = thermo_problem()
    bc.fix(select_nodes(g, RegionSpec(2, 2, 1, 1)), "x", (0.05, 0.0))
    model = ThermoElasticModel(g, bc)
    mat = binary_system()
    rho = np.random.default_rng(3).uniform(0.2, 0.8, size=(g.n_elem, 2))
    props = element_props(mat, rho)
    an = model.sensitivity(props, *model.evaluate(props))
    fd = fd_sensitivity(model, mat, rho)
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-4


def test_pure_mechanical_reduces_to_classical_compliance_sensitivity():
    g = build_grid(4, 2, 2, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix(select_nodes(g, RegionSpec(0, 0, 0, 1)), "xy")
    bc.add_force(select_nodes(g, RegionSpec(2, 2, 0.5, 0.5)), (0.0, -1.0))
    model = ThermoElasticModel(g, bc)
    mat = LinearSingleMaterial()
    rho = np.random.default_rng(4).uniform(0.3, 1.0, size=(g.n_elem, 1))
    props = element_props(mat, rho)
    th, st = model.evaluate(props)
    an = model.sensitivity(props, th, st)
    ue = st.u[model.edof]
    classical = -np.einsum("ei,ij,ej->e", ue, model.mats.K0, ue)
    assert np.allclose(an[:, 0], classical, rtol=1e-12)
    assert np.all(an <= 0)
    fd = fd_sensitivity(model, mat, rho)
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-4


def test_sensitivity_mirror_symmetry():
    g = build_grid(6, 2, 3, 1)
    bc = BoundaryConditions.empty(g)
    bc.fix(select_nodes(g, RegionSpec(0, 0, 0, 1)), "xy")
    bc.fix(select_nodes(g, RegionSpec(3, 3, 0, 1)), "xy")
    bc.add_force(select_nodes(g, RegionSpec(1.5, 1.5, 1, 1)), (0.0, -1.0))
    bc.fix_temperature(select_nodes(g, RegionSpec(0, 0, 0, 1)), 1.0)
    bc.fix_temperature(select_nodes(g, RegionSpec(3, 3, 0, 1)), 1.0)
    bc.heat_source = 1.0
    model = ThermoElasticModel(g, bc)
    mat = binary_system()
    rho = np.full((g.n_elem, 2), 0.5)
    props = element_props(mat, rho)
    sens = model.sensitivity(props, *model.evaluate(props)).reshape(g.ny, g.nx, 2)
    assert np.allclose(sens, sens[:, ::-1, :], rtol=1e-9, atol=1e-12)


def test_cg_solver_agrees_with_direct():
    g, bc = thermo_problem()
    mat = binary_system()
    rho = np.random.default_rng(5).uniform(0.2, 0.8, size=(g.n_elem, 2))
    props = element_props(mat, rho)
    J_direct = ThermoElasticModel(g, bc, solver="direct").evaluate(props)[1].J
    J_cg = ThermoElasticModel(g, bc, solver="cg").evaluate(props)[1].J
    assert J_cg == pytest.approx(J_direct, rel=1e-7)


def test_modulus_floor():
    props = element_props(LinearSingleMaterial(), np.array([[-0.5], [0.5]]), e_floor=1e-6)
    assert props.E[0] == 1e-6 and props.dE[0, 0] == 0
    assert props.E[1] == 0.5 and props.dE[1, 0] == 1.0
