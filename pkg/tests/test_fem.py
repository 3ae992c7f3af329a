import numpy as np
import pytest
import sympy as sym
from hypothesis import given, strategies as st

from goaladapt import cases, fem, geometry
from goaladapt.mesh import refine_uniform

from conftest import random_mesh


def flagged(mesh, **flags):
    return mesh.replace(**{k: np.full(mesh.n_cells, v) for k, v in flags.items()})


@pytest.mark.parametrize("mesh, k, n", [
    (geometry.reference_triangle(), 1, 6),
    (geometry.reference_triangle(), 2, 12),
    (geometry.two_triangle_square(), 2, 18),
    (geometry.two_triangle_square(), 3, 32),
])
def test_dof_counts(mesh, k, n):
    assert fem.build_space(mesh, k).ndofs == n


def test_dof_count_matches_node_enumeration():
    m = random_mesh(4)
    for k in (1, 2, 3):
        sp = fem.build_space(m, k)
        pts = np.round(sp.map_points(sp.element.nodes).reshape(-1, 2), 12)
        assert 2 * len(np.unique(pts, axis=0)) == sp.ndofs


def test_unsupported_degree():
    with pytest.raises(ValueError):
        fem.build_space(geometry.reference_triangle(), 5)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_continuity_shared_nodes(k):
    m = random_mesh(5)
    sp = fem.build_space(m, k)
    np.testing.assert_allclose(sp.node_coordinates[sp.cell_nodes], sp.map_points(sp.element.nodes), atol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dirichlet_dofs_are_boundary_nodes(k):
    m = geometry.unit_square(3).with_boundary_tags(lambda mid: mid[:, 1] < 1e-12)
    sp = fem.build_space(m, k)
    on = np.nonzero(np.abs(sp.node_coordinates[:, 1]) < 1e-12)[0]
    np.testing.assert_array_equal(sp.dirichlet_nodes, on)


def test_lame_values():
    lam, mu = fem.lame(0.6, 0.4)
    assert lam == pytest.approx(6 / 7, rel=1e-14)
    assert mu == pytest.approx(3 / 14, rel=1e-14)
    assert fem.lame(1.0, 0.25) == pytest.approx((0.4, 0.4), rel=1e-14)


@pytest.mark.parametrize("nu", [0.5, 0.7, -0.1])
def test_material_rejects_poisson_ratio(nu):
    with pytest.raises(ValueError):
        fem.MaterialField.uniform(1.0, nu)


def test_p1_element_matrix_oracle():
    # constant-strain triangle in Voigt notation: K = area * B^T D B
    lam = mu = 0.4
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    B = np.zeros((3, 6))
    for i, (gx, gy) in enumerate(grads):
        B[:, 2 * i:2 * i + 2] = [[gx, 0], [0, gy], [gy, gx]]
    K_oracle = 0.5 * B.T @ D @ B
    sp = fem.build_space(geometry.reference_triangle(), 1)
    K = fem.assemble_stiffness(sp, fem.MaterialField.uniform(1.0, 0.25)).toarray()
    np.testing.assert_allclose(K, K_oracle, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_stiffness_symmetric_with_rigid_kernel(k):
    m = random_mesh(6, n_pts=6)
    sp = fem.build_space(m, k)
    A = fem.assemble_stiffness(sp, fem.MaterialField.uniform(2.0, 0.3))
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    x, y = sp.node_coordinates.T
    for mode in (np.column_stack([np.ones_like(x), 0 * x]), np.column_stack([0 * x, np.ones_like(x)]),
                 np.column_stack([-y, x])):
        v = mode.ravel()
        assert np.abs(A @ v).max() <= 1e-10 * abs(A).max() * np.abs(v).max()
    if k <= 2:
        ev = np.linalg.eigvalsh(A.toarray())
        assert np.sum(ev < 1e-10 * ev.max()) == 3
        assert ev.min() > -1e-10 * ev.max()


def test_zero_loads_give_zero_vector():
    m = flagged(geometry.unit_square(2), in_active=True)
    sp = fem.build_space(m, 2)
    for act in (fem.ActivationSpec(T=1.0, beta=0.0), fem.ActivationSpec(T=0.0, beta=1.0)):
        assert not np.any(fem.assemble_load(sp, act=act))


def test_beta_zero_bitwise_equal_to_no_activation():
    case = cases.case_manufactured_square()
    m = flagged(case.mesh, in_active=True)
    sp = fem.build_space(m, 2)
    b0 = fem.assemble_load(sp, case.body_force)
    b1 = fem.assemble_load(sp, case.body_force, act=fem.ActivationSpec(T=3.0, beta=0.0))
    assert b0.tobytes() == b1.tobytes()


def test_active_load_single_triangle():
    m = flagged(geometry.reference_triangle(), in_active=True)
    sp = fem.build_space(m, 1)
    b = fem.assemble_load(sp, act=fem.ActivationSpec(T=1.0, beta=1.0))
    np.testing.assert_allclose(b[0::2], [0.5, -0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(b[1::2], 0.0, atol=1e-15)


def test_solve_zero_rhs():
    sp = fem.build_space(geometry.unit_square(2), 2)
    A = fem.assemble_stiffness(sp, fem.MaterialField.uniform(1.0, 0.3))
    u = fem.solve_system(A, np.zeros(sp.ndofs), sp)
    assert not np.any(u.coeffs)


def test_solve_requires_dirichlet():
    m = geometry.unit_square(2).with_boundary_tags(lambda mid: np.zeros(len(mid), bool))
    sp = fem.build_space(m, 1)
    A = fem.assemble_stiffness(sp, fem.MaterialField.uniform(1.0, 0.3))
    with pytest.raises(fem.SolverError):
        fem.solve_system(A, np.ones(sp.ndofs), sp)


@pytest.mark.parametrize("k", [1, 2])
def test_patch_reproduced(k):
    case = cases.case_patch()
    sp = fem.build_space(case.mesh, k)
    A = fem.assemble_stiffness(sp, case.material)
    b = fem.assemble_load(sp, traction=case.traction)
    u = fem.solve_system(A, b, sp)
    np.testing.assert_allclose(u.nodal_values, case.exact_solution(sp.node_coordinates), atol=1e-10)
    assert not np.any(u.coeffs[sp.dirichlet_dofs])


def _linear_field(space, fn):
    return fem.interpolate_function(space, fn)


def test_stress_examples():
    m = geometry.two_triangle_square().replace(in_active=np.array([True, False]))
    sp = fem.build_space(m, 2)
    mat = fem.MaterialField.uniform(1.0, 0.25)
    zero = fem.FeField(sp, np.zeros(sp.ndofs))
    act = fem.ActivationSpec(T=2e-5, beta=1.0, fibers=fem.FiberField("constant", direction=(0.0, 1.0)))
    c1 = m.centroids[1]
    c0 = m.centroids[0]
    np.testing.assert_array_equal(fem.stress(zero, mat, act, 1, c1), np.zeros((2, 2)))
    np.testing.assert_allclose(fem.stress(zero, mat, act, 0, c0), 2e-5 * np.array([[0, 0], [0, 1]]), atol=1e-20)
    u = _linear_field(sp, lambda xy: xy.copy())
    np.testing.assert_allclose(fem.stress(u, mat, None, 1, c1), 1.6 * np.eye(2), atol=1e-13)
    with pytest.raises(ValueError, match="outside"):
        fem.stress(u, mat, None, 1, (5.0, 5.0))


def test_qoi_examples():
    m = geometry.unit_square(4)
    c = m.centroids
    inside = (np.abs(c[:, 0] - 0.5) < 0.25) & (np.abs(c[:, 1] - 0.5) < 0.25)
    m = m.replace(in_interest=inside)
    sp = fem.build_space(m, 2)
    J1, J2 = fem.QoISpec("J1"), fem.QoISpec("J2")
    assert fem.qoi_value(J1, fem.FeField(sp, np.zeros(sp.ndofs))) == 0.0
    assert fem.qoi_value(J1, _linear_field(sp, lambda xy: np.ones_like(xy))) == pytest.approx(0.5, rel=1e-14)
    assert fem.qoi_value(J2, _linear_field(sp, lambda xy: xy.copy())) == pytest.approx(0.5, rel=1e-14)


def test_qoi_load_vector_p1_triangle():
    m = flagged(geometry.reference_triangle(), in_interest=True)
    j = fem.qoi_load_vector(fem.QoISpec("J1"), fem.build_space(m, 1))
    np.testing.assert_allclose(j, 1 / 6, rtol=1e-14)


def test_qoi_load_vector_outside_cells_contribute_nothing():
    m = geometry.two_triangle_square().replace(in_interest=np.array([True, False]))
    sp = fem.build_space(m, 1)
    j = fem.qoi_load_vector(fem.QoISpec("J1"), sp)
    assert np.all(j.reshape(-1, 2)[3] == 0)      # vertex 3 belongs to cell 1 only


@given(seed=st.integers(0, 2**31), k=st.sampled_from([1, 2, 3]), variant=st.sampled_from(["J1", "J2"]))
def test_qoi_duality(seed, k, variant):
    rng = np.random.default_rng(seed)
    m = random_mesh(seed % 5, n_pts=5)
    m = m.replace(in_interest=rng.random(m.n_cells) < 0.6)
    sp = fem.build_space(m, k)
    q = fem.QoISpec(variant, scale=float(rng.uniform(0.5, 2)))
    v = fem.FeField(sp, rng.standard_normal(sp.ndofs))
    direct = fem.qoi_value(q, v)
    j = fem.qoi_load_vector(q, sp)
    assert j @ v.coeffs == pytest.approx(direct, rel=1e-12, abs=1e-12 * np.abs(j).sum())


def test_interpolate_down_examples():
    m = random_mesh(7, n_pts=8)
    P2, P3 = fem.build_space(m, 2), fem.build_space(m, 3)
    sq = fem.interpolate_function(P3, lambda xy: np.column_stack([xy[:, 0] ** 2, xy[:, 0] * xy[:, 1]]))
    down = fem.interpolate_down(sq, P2)
    np.testing.assert_allclose(down.nodal_values[:, 0], P2.node_coordinates[:, 0] ** 2, atol=1e-14)
    rng = np.random.default_rng(1)
    v = fem.FeField(P2, rng.standard_normal(P2.ndofs))
    np.testing.assert_allclose(fem.interpolate_down(fem.embed(v, P3), P2).coeffs, v.coeffs, atol=1e-12)
    assert not np.any(fem.interpolate_down(fem.FeField(P3, np.zeros(P3.ndofs)), P2).coeffs)
    with pytest.raises(ValueError):
        fem.interpolate_down(v, P3)


def test_interpolate_down_preserves_dirichlet_zeros():
    case = cases.case_manufactured_square()
    P2, P3 = fem.build_space(case.mesh, 2), fem.build_space(case.mesh, 3)
    z = fem.solve_system(fem.assemble_stiffness(P3, case.material), fem.qoi_load_vector(fem.QoISpec("J1"), P3), P3)
    assert not np.any(fem.interpolate_down(z, P2).coeffs[P2.dirichlet_dofs])


def test_manufactured_body_force_symbolic():
    x, y = sym.symbols("x y")
    E, nu = cases.MANUFACTURED_E, cases.MANUFACTURED_NU
    lam, mu = E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))
    u = [sym.sin(sym.pi * x) * sym.sin(sym.pi * y), x * (1 - x) * y * (1 - y)]
    X = [x, y]
    eps = [[(sym.diff(u[i], X[j]) + sym.diff(u[j], X[i])) / 2 for j in range(2)] for i in range(2)]
    tr = eps[0][0] + eps[1][1]
    sig = [[lam * tr * int(i == j) + 2 * mu * eps[i][j] for j in range(2)] for i in range(2)]
    f = [-(sym.diff(sig[i][0], x) + sym.diff(sig[i][1], y)) for i in range(2)]
    fn = sym.lambdify((x, y), f, "numpy")
    pts = np.random.default_rng(0).random((50, 2))
    ref = np.column_stack([np.broadcast_to(c, 50) for c in fn(pts[:, 0], pts[:, 1])])
    np.testing.assert_allclose(cases.manufactured_body_force()(pts), ref, rtol=1e-12, atol=1e-12)


def test_manufactured_energy_error_decreases():
    case = cases.case_manufactured_square()
    errs = []
    mesh = case.mesh
    for _ in range(3):
        c = case.with_mesh(mesh)
        sp = fem.build_space(mesh, 2)
        u = fem.solve_system(fem.assemble_stiffness(sp, c.material), fem.assemble_load(sp, c.body_force), sp)
        ui = fem.interpolate_function(fem.build_space(mesh, 4), case.exact_solution)
        e = fem.FeField(ui.space, ui.coeffs - fem.embed(u, ui.space).coeffs)
        A4 = fem.assemble_stiffness(ui.space, c.material)
        errs.append(np.sqrt(e.coeffs @ (A4 @ e.coeffs)))
        mesh = refine_uniform(mesh, 1)
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.7)


def test_galerkin_orthogonality_manufactured():
    case = cases.case_manufactured_square()
    sp = fem.build_space(case.mesh, 2)
    A = fem.assemble_stiffness(sp, case.material)
    b = fem.assemble_load(sp, case.body_force)
    u = fem.solve_system(A, b, sp)
    r = (b - A @ u.coeffs)[sp.free_dofs]
    scale = abs(A).sum(1).max() * np.abs(u.coeffs).max() + np.abs(b).max()
    assert np.abs(r).max() <= 1e-12 * scale
    assert u.residual <= 1e-12


def test_field_rejects_wrong_length():
    sp = fem.build_space(geometry.reference_triangle(), 1)
    with pytest.raises(ValueError):
        fem.FeField(sp, np.zeros(5))
