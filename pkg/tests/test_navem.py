import numpy as np
import pytest

from conftest import p1_stiffness, triangle_mesh
from navem.geometry import Polygon
from navem.meshes import Mesh, generate_mesh
from navem.navem import (
    MissingModelError,
    NetworkBasis,
    OracleBasis,
    assemble_navem,
    element_bundle,
    export_solution,
    hat_trace,
    interface_jump,
    local_navem_matrices,
    make_basis,
    mesh_bundles,
    navem_errors,
    solve_navem,
    solve_navem_newton,
)
from navem.network import ModelError, PredictorPair, glorot_init
from navem.problems import linear_problem
from navem.problems import test1 as variable_coefficients
from navem.problems import test3 as quasilinear


@pytest.fixture(scope="module")
def tri_mesh():
    return triangle_mesh(4, seed=2)


@pytest.fixture(scope="module")
def quad_mesh():
    return generate_mesh("rdqm", seed=0, n=4)


@pytest.fixture(scope="module")
def quad_bundles(quad_mesh):
    return mesh_bundles(quad_mesh, OracleBasis())


def test_hat_trace_values(unit_square):
    from navem.geometry import boundary_quadrature

    rule = boundary_quadrature(unit_square, 3)
    v, t = hat_trace(unit_square, 1, rule)
    on = (rule.edges == 0) | (rule.edges == 1)
    assert np.all(v[~on] == 0) and np.all(t[~on] == 0)
    np.testing.assert_allclose(v[rule.edges == 0], rule.param[rule.edges == 0])


@pytest.mark.parametrize("basis", [OracleBasis(), NetworkBasis({})])
def test_triangle_stiffness_matches_p1(tri_mesh, basis):
    A, _ = assemble_navem(tri_mesh, linear_problem(), mesh_bundles(tri_mesh, basis))
    np.testing.assert_allclose(A.toarray(), p1_stiffness(tri_mesh), atol=1e-9)


def test_anisotropic_triangle_stiffness(tri_mesh):
    D = np.array([[2.0, 0.4], [0.4, 0.5]])
    A, _ = assemble_navem(tri_mesh, linear_problem(D=D), mesh_bundles(tri_mesh, OracleBasis()))
    np.testing.assert_allclose(A.toarray(), p1_stiffness(tri_mesh, D), atol=1e-9)


def test_triangle_mesh_has_no_interface_jumps(tri_mesh):
    bundles = mesh_bundles(tri_mesh, OracleBasis())
    u = np.random.default_rng(0).normal(size=tri_mesh.n_vertices)
    jumps, total = interface_jump(tri_mesh, u, bundles)
    assert len(jumps) > 0 and total < 1e-9


def test_patch_test_on_triangles(tri_mesh):
    pb = linear_problem(0.4, -0.9, 0.3, D=[[1.5, 0.2], [0.2, 0.7]])
    bundles = mesh_bundles(tri_mesh, OracleBasis())
    u = solve_navem(tri_mesh, pb, bundles=bundles)
    np.testing.assert_allclose(u, pb.u(tri_mesh.vertices), atol=1e-9)
    e0, e1 = navem_errors(tri_mesh, u, pb.u, pb.grad, bundles=bundles)
    assert e0 < 1e-9 and e1 < 1e-9


# On general polygons each basis function is a boundary fit of its hat, so
# linears are reproduced only up to the fit accuracy, which is worst on
# Voronoi cells with very short edges.
@pytest.mark.parametrize("family,params,tol", [("rdqm", {"n": 4}, 1e-4), ("vm", {"n_seeds": 16}, 5e-3), ("htm", {"n": 2}, 1e-4)])
def test_patch_test_on_polygons(family, params, tol):
    mesh = generate_mesh(family, seed=1, **params)
    pb = linear_problem(0.4, -0.9, 0.3)
    bundles = mesh_bundles(mesh, OracleBasis())
    u = solve_navem(mesh, pb, bundles=bundles)
    assert np.abs(u - pb.u(mesh.vertices)).max() < tol
    e0, e1 = navem_errors(mesh, u, pb.u, pb.grad, bundles=bundles)
    assert e0 < tol and e1 < 10 * tol


def test_local_basis_properties(quad_bundles):
    for b in quad_bundles:
        # partition of unity and zero gradient sum, up to the fit accuracy
        np.testing.assert_allclose(b.phi.sum(1), 1.0, atol=1e-5)
        np.testing.assert_allclose(b.grad.sum(1), 0.0, atol=1e-3)
        assert set(b.provenance) == {"oracle"}
        A, rhs = local_navem_matrices(b, linear_problem())
        np.testing.assert_allclose(A.sum(1), 0.0, atol=1e-4)
        np.testing.assert_allclose(A, A.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(0.5 * (A + A.T))[1:] > 0)


def test_nodal_interpolation_property(quad_mesh, quad_bundles):
    """Each oracle basis function is close to the hat at the element vertices."""
    for k, b in enumerate(quad_bundles):
        P = quad_mesh.polygon(k)
        phi, _ = b.at(P.vertices)
        np.testing.assert_allclose(phi, np.eye(len(P)), atol=5e-4)


def test_oracle_options():
    P = Polygon([[0, 0], [1, 0], [1.2, 0.8], [0.1, 1.0]])
    f_t = OracleBasis(q_fit="tangential").local_function(P, 0)
    f_v = OracleBasis(q_fit="value").local_function(P, 0)
    np.testing.assert_array_equal(f_v.c_phi, f_v.c_q)
    assert not np.array_equal(f_t.c_phi, f_t.c_q)
    with pytest.raises(ValueError):
        OracleBasis(q_fit="both")


def test_missing_and_mismatched_models(quad_mesh):
    with pytest.raises(MissingModelError, match="nv4"):
        mesh_bundles(quad_mesh, NetworkBasis({}))
    bad = PredictorPair(glorot_init((6, 3, 10)), glorot_init((6, 3, 10)), "nv4")
    with pytest.raises(ModelError):
        mesh_bundles(quad_mesh, NetworkBasis({"nv4": bad}))
    with pytest.raises(MissingModelError):
        make_basis("network")
    with pytest.raises(ValueError):
        make_basis("fem")


def test_network_basis_evaluates_network(quad_mesh):
    net = glorot_init((6, 4, 44), 0)
    basis = NetworkBasis({"nv4": PredictorPair(net, net.copy(), "nv4")})
    b = element_bundle(quad_mesh.polygon(0), quad_mesh.elements[0], basis)
    assert set(b.provenance) == {"network"}
    assert np.all(np.isfinite(b.phi))


def test_variable_coefficient_solve_is_accurate(quad_mesh, quad_bundles):
    pb = variable_coefficients()
    u = solve_navem(quad_mesh, pb, bundles=quad_bundles)
    e0, e1 = navem_errors(quad_mesh, u, pb.u, pb.grad, bundles=quad_bundles)
    assert e0 < 0.5 and e1 < 5.0


def test_newton_converges(quad_mesh, quad_bundles):
    pb = quasilinear(0.5)
    res = solve_navem_newton(quad_mesh, pb, bundles=quad_bundles)
    assert res.converged and res.iterations <= 20
    with pytest.raises(ValueError):
        solve_navem_newton(quad_mesh, linear_problem(), bundles=quad_bundles)


def test_export(tmp_path, quad_mesh, quad_bundles):
    u = np.arange(quad_mesh.n_vertices, dtype=float)
    path = tmp_path / "sol.txt"
    export_solution(path, quad_mesh, u, quad_bundles)
    lines = path.read_text().splitlines()
    assert lines[0] == "navem-solution v1"
    assert lines[1] == f"vertices {quad_mesh.n_vertices}"
    n_samples = int(lines[2 + quad_mesh.n_vertices].split()[1])
    assert len(lines) == 3 + quad_mesh.n_vertices + n_samples
    np.testing.assert_allclose(float(lines[2].split()[2]), 0.0)


def test_zero_solution_errors_are_solution_norms():
    mesh = generate_mesh("rdqm", seed=1, n=3)
    u = lambda p: p[:, 0] * p[:, 1]
    grad = lambda p: np.column_stack([p[:, 1], p[:, 0]])
    e0, e1 = navem_errors(mesh, np.zeros(mesh.n_vertices), u, grad)
    # unit square: int (xy)^2 = 1/9, int x^2 + y^2 = 2/3
    assert e0 == pytest.approx(np.sqrt(1 / 9), rel=1e-12)
    assert e1 == pytest.approx(np.sqrt(2 / 3), rel=1e-12)


def test_single_element_has_no_interfaces():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [[0, 1, 2, 3]])
    bundles = mesh_bundles(mesh, OracleBasis())
    jumps, total = interface_jump(mesh, np.arange(4.0), bundles)
    assert jumps == {} and total == 0.0


@pytest.mark.parametrize("angle,scale,shift", [(0.7, 1.0, (0.0, 0.0)), (-2.1, 0.3, (5.0, -1.0)), (3.0, 4.0, (-2.0, 2.0))])
def test_network_basis_is_similarity_covariant(angle, scale, shift):
    """A random network gives the same function on a rotated, scaled, shifted polygon."""
    rng = np.random.default_rng(4)
    P = Polygon(np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 6)[:-1] + rng.uniform(0, 0.3, 5)), 0.7 * np.sin(np.linspace(0, 2 * np.pi, 6)[:-1])]))
    R = scale * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    Q = Polygon(P.vertices @ R.T + shift)
    net = glorot_init((8, 6, 44), 1)
    basis = NetworkBasis({"nv5": PredictorPair(net, glorot_init((8, 6, 44), 2), "nv5")})
    pts = rng.dirichlet(np.ones(5), 20) @ P.vertices
    for j in range(5):
        phi_p, g_p = basis.local_function(P, j).evaluate(pts)
        phi_q, g_q = basis.local_function(Q, j).evaluate(pts @ R.T + shift)
        tol = 1e-9 * np.abs(phi_p).max()
        np.testing.assert_allclose(phi_q, phi_p, atol=tol)
        # gradients transform with the inverse transpose of the linear part
        np.testing.assert_allclose(g_q, g_p @ np.linalg.inv(R), atol=1e-9 * np.abs(g_p).max() / scale)
