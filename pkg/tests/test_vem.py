import numpy as np
import pytest
from hypothesis import given

from conftest import convex_polygons
from navem.assembly import NewtonTolerances, SolverError
from navem.geometry import boundary_quadrature, interior_quadrature
from navem.meshes import generate_mesh, mesh_family
from navem.problems import linear_problem
from navem.problems import test1 as variable_coefficients
from navem.problems import test3 as quasilinear
from navem.vem import assemble_vem, local_vem_matrices, projectors, solve_vem, solve_vem_newton, stabilization_matrix, vem_errors, vem_newton_system


def _linear(P, a=0.3, b=-1.2, c=0.5):
    return a * P.vertices[:, 0] + b * P.vertices[:, 1] + c, np.array([a, b])


@given(convex_polygons(3, 9))
def test_projectors_reproduce_linears(P):
    proj = projectors(P)
    v, g = _linear(P)
    np.testing.assert_allclose(proj.pi_nabla @ v, v, atol=1e-12 * (1 + np.abs(v).max()))
    np.testing.assert_allclose(proj.pi0_grad @ v, g, atol=1e-11)
    np.testing.assert_allclose(proj.gradient() @ v, g, atol=1e-11)
    np.testing.assert_allclose(proj.pi_nabla @ proj.pi_nabla, proj.pi_nabla, atol=1e-11)


@given(convex_polygons(3, 9))
def test_projector_orthogonality(P):
    """Gradient of the projection equals the mean gradient; boundary means agree."""
    proj = projectors(P)
    rng = np.random.default_rng(0)
    v = rng.normal(size=len(P))
    np.testing.assert_allclose(proj.gradient() @ v, proj.pi0_grad @ v, atol=1e-10 * np.abs(v).max() / P.diameter)
    # boundary mean of the piecewise-linear trace against that of the projection
    rule = boundary_quadrature(P, 2)
    proj_mean = rule.weights @ (proj.evaluate(rule.points) @ v) / P.perimeter
    assert proj_mean == pytest.approx(proj.boundary_weights @ v, abs=1e-12)
    assert proj.boundary_weights.sum() == pytest.approx(1.0)


@given(convex_polygons(3, 9))
def test_stabilization_kernel(P):
    proj = projectors(P)
    S = stabilization_matrix(proj)
    w = np.linalg.eigvalsh(S)
    assert w.min() > -1e-12
    assert np.sum(w > 1e-10) == len(P) - 3
    v, _ = _linear(P)
    np.testing.assert_allclose(S @ v, 0.0, atol=1e-11)


def test_local_matrices_consistency():
    mesh = generate_mesh("vm", seed=1, n_seeds=16)
    pb = linear_problem(D=[[2.0, 0.3], [0.3, 1.0]])
    for k in range(mesh.n_elements):
        P = mesh.polygon(k)
        loc = local_vem_matrices(P, pb)
        v, g = _linear(P)
        # a(v, w) = |E| grad v . D grad w for linear v
        w = np.random.default_rng(k).normal(size=len(P))
        expected = P.area * g @ np.array([[2.0, 0.3], [0.3, 1.0]]) @ (projectors(P).pi0_grad @ w)
        assert w @ loc.consistency @ v == pytest.approx(expected, rel=1e-10, abs=1e-13)
        np.testing.assert_allclose(loc.stabilization @ v, 0.0, atol=1e-11)
        np.testing.assert_allclose(loc.consistency, loc.consistency.T, atol=1e-14)
        assert loc.stabilization[0, 0] > 0
        np.testing.assert_allclose(loc.rhs, 0.0)
        np.testing.assert_allclose(loc.total, loc.consistency + loc.stabilization + loc.advection + loc.reaction)


@pytest.mark.parametrize("family,params", [("rdqm", {"n": 6}), ("vm", {"n_seeds": 40}), ("htm", {"n": 4})])
def test_patch_test(family, params):
    mesh = generate_mesh(family, seed=3, **params)
    pb = linear_problem(0.7, -0.4, 0.1, D=[[1.0, 0.5], [0.5, 2.0]])
    u = solve_vem(mesh, pb)
    np.testing.assert_allclose(u, pb.u(mesh.vertices), atol=1e-11)
    e0, e1 = vem_errors(mesh, u, pb.u, pb.grad)
    assert e0 < 1e-11 and e1 < 1e-11


def test_errors_of_exact_interpolant_are_small_for_linears(unit_square):
    mesh = generate_mesh("rdqm", seed=0, n=4)
    pb = linear_problem()
    e0, e1 = vem_errors(mesh, pb.u(mesh.vertices), pb.u, pb.grad)
    assert e0 < 1e-13 and e1 < 1e-13


@pytest.mark.parametrize("lam", [1.0, 0.1])
def test_newton_quadratic_convergence(lam):
    mesh = generate_mesh("rdqm", seed=0, n=8)
    res = solve_vem_newton(mesh, quasilinear(lam))
    assert res.converged and res.iterations <= 10
    r = np.array(res.residuals)
    # quadratic: once small, the residual roughly squares
    tail = r[1:][r[:-1] < 1e-2 * r[0]]
    prev = r[:-1][r[:-1] < 1e-2 * r[0]]
    assert np.all(tail <= 10 * prev**2 / r[0] + 1e-12)
    np.testing.assert_allclose(res.u[mesh.boundary], quasilinear(lam).u(mesh.vertices[mesh.boundary]), atol=1e-14)
    # restarting at the solution needs a single step
    again = solve_vem_newton(mesh, quasilinear(lam), u0=res.u)
    assert again.iterations == 1


def test_newton_jacobian_matches_finite_differences():
    mesh = generate_mesh("vm", seed=0, n_seeds=12)
    pb = quasilinear(0.5)
    rng = np.random.default_rng(0)
    u = rng.uniform(-0.3, 0.3, mesh.n_vertices)
    system = vem_newton_system(mesh, pb)
    r, J = system(u)
    d = rng.normal(size=u.size)
    eps = 1e-6
    fd = -(system(u + eps * d)[0] - system(u - eps * d)[0]) / (2 * eps)
    np.testing.assert_allclose(J @ d, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


def test_newton_failures():
    mesh = generate_mesh("rdqm", seed=0, n=4)
    with pytest.raises(ValueError):
        solve_vem_newton(mesh, linear_problem())
    with pytest.raises(SolverError):
        solve_vem_newton(mesh, quasilinear(0.1), tol=NewtonTolerances(max_iter=1))


def test_global_laplace_matrix_is_symmetric_with_constant_kernel():
    mesh = generate_mesh("vm", seed=3, n_seeds=30)
    A, _ = assemble_vem(mesh, linear_problem())
    A = A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12)
    assert np.abs(A.sum(axis=1)).max() < 1e-10
    # positive semi-definite with a one-dimensional kernel
    ev = np.linalg.eigvalsh(A)
    assert ev[0] > -1e-10 and ev[1] > 1e-6


def test_zero_solution_errors_are_solution_norms():
    mesh = generate_mesh("htm", seed=0, n=4)
    u = lambda p: p[:, 0] * p[:, 1]
    grad = lambda p: np.column_stack([p[:, 1], p[:, 0]])
    e0, e1 = vem_errors(mesh, np.zeros(mesh.n_vertices), u, grad)
    assert e0 == pytest.approx(np.sqrt(1 / 9), rel=1e-12)
    assert e1 == pytest.approx(np.sqrt(2 / 3), rel=1e-12)


def test_errors_decrease_under_refinement():
    pb = variable_coefficients()
    errs = []
    for mesh in mesh_family("rdqm", refinements=3):
        u = solve_vem(mesh, pb)
        errs.append(vem_errors(mesh, u, pb.u, pb.grad))
    e0, e1 = np.array(errs).T
    assert np.all(np.diff(e0) < 0) and np.all(np.diff(e1) < 0)
    # the coarsest mesh is pre-asymptotic; the finer pair shows the expected orders
    assert e0[1] / e0[2] > 3.0 and e1[1] / e1[2] > 1.6
