import numpy as np
import pytest

from navem import problems
from navem.problems import LAMBDAS, Nonlinearity, get_problem, linear_problem

ALL = [("test1", 1.0), ("test2", 1.0)] + [("test3", lam) for lam in LAMBDAS] + [("linear", 1.0)]


def _points(n=60, seed=0):
    return np.random.default_rng(seed).uniform(0.05, 0.95, (n, 2))


def _fd4(fun, pts, k, h):
    e = np.zeros(2)
    e[k] = h
    return (-fun(pts + 2 * e) + 8 * fun(pts + e) - 8 * fun(pts - e) + fun(pts - 2 * e)) / (12 * h)


@pytest.mark.parametrize("name,lam", ALL)
def test_gradient_matches_finite_differences(name, lam):
    pb = get_problem(name, lam)
    pts = _points()
    g = pb.grad(pts)
    for k in range(2):
        np.testing.assert_allclose(_fd4(pb.u, pts, k, 1e-3), g[:, k], atol=1e-6 * (1 + np.abs(g).max()))


@pytest.mark.parametrize("name,lam", ALL)
def test_forcing_satisfies_the_equation(name, lam):
    pb = get_problem(name, lam)
    pts = _points()

    def flux(k):
        return lambda p: np.einsum("nij,nj->ni", pb.D(p), pb.grad(p))[:, k]

    div = _fd4(flux(0), pts, 0, 1e-3) + _fd4(flux(1), pts, 1, 1e-3)
    residual = -div + np.einsum("ni,ni->n", pb.beta(pts), pb.grad(pts)) + pb.gamma(pts) * pb.u(pts) - pb.f(pts)
    scale = 1 + np.abs(pb.f(pts)).max()
    assert np.abs(residual).max() < 1e-6 * scale


def test_test1_coefficients():
    pb = problems.test1()
    p = np.array([[0.3, 0.6]])
    np.testing.assert_allclose(pb.D(p)[0], [[1.36, -0.18], [-0.18, 1.09]])
    np.testing.assert_allclose(pb.beta(p)[0], [0.3, -0.6])
    np.testing.assert_allclose(pb.gamma(p), [0.18])


def test_test2_tensor():
    K = problems.test2_tensor()
    w, V = np.linalg.eigh(K)
    np.testing.assert_allclose(w, [1e-6, 1.0], rtol=1e-9)
    np.testing.assert_allclose(np.abs(V[:, 1]), [np.cos(np.pi / 6), np.sin(np.pi / 6)], atol=1e-12)


def test_test3_boundary_and_nonlinearity():
    pb = problems.test3(0.5)
    assert pb.nonlinear == Nonlinearity(0.5)
    u = np.linspace(-0.4, 0.4, 9)
    fd = (pb.nonlinear.D(u + 1e-6) - pb.nonlinear.D(u - 1e-6)) / 2e-6
    np.testing.assert_allclose(pb.nonlinear.dD(u), fd, rtol=1e-7, atol=1e-9)
    pts = _points()
    np.testing.assert_allclose(pb.D(pts)[:, 0, 0], 1 / (0.5 + pb.u(pts) ** 2))


def test_linear_problem_and_lookup():
    pb = linear_problem(1.0, 2.0, 3.0)
    np.testing.assert_allclose(pb.u(np.array([[1.0, 1.0]])), [6.0])
    np.testing.assert_allclose(pb.g(np.array([[0.0, 0.0]])), [3.0])
    assert np.all(pb.f(_points()) == 0)
    with pytest.raises(ValueError):
        get_problem("test9")
