import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import convex_polygons, ellipse_polygon
from navem.encoding import encode
from navem.geometry import Polygon, boundary_quadrature, interior_quadrature
from navem.harmonic import (
    BASIS_HEADER,
    build_approx_space,
    build_phi,
    default_basis,
    default_phi,
    eval_scaled_harmonics,
    exterior_bisector,
    lattice_points,
    lsq_fit,
    map_phi_to_vertex,
    orthonormalize_basis,
    phi_poles,
    read_basis,
    tent_data,
    write_basis,
)
from navem.navem import hat_trace


def fd_gradient(f, pts, step):
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    gx = (f(pts + ex) - f(pts - ex)) / (2 * step)
    gy = (f(pts + ey) - f(pts - ey)) / (2 * step)
    return gx, gy


def fd_laplacian(f, pts, step):
    """Fourth-order central differences in each direction."""
    out = -60 * f(pts)
    for e in (np.array([step, 0.0]), np.array([0.0, step])):
        out = out + 16 * (f(pts + e) + f(pts - e)) - (f(pts + 2 * e) + f(pts - 2 * e))
    return out / (12 * step**2)


def test_scaled_harmonics_first_degree():
    h = 3.0
    V, _, _ = eval_scaled_harmonics(1, h, np.array([[h, h]]))
    # (1 + i)^1 = 1 + i
    np.testing.assert_allclose(V[0], [1.0, 1.0, 1.0], atol=1e-15)
    assert eval_scaled_harmonics(20, h, np.zeros((1, 2)))[0].shape == (1, 41)


def test_scaled_harmonics_match_complex_powers(rng):
    pts = rng.uniform(-2, 2, (20, 2))
    z = (pts[:, 0] + 1j * pts[:, 1]) / 1.7
    V, _, _ = eval_scaled_harmonics(6, 1.7, pts)
    for l in range(1, 7):
        np.testing.assert_allclose(V[:, 2 * l - 1], (z**l).real, atol=1e-12)
        np.testing.assert_allclose(V[:, 2 * l], (z**l).imag, atol=1e-12)


def test_scaled_harmonics_gradients_fd(rng):
    pts = rng.uniform(-1, 1, (100, 2))
    _, Vx, Vy = eval_scaled_harmonics(10, 3.0, pts)
    f = lambda p: eval_scaled_harmonics(10, 3.0, p)[0]
    gx, gy = fd_gradient(f, pts, 1e-5)
    scale = np.abs(Vx).max() + np.abs(Vy).max()
    assert np.abs(gx - Vx).max() < 1e-7 * scale
    assert np.abs(gy - Vy).max() < 1e-7 * scale


def test_orthonormal_basis_degree_zero():
    b = orthonormalize_basis(0, 3.0, 10)
    np.testing.assert_allclose(b.coef, [[1.0]], atol=1e-15)


def test_orthonormal_basis_gram_is_identity():
    b = default_basis()
    pts = lattice_points(b.h_ref, 50)
    V = b.evaluate(pts)[0]
    G = V.T @ V / len(pts)
    assert np.abs(G - np.eye(b.dim)).max() < 1e-10
    np.testing.assert_allclose(V[:, 0], V[0, 0], atol=1e-14)
    assert np.allclose(np.triu(b.R), b.R)


def test_orthonormal_basis_spans_monomials(rng):
    b = default_basis()
    pts = lattice_points(b.h_ref, 50)
    z = (pts[:, 0] + 1j * pts[:, 1]) / b.h_ref
    target = (z**5).real
    V = b.evaluate(pts)[0]
    c = np.linalg.lstsq(V, target, rcond=None)[0]
    assert np.abs(V @ c - target).max() < 1e-12


def test_orthonormalize_rejects_coarse_lattice():
    with pytest.raises(ValueError):
        orthonormalize_basis(20, 3.0, 5)


def test_phi_pole_layout():
    z, d = phi_poles(50)
    assert z[-1] == pytest.approx(3.0, abs=1e-15)
    assert d[-1] == pytest.approx(2.0, abs=1e-15)
    assert np.all(z > 1.0)
    assert np.all(np.diff(z) > 0)


def test_phi_fit_matches_tent():
    phi = default_phi()
    assert phi.n1 == 50 and phi.n2 == 25
    # fresh uniform sampling, independent of the fit points
    t = np.linspace(-1, 1, 4001)
    sides = [np.column_stack([np.ones_like(t), t]), np.column_stack([t, np.ones_like(t)]), np.column_stack([t, -np.ones_like(t)]), np.column_stack([-np.ones_like(t), t])]
    pts = np.vstack(sides)
    assert np.abs(phi(pts) - tent_data(pts)).max() <= 1e-4
    np.testing.assert_allclose(phi(np.array([[-1.0, 0.0], [1.0, 0.0]])), [0.0, 1.0], atol=1e-8)


def test_phi_fit_improves_with_poles():
    r = [build_phi(n1, 10, 150).residual for n1 in (10, 20, 40)]
    assert r[0] > r[1] > r[2]


def test_exterior_bisector_of_square_corner(unit_square):
    np.testing.assert_allclose(exterior_bisector(unit_square, 2), [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-15)


def test_exterior_bisector_at_hanging_node():
    P = Polygon([[0, 0], [1, 0], [1, 0.5], [1, 1], [0, 1]], [0, 0, 1, 0, 0])
    np.testing.assert_allclose(exterior_bisector(P, 2), [1.0, 0.0], atol=1e-15)


@given(convex_polygons())
def test_mapped_phi_contains_polygon(P):
    Q = encode(P, 0).frame_polygon
    for i in range(len(Q)):
        m = map_phi_to_vertex(Q, i, default_phi())
        np.testing.assert_allclose(m.to_reference(Q.vertices[i]), [[1.0, 0.0]], atol=1e-12)
        assert np.all(np.abs(m.to_reference(Q.vertices)) <= 1 + 1e-10)


def space_points(rng, P, n=50):
    """Random points well inside ``P`` (convex combinations shrunk toward the centroid)."""
    w = rng.dirichlet(np.ones(len(P)), n)
    c = P.centroid
    return c + 0.8 * (w @ P.vertices - c)


def test_space_dimension(rng):
    P = encode(ellipse_polygon(rng, 5), 0).frame_polygon
    space = build_approx_space(P, 0)
    assert space.dim == 44
    assert len(space.phis) == 3


def test_space_members_are_harmonic_and_gradients_match(rng):
    P = encode(ellipse_polygon(rng, 6), 2).frame_polygon
    space = build_approx_space(P, 0)
    pts = space_points(rng, P)
    blk = space.vandermonde(pts)
    h = P.diameter
    f = lambda p: space.vandermonde(p).V
    lap = fd_laplacian(f, pts, 1e-2 * h)
    mx = np.abs(blk.V).max(axis=0)
    assert np.all(np.abs(lap).max(axis=0) < 1e-5 * mx / h**2)
    gx, gy = fd_gradient(f, pts, 1e-6 * h)
    gscale = np.maximum(np.abs(blk.Vx).max(0) + np.abs(blk.Vy).max(0), 1e-300)
    assert np.all(np.abs(gx - blk.Vx).max(0) <= 1e-6 * gscale + 1e-9 * mx / h)
    assert np.all(np.abs(gy - blk.Vy).max(0) <= 1e-6 * gscale + 1e-9 * mx / h)


def test_constant_member_has_zero_gradient(rng):
    P = encode(ellipse_polygon(rng, 4), 0).frame_polygon
    blk = build_approx_space(P, 0).vandermonde(space_points(rng, P))
    np.testing.assert_allclose(blk.V[:, 0], blk.V[0, 0], atol=1e-14)
    assert np.abs(blk.Vx[:, 0]).max() == 0 and np.abs(blk.Vy[:, 0]).max() == 0


def test_lsq_fit_recovers_member(rng):
    P = encode(ellipse_polygon(rng, 5), 1).frame_polygon
    space = build_approx_space(P, 0)
    rule = boundary_quadrature(P, 16)
    blk = space.vandermonde(rule.points)
    target = blk.V[:, 7]
    fit = lsq_fit(blk, rule, values=target)
    assert fit.residual < 1e-12
    pts = space_points(rng, P)
    inner = space.vandermonde(pts)
    np.testing.assert_allclose(inner.V @ fit.coefficients, inner.V[:, 7], atol=1e-9)


def test_lsq_fit_triangle_hat_is_exact(rng):
    P = ellipse_polygon(rng, 3)
    Q = encode(P, 0).frame_polygon
    space = build_approx_space(Q, 0)
    rule = boundary_quadrature(Q, 16)
    values, tangential = hat_trace(Q, 0, rule)
    blk = space.vandermonde(rule.points)
    assert lsq_fit(blk, rule, values=values).residual < 1e-10
    assert lsq_fit(blk, rule, values=values, tangential=tangential).residual < 1e-10


def test_lsq_residual_decreases_with_degree(rng):
    P = encode(ellipse_polygon(rng, 5), 0).frame_polygon
    rule = boundary_quadrature(P, 16)
    values, _ = hat_trace(P, 0, rule)
    res = []
    for ell in (5, 10, 20):
        space = build_approx_space(P, 0, basis=orthonormalize_basis(ell, 3.0))
        res.append(lsq_fit(space.vandermonde(rule.points), rule, values=values).residual)
    assert res[0] > res[1] > res[2]


def test_tangential_fit_pins_mean(rng):
    P = encode(ellipse_polygon(rng, 4), 0).frame_polygon
    space = build_approx_space(P, 0)
    rule = boundary_quadrature(P, 16)
    values, tangential = hat_trace(P, 0, rule)
    blk = space.vandermonde(rule.points)
    c = lsq_fit(blk, rule, values=values, tangential=tangential).coefficients
    w = rule.weights
    # large coefficients cancel, so agreement is limited to about 1e-8 relative
    assert w @ (blk.V @ c) == pytest.approx(w @ values, rel=1e-6)


def test_lsq_needs_targets(rng):
    P = encode(ellipse_polygon(rng, 4), 0).frame_polygon
    rule = boundary_quadrature(P, 4)
    with pytest.raises(ValueError):
        lsq_fit(build_approx_space(P, 0).vandermonde(rule.points), rule)


def test_basis_file_round_trip(tmp_path):
    b, phi = default_basis(), default_phi()
    path = tmp_path / "basis.txt"
    write_basis(path, b, phi)
    assert path.read_text().startswith(BASIS_HEADER)
    b2, phi2 = read_basis(path)
    assert np.array_equal(b.coef, b2.coef) and b.ell == b2.ell and b.h_ref == b2.h_ref
    assert np.array_equal(phi.c1, phi2.c1) and np.array_equal(phi.c2, phi2.c2)
    assert np.array_equal(phi.poles, phi2.poles) and phi.residual == phi2.residual
    bad = tmp_path / "bad.txt"
    bad.write_text("nope\n")
    with pytest.raises(ValueError):
        read_basis(bad)
