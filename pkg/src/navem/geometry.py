"""Polygon primitives, affine maps and quadrature rules."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate or inconsistent polygon input."""


@dataclass(frozen=True)
class AffineMap:
    """The map ``x -> linear @ x + shift``."""

    linear: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=float).reshape(2, 2)
        shift = np.asarray(self.shift, dtype=float).reshape(2)
        if abs(np.linalg.det(linear)) <= 1e-14:
            raise GeometryError("affine map is not invertible")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.eye(2), np.zeros(2))

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.linear.T + self.shift

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.shift)

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Return ``self o inner``."""
        return AffineMap(self.linear @ inner.linear, self.linear @ inner.shift + self.shift)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def push_gradient(self, grads) -> np.ndarray:
        """Map gradients taken in the image frame back to the source frame.

        If ``g = f o self`` then ``grad g(x) = linear.T @ grad f(self(x))``.
        """
        return np.asarray(grads, dtype=float) @ self.linear


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass
class Polygon:
    """A simple counter-clockwise polygon.

    Parameters
    ----------
    vertices : array_like, shape (n, 2)
    hanging : array_like of bool, shape (n,), optional
        True for vertices lying in the interior of a geometric edge.
    """

    vertices: np.ndarray
    hanging: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("a polygon needs at least 3 vertices of shape (n, 2)")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite vertex coordinates")
        self.vertices = v
        if self.hanging is None:
            self.hanging = np.zeros(len(v), dtype=bool)
        else:
            self.hanging = np.array(self.hanging, dtype=bool).reshape(-1)
            if self.hanging.shape[0] != len(v):
                raise GeometryError("hanging flags do not match vertex count")
        diam = self.diameter
        edges = self.edge_lengths
        if np.min(edges) <= 1e-12 * diam:
            raise GeometryError("consecutive vertices coincide")
        area = _signed_area(v)
        if area <= 1e-14 * diam**2:
            raise GeometryError(f"polygon is degenerate or clockwise (signed area {area:.3e})")
        n = len(v)
        if n > 3:
            for a in range(n):
                for b in range(a + 2, n):
                    if a == 0 and b == n - 1:
                        continue
                    if _segments_cross(v[a], v[(a + 1) % n], v[b], v[(b + 1) % n]):
                        raise GeometryError("polygon is self-intersecting")

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def edge_vectors(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normals, edge ``i`` runs from vertex ``i`` to ``i+1``."""
        e = self.edge_vectors
        n = np.column_stack([e[:, 1], -e[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = 0.5 * cross.sum()
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / (6 * a)
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / (6 * a)
        return np.array([cx, cy])

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def transformed(self, amap: AffineMap) -> "Polygon":
        """Image under an affine map; orientation-reversing maps reverse the vertex order."""
        v = amap(self.vertices)
        hanging = self.hanging.copy()
        if amap.det < 0:
            v = v[::-1]
            hanging = hanging[::-1]
        return Polygon(v, hanging)

    def is_convex(self, tol: float = 1e-12) -> bool:
        e = self.edge_vectors
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        scale = self.diameter**2
        return bool(np.all(cross >= -tol * scale))

    def contains(self, points, tol: float = 1e-10) -> np.ndarray:
        """Point-in-polygon test by winding number; points on the boundary count as inside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))[:, None, :]
        p0 = self.vertices[None, :, :]
        e = np.roll(self.vertices, -1, axis=0)[None, :, :] - p0
        d = p - p0
        t = np.clip(np.einsum("pek,pek->pe", d, e) / np.einsum("pek,pek->pe", e, e), 0.0, 1.0)
        dist = np.linalg.norm(d - t[..., None] * e, axis=2)
        on_edge = np.any(dist <= tol * self.diameter, axis=1)
        cr = e[..., 0] * d[..., 1] - e[..., 1] * d[..., 0]
        y, y0, y1 = p[..., 1], p0[..., 1], p0[..., 1] + e[..., 1]
        wn = np.sum((y0 <= y) & (y < y1) & (cr > 0), axis=1) - np.sum((y1 <= y) & (y < y0) & (cr < 0), axis=1)
        return on_edge | (wn != 0)


def collinear_flags(P: Polygon, tol: float = 1e-9) -> np.ndarray:
    """Vertices whose interior angle is flat, to within ``tol * diameter``."""
    v = P.vertices
    prev, nxt = np.roll(v, 1, axis=0), np.roll(v, -1, axis=0)
    e = nxt - prev
    cross = e[:, 0] * (v[:, 1] - prev[:, 1]) - e[:, 1] * (v[:, 0] - prev[:, 0])
    dist = np.abs(cross) / np.linalg.norm(e, axis=1)
    along = np.einsum("ij,ij->i", v - prev, e) / np.einsum("ij,ij->i", e, e)
    return (dist < tol * P.diameter) & (along > 0) & (along < 1)


@dataclass(frozen=True)
class PolygonMetrics:
    area: float
    centroid: np.ndarray
    diameter: float
    inertia_tensor: np.ndarray
    anisotropic_ratio: float
    edge_ratio: float


def second_moments(P: Polygon, center=None) -> np.ndarray:
    """Exact second-moment tensor ``int_P (x-c)(x-c)^T`` via a vertex-based fan."""
    c = P.centroid if center is None else np.asarray(center, dtype=float)
    v = P.vertices - c
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
    ixx = (cross * (v[:, 0] ** 2 + v[:, 0] * w[:, 0] + w[:, 0] ** 2)).sum() / 12.0
    iyy = (cross * (v[:, 1] ** 2 + v[:, 1] * w[:, 1] + w[:, 1] ** 2)).sum() / 12.0
    ixy = (cross * (v[:, 0] * w[:, 1] + 2 * v[:, 0] * v[:, 1] + 2 * w[:, 0] * w[:, 1] + w[:, 0] * v[:, 1])).sum() / 24.0
    return np.array([[ixx, ixy], [ixy, iyy]])


def polygon_metrics(P: Polygon) -> PolygonMetrics:
    area = P.area
    diam = P.diameter
    if area < 1e-14 * diam**2:
        raise GeometryError("degenerate polygon")
    inertia = second_moments(P)
    lam = np.linalg.eigvalsh(inertia)
    edges = P.edge_lengths
    return PolygonMetrics(
        area=area,
        centroid=P.centroid,
        diameter=diam,
        inertia_tensor=inertia,
        anisotropic_ratio=float(lam[-1] / lam[0]),
        edge_ratio=float(edges.max() / edges.min()),
    )


def inertial_map(P: Polygon) -> AffineMap:
    """Affine map sending ``P`` to a polygon centred at the origin with unit
    diameter and isotropic inertia tensor."""
    c = P.centroid
    inertia = second_moments(P, c)
    lam, vecs = np.linalg.eigh(inertia)
    if lam[0] <= 0:
        raise GeometryError("zero-area polygon")
    if abs(lam[1] - lam[0]) <= 1e-12 * lam[1]:
        # repeated eigenvalue: keep the axis-aligned basis for determinism
        vecs = np.eye(2)
        lam = np.array([inertia[0, 0], inertia[1, 1]])
    elif np.linalg.det(vecs) < 0:
        vecs[:, 1] *= -1
    linear = np.diag(1.0 / np.sqrt(lam)) @ vecs.T
    mapped = (P.vertices - c) @ linear.T
    d = mapped[:, None, :] - mapped[None, :, :]
    diam = np.sqrt((d**2).sum(-1)).max()
    linear = linear / diam
    return AffineMap(linear, -linear @ c)


def vertex_alignment_map(P: Polygon, j: int) -> AffineMap:
    """Rotation plus uniform scaling sending vertex ``j`` to ``(1, 0)``."""
    a, b = P.vertices[j]
    r2 = a * a + b * b
    if r2 <= 1e-28:
        raise GeometryError("vertex at the origin cannot be aligned")
    # z -> z / v_j
    linear = np.array([[a, b], [-b, a]]) / r2
    return AffineMap(linear, np.zeros(2))


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights; boundary rules also carry tangents and
    owning edges (``param`` is the local coordinate in ``[0, 1]`` along the edge)."""

    points: np.ndarray
    weights: np.ndarray
    tangents: np.ndarray | None = None
    edges: np.ndarray | None = None
    param: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@functools.lru_cache(maxsize=None)
def _gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def boundary_quadrature(P: Polygon, n_per_edge: int) -> QuadratureRule:
    """Gauss-Legendre nodes on every edge of ``P`` (edge ``i`` from ``v_i`` to ``v_{i+1}``)."""
    if n_per_edge < 1:
        raise ValueError("n_per_edge must be >= 1")
    s, w = _gauss_legendre_01(n_per_edge)
    v = P.vertices
    e = P.edge_vectors
    lengths = P.edge_lengths
    n = len(v)
    points = (v[:, None, :] + s[None, :, None] * e[:, None, :]).reshape(-1, 2)
    weights = (lengths[:, None] * w[None, :]).reshape(-1)
    tangents = np.repeat(e / lengths[:, None], n_per_edge, axis=0)
    edges = np.repeat(np.arange(n), n_per_edge)
    param = np.tile(s, n)
    return QuadratureRule(points, weights, tangents, edges, param)


@functools.lru_cache(maxsize=None)
def _triangle_rule(degree: int):
    """Rule on the reference triangle (0,0),(1,0),(0,1) in barycentric-free form."""
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 6)
    # collapsed Gauss-Legendre: exact up to 2n-2 on the triangle
    n = (degree + 3) // 2
    s, w = _gauss_legendre_01(n)
    u, v = np.meshgrid(s, s, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1 - u)).ravel()
    weights = (wu * wv * (1 - u)).ravel()
    return np.column_stack([xi, eta]), weights


def interior_quadrature(P: Polygon, degree: int = 2) -> QuadratureRule:
    """Centroid-fan sub-triangulation with a triangle rule of the given degree."""
    c = P.centroid
    v = P.vertices
    w = np.roll(v, -1, axis=0)
    a = v - c
    b = w - c
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    if np.any(det <= 1e-14 * P.diameter**2):
        raise GeometryError("polygon is not star-shaped with respect to its centroid")
    ref_pts, ref_w = _triangle_rule(degree)
    pts = c + ref_pts[None, :, 0:1] * a[:, None, :] + ref_pts[None, :, 1:2] * b[:, None, :]
    weights = det[:, None] * ref_w[None, :]
    return QuadratureRule(pts.reshape(-1, 2), weights.reshape(-1))


REFERENCE_TRIANGLE = np.array([[-1.0, 0.0], [0.5, -np.sqrt(3) / 2], [0.5, np.sqrt(3) / 2]])


def affine_from_triangles(src, dst) -> AffineMap:
    """The unique affine map sending three points ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    S = np.column_stack([src[1] - src[0], src[2] - src[0]])
    D = np.column_stack([dst[1] - dst[0], dst[2] - dst[0]])
    linear = D @ np.linalg.inv(S)
    return AffineMap(linear, dst[0] - linear @ src[0])
