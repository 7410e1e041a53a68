"""Local harmonic approximation spaces.

Each space is the span of an orthonormalised basis of scaled harmonic
polynomials (shared by all polygons of a class) and three copies of a
single corner function ``Phi`` attached to consecutive vertices of the
polygon.  ``Phi`` is a least-squares rational/polynomial fit of the harmonic
function on ``(-1, 1)^2`` whose trace is a tent centred at ``(1, 0)``.
"""

from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import GeometryError, Polygon, QuadratureRule

logger = logging.getLogger(__name__)

BASIS_HEADER = "navem-basis v1"

DEFAULT_ELL = 20
DEFAULT_H_REF = 3.0
DEFAULT_N1 = 50
DEFAULT_N2 = 25


def _as_complex(points) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points[:, 0] + 1j * points[:, 1]


def eval_scaled_harmonics(ell: int, h_ref: float, points):
    """Values and gradients of ``{1, Re (z/h)^l, Im (z/h)^l : l = 1..ell}``.

    Returns three arrays of shape ``(n_points, 2*ell + 1)``.
    """
    if ell < 0 or h_ref <= 0:
        raise ValueError("need ell >= 0 and h_ref > 0")
    w = _as_complex(points) / h_ref
    n = len(w)
    V = np.empty((n, 2 * ell + 1))
    Vx = np.zeros_like(V)
    Vy = np.zeros_like(V)
    V[:, 0] = 1.0
    prev = np.ones_like(w)  # w^(l-1)
    for l in range(1, ell + 1):
        cur = prev * w
        V[:, 2 * l - 1] = cur.real
        V[:, 2 * l] = cur.imag
        dp = (l / h_ref) * prev
        Vx[:, 2 * l - 1] = dp.real
        Vy[:, 2 * l - 1] = -dp.imag
        Vx[:, 2 * l] = dp.imag
        Vy[:, 2 * l] = dp.real
        prev = cur
    return V, Vx, Vy


def _mgs(A: np.ndarray):
    A = A.copy()
    n = A.shape[1]
    R = np.zeros((n, n))
    for k in range(n):
        for i in range(k):
            R[i, k] = A[:, i] @ A[:, k]
            A[:, k] -= R[i, k] * A[:, i]
        R[k, k] = np.linalg.norm(A[:, k])
        if R[k, k] < 1e-13:
            raise np.linalg.LinAlgError(f"rank deficient Vandermonde matrix at column {k}")
        A[:, k] /= R[k, k]
    return A, R


@dataclass(frozen=True)
class OrthonormalHarmonicBasis:
    """Harmonic polynomials orthonormal for the mean inner product on a lattice over
    ``[-h_ref, h_ref]^2``.  ``coef`` is the upper-triangular matrix whose columns hold
    the monomial coefficients of each orthonormal function."""

    ell: int
    h_ref: float
    coef: np.ndarray

    @property
    def dim(self) -> int:
        return 2 * self.ell + 1

    @property
    def R(self) -> np.ndarray:
        return np.linalg.inv(self.coef)

    def evaluate(self, points):
        V, Vx, Vy = eval_scaled_harmonics(self.ell, self.h_ref, points)
        return V @ self.coef, Vx @ self.coef, Vy @ self.coef


def lattice_points(h_ref: float, lattice_n: int) -> np.ndarray:
    g = np.linspace(-h_ref, h_ref, lattice_n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def orthonormalize_basis(ell: int = DEFAULT_ELL, h_ref: float = DEFAULT_H_REF, lattice_n: int = 50) -> OrthonormalHarmonicBasis:
    """Two passes of modified Gram-Schmidt on the lattice Vandermonde matrix."""
    if lattice_n**2 < 2 * ell + 1:
        raise ValueError("lattice too coarse for the requested degree")
    pts = lattice_points(h_ref, lattice_n)
    V, _, _ = eval_scaled_harmonics(ell, h_ref, pts)
    V /= np.sqrt(len(pts))
    Q1, R1 = _mgs(V)
    _, R2 = _mgs(Q1)
    R = R2 @ R1
    coef = solve_triangular(R, np.eye(R.shape[0]), lower=False)
    return OrthonormalHarmonicBasis(ell, float(h_ref), coef)


# ---------------------------------------------------------------- corner function


def phi_poles(n1: int):
    alpha = np.arange(1, n1 + 1)
    d = 2.0 * np.exp(-4.0 * (np.sqrt(n1) - np.sqrt(alpha)))
    return 1.0 + d, d


def tent_data(points) -> np.ndarray:
    """Boundary data on ``(-1, 1)^2``: ``1 - |x2|`` on the side ``x1 = 1``, zero elsewhere."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(len(p))
    right = np.abs(p[:, 0] - 1.0) < 1e-14
    out[right] = 1.0 - np.abs(p[right, 1])
    return out


def phi_boundary_samples(n1: int, n_per_side: int = 300) -> np.ndarray:
    """Samples on the boundary of ``(-1, 1)^2``, clustered root-exponentially toward
    ``(1, 0)`` and toward the square's corners."""
    # distances from (1, 0) along the right side
    k = np.linspace(1.0, n1, 3 * n1)
    clustered = 2.0 * np.exp(-4.0 * (np.sqrt(n1) - np.sqrt(k)))
    clustered = clustered[clustered < 1.0]
    uniform = np.linspace(0.0, 1.0, n_per_side // 2 + 1)
    d = np.unique(np.concatenate([clustered, uniform]))
    right = np.concatenate([np.column_stack([np.ones_like(d), d]), np.column_stack([np.ones_like(d[d > 0]), -d[d > 0]])])
    # Chebyshev-like clustering toward corners on the other three sides
    t = -np.cos(np.linspace(0.0, np.pi, n_per_side))
    top = np.column_stack([t, np.ones_like(t)])
    bottom = np.column_stack([t, -np.ones_like(t)])
    left = np.column_stack([-np.ones_like(t), t])
    return np.vstack([right, top, bottom, left])


@dataclass(frozen=True)
class PhiFunction:
    """``Phi(z) = sum_a c1_a Re(d_a / (z - z_a)) + sum_b c2_b Re((z/2)^b)``."""

    n1: int
    n2: int
    poles: np.ndarray
    d: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    residual: float = 0.0

    def columns(self, points):
        """Unweighted design columns (values, x-derivatives, y-derivatives)."""
        z = _as_complex(points)
        diff = z[:, None] - self.poles[None, :]
        if np.any(np.abs(diff) < 1e-12):
            raise GeometryError("evaluation point too close to a pole of Phi")
        f = self.d[None, :] / diff
        fp = -self.d[None, :] / diff**2
        w = z / 2.0
        powers = w[:, None] ** np.arange(self.n2 + 1)[None, :]
        dpow = np.zeros_like(powers)
        b = np.arange(1, self.n2 + 1)
        dpow[:, 1:] = 0.5 * b[None, :] * w[:, None] ** (b - 1)[None, :]
        V = np.hstack([f.real, powers.real])
        Vx = np.hstack([fp.real, dpow.real])
        Vy = np.hstack([-fp.imag, -dpow.imag])
        return V, Vx, Vy

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.c1, self.c2])

    def evaluate(self, points):
        V, Vx, Vy = self.columns(points)
        c = self.coefficients
        return V @ c, Vx @ c, Vy @ c

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)[0]


def build_phi(n1: int = DEFAULT_N1, n2: int = DEFAULT_N2, n_per_side: int = 300) -> PhiFunction:
    """Least-squares fit of the tent-trace harmonic function on ``(-1, 1)^2``."""
    if n1 < 1 or n2 < 1:
        raise ValueError("need n1, n2 >= 1")
    poles, d = phi_poles(n1)
    proto = PhiFunction(n1, n2, poles, d, np.zeros(n1), np.zeros(n2 + 1))
    samples = phi_boundary_samples(n1, n_per_side)
    if len(samples) < 3 * (n1 + n2):
        raise ValueError("not enough boundary samples for the Phi fit")
    A, _, _ = proto.columns(samples)
    b = tent_data(samples)
    scale = np.linalg.norm(A, axis=0)
    Q, R = np.linalg.qr(A / scale)
    c = solve_triangular(R, Q.T @ b) / scale
    fitted = PhiFunction(n1, n2, poles, d, c[:n1], c[n1:])
    check = phi_boundary_samples(n1, 4 * n_per_side + 7)
    residual = float(np.max(np.abs(fitted(check) - tent_data(check))))
    if residual > 1e-2:
        raise RuntimeError(f"Phi fit failed: max boundary residual {residual:.2e}")
    return PhiFunction(n1, n2, poles, d, c[:n1], c[n1:], residual)


@dataclass(frozen=True)
class MappedPhi:
    """``Phi`` composed with the similarity carrying ``(1, 0)`` to ``vertex`` and the
    positive ``x1`` axis onto ``direction`` (unit exterior bisector), scaled by ``scale``."""

    base: PhiFunction
    vertex: np.ndarray
    direction: np.ndarray
    scale: float

    def to_reference(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2) - self.vertex
        c, s = self.direction
        # rotate by -theta then scale
        u = np.column_stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1]]) / self.scale
        u[:, 0] += 1.0
        return u

    def columns_transform(self, dx, dy):
        c, s = self.direction
        gx = (c * dx - s * dy) / self.scale
        gy = (s * dx + c * dy) / self.scale
        return gx, gy

    def evaluate(self, points):
        val, dx, dy = self.base.evaluate(self.to_reference(points))
        gx, gy = self.columns_transform(dx, dy)
        return val, gx, gy


def exterior_bisector(P: Polygon, i: int) -> np.ndarray:
    normals = P.outward_normals
    b = normals[i - 1] + normals[i]
    nb = np.linalg.norm(b)
    if nb < 1e-12:
        raise GeometryError(f"cusp at vertex {i}")
    return b / nb


def map_phi_to_vertex(P: Polygon, i: int, base: PhiFunction, max_retries: int = 3) -> MappedPhi:
    vertex = P.vertices[i]
    direction = exterior_bisector(P, i)
    scale = P.diameter
    for _ in range(max_retries + 1):
        mapped = MappedPhi(base, vertex.copy(), direction, scale)
        u = mapped.to_reference(P.vertices)
        if np.all(np.abs(u) <= 1.0 + 1e-10):
            return mapped
        scale *= 1.5
    raise GeometryError(f"could not fit polygon inside the Phi domain at vertex {i}")


@dataclass(frozen=True)
class VandermondeBlock:
    V: np.ndarray
    Vx: np.ndarray
    Vy: np.ndarray

    def tangential(self, tangents) -> np.ndarray:
        t = np.asarray(tangents, dtype=float)
        return self.Vx * t[:, 0:1] + self.Vy * t[:, 1:2]


@dataclass(frozen=True)
class ApproxSpace:
    """Span of the shared harmonic basis and three mapped corner functions."""

    basis: OrthonormalHarmonicBasis
    phis: tuple

    @property
    def dim(self) -> int:
        return self.basis.dim + len(self.phis)

    def vandermonde(self, points) -> VandermondeBlock:
        V, Vx, Vy = self.basis.evaluate(points)
        cols = [m.evaluate(points) for m in self.phis]
        return VandermondeBlock(
            np.column_stack([V] + [c[0] for c in cols]),
            np.column_stack([Vx] + [c[1] for c in cols]),
            np.column_stack([Vy] + [c[2] for c in cols]),
        )


def build_approx_space(P: Polygon, j: int, basis: OrthonormalHarmonicBasis | None = None, phi: PhiFunction | None = None) -> ApproxSpace:
    basis = default_basis() if basis is None else basis
    phi = default_phi() if phi is None else phi
    n = len(P)
    phis = tuple(map_phi_to_vertex(P, (j + s) % n, phi) for s in (-1, 0, 1))
    return ApproxSpace(basis, phis)


def vandermonde(space: ApproxSpace, points) -> VandermondeBlock:
    return space.vandermonde(points)


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    residual: float


def _weighted_lstsq(A: np.ndarray, b: np.ndarray, rcond: float):
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    y, _, rank, _ = np.linalg.lstsq(As, b, rcond=rcond)
    if rank < As.shape[1] and rcond <= 0:
        warnings.warn("rank-deficient least-squares system, using ridge fallback", RuntimeWarning)
        y = np.linalg.solve(As.T @ As + 1e-12 * np.eye(As.shape[1]), As.T @ b)
    return y / scale


def lsq_fit(
    block: VandermondeBlock,
    rule: QuadratureRule,
    values=None,
    tangential=None,
    rcond: float = 1e-12,
) -> FitResult:
    """Weighted boundary least squares.

    With ``values`` the trace is matched; with ``tangential`` the tangential
    derivative is matched and the constant coefficient (column 0) is chosen so
    the fitted trace has the same boundary mean as ``values`` (or zero mean
    when no values are given).
    """
    sw = np.sqrt(rule.weights)
    if tangential is None:
        if values is None:
            raise ValueError("need trace values or tangential derivatives")
        t = np.asarray(values, dtype=float)
        A = block.V * sw[:, None]
        c = _weighted_lstsq(A, t * sw, rcond)
        res = float(np.linalg.norm(A @ c - t * sw))
        return FitResult(c, res)
    g = np.asarray(tangential, dtype=float)
    T = block.tangential(rule.tangents)
    A = T[:, 1:] * sw[:, None]
    c = np.zeros(block.V.shape[1])
    c[1:] = _weighted_lstsq(A, g * sw, rcond)
    res = float(np.linalg.norm(A @ c[1:] - g * sw))
    w = rule.weights
    target_mean = 0.0 if values is None else float(w @ np.asarray(values)) / w.sum()
    current = float(w @ (block.V[:, 1:] @ c[1:])) / w.sum()
    const_mean = float(w @ block.V[:, 0]) / w.sum()
    c[0] = (target_mean - current) / const_mean
    return FitResult(c, res)


@functools.lru_cache(maxsize=None)
def default_basis(ell: int = DEFAULT_ELL, h_ref: float = DEFAULT_H_REF) -> OrthonormalHarmonicBasis:
    return orthonormalize_basis(ell, h_ref)


@functools.lru_cache(maxsize=None)
def default_phi(n1: int = DEFAULT_N1, n2: int = DEFAULT_N2) -> PhiFunction:
    return build_phi(n1, n2)


# ---------------------------------------------------------------- text format


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def write_basis(path, basis: OrthonormalHarmonicBasis, phi: PhiFunction) -> None:
    lines = [BASIS_HEADER, f"ell {basis.ell}", f"h_ref {basis.h_ref!r}"]
    lines += ["coef"] + [_row(r) for r in basis.coef]
    lines += [f"phi {phi.n1} {phi.n2} {phi.residual!r}", _row(phi.poles), _row(phi.d), _row(phi.c1), _row(phi.c2)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_basis(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != BASIS_HEADER:
        raise ValueError(f"{path}: expected header {BASIS_HEADER!r}")
    ell = int(lines[1].split()[1])
    h_ref = float(lines[2].split()[1])
    dim = 2 * ell + 1
    coef = np.array([[float(x) for x in lines[4 + k].split()] for k in range(dim)])
    head = lines[4 + dim].split()
    n1, n2, residual = int(head[1]), int(head[2]), float(head[3])
    arr = [np.array([float(x) for x in lines[5 + dim + k].split()]) for k in range(4)]
    basis = OrthonormalHarmonicBasis(ell, h_ref, coef)
    phi = PhiFunction(n1, n2, arr[0], arr[1], arr[2], arr[3], residual)
    return basis, phi
