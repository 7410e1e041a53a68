"""Online phase of the neural approximated method.

For every element and every local vertex the basis function is obtained in
the network frame (encode), its coefficients are produced by a predictor or by
a direct least-squares fit (predict), and values and gradients are pulled back
to physical quadrature points where the broken forms are integrated
(compute).  No projector or stabilisation is involved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembler, NewtonTolerances, apply_dirichlet, newton, sparse_solve
from .encoding import EncodedInput, config6_basis, encode
from .geometry import AffineMap, Polygon, QuadratureRule, boundary_quadrature, interior_quadrature
from .harmonic import ApproxSpace, build_approx_space, lsq_fit
from .meshes import Mesh
from .network import ModelError, PredictorPair, evaluate_coefficients
from .problems import Problem

logger = logging.getLogger(__name__)

ASSEMBLY_DEGREE = 2
ERROR_DEGREE = 8
ORACLE_POINTS_PER_EDGE = 40


class MissingModelError(ModelError):
    pass


def hat_trace(P: Polygon, j: int, rule: QuadratureRule):
    """Trace and tangential derivative of the piecewise-linear hat of vertex ``j``
    at the points of a boundary rule on ``P``."""
    n = len(P)
    e, t = rule.edges, rule.param
    lengths = P.edge_lengths
    values = np.zeros(len(t))
    tangential = np.zeros(len(t))
    out_edge, in_edge = j, (j - 1) % n
    m = e == out_edge
    values[m] = 1.0 - t[m]
    tangential[m] = -1.0 / lengths[out_edge]
    m = e == in_edge
    values[m] = t[m]
    tangential[m] = 1.0 / lengths[in_edge]
    return values, tangential


@dataclass
class LocalBasisFunction:
    """One basis function on one element, either coefficients in an
    approximation space or a closed-form affine function, both in ``frame``."""

    frame: AffineMap
    provenance: str
    space: ApproxSpace | None = None
    c_phi: np.ndarray | None = None
    c_q: np.ndarray | None = None
    linear: tuple | None = None  # (value at origin, gradient) in the frame

    def evaluate(self, points):
        xf = self.frame(points)
        if self.space is None:
            a, g = self.linear
            phi = a + xf @ g
            grad = np.tile(g, (len(xf), 1))
        else:
            phi, grad = evaluate_coefficients(self.space, self.c_phi, self.c_q, xf)
        return phi, self.frame.push_gradient(grad)


def _config6_function(enc: EncodedInput, provenance: str) -> LocalBasisFunction:
    v0, g = config6_basis(np.zeros((1, 2)))
    return LocalBasisFunction(enc.frame, provenance, linear=(float(v0[0, enc.j_frame]), g[enc.j_frame]))


def _plain_triangle_function(P: Polygon, j: int) -> LocalBasisFunction:
    v = P.vertices
    a, b = v[(j + 1) % 3], v[(j + 2) % 3]
    M = np.column_stack([v[j] - b, a - b])
    grad = np.linalg.solve(M.T, np.array([1.0, 0.0]))
    return LocalBasisFunction(AffineMap.identity(), "closed-form", linear=(float(-grad @ b), grad))


class OracleBasis:
    """Direct boundary least-squares fit of every basis function (no networks).

    ``q_fit`` selects how gradient coefficients are obtained: ``"tangential"``
    matches tangential derivatives, ``"value"`` reuses the value fit.
    """

    mode = "oracle"

    def __init__(self, n_per_edge: int = ORACLE_POINTS_PER_EDGE, q_fit: str = "tangential", rcond: float = 1e-12):
        if q_fit not in ("tangential", "value"):
            raise ValueError("q_fit must be 'tangential' or 'value'")
        self.n_per_edge = int(n_per_edge)
        self.q_fit = q_fit
        self.rcond = rcond

    def fit(self, enc: EncodedInput):
        F, jf = enc.frame_polygon, enc.j_frame
        rule = boundary_quadrature(F, self.n_per_edge)
        space = build_approx_space(F, jf)
        block = space.vandermonde(rule.points)
        values, tangential = hat_trace(F, jf, rule)
        c_phi = lsq_fit(block, rule, values=values, rcond=self.rcond)
        if self.q_fit == "value":
            c_q = c_phi
        else:
            c_q = lsq_fit(block, rule, values=values, tangential=tangential, rcond=self.rcond)
        return space, c_phi, c_q

    def local_function(self, P: Polygon, j: int) -> LocalBasisFunction:
        enc = encode(P, j)
        space, c_phi, c_q = self.fit(enc)
        return LocalBasisFunction(enc.frame, "oracle", space, c_phi.coefficients, c_q.coefficients)


class NetworkBasis:
    """Trained predictors keyed by class tag; plain triangles and configuration 6
    use the linear finite element basis."""

    mode = "network"

    def __init__(self, models: dict):
        self.models = dict(models)

    def local_function(self, P: Polygon, j: int) -> LocalBasisFunction:
        enc = encode(P, j)
        cls = enc.cls
        if cls.kind == "triangle":
            return _plain_triangle_function(P, j)
        if cls.kind == "hanging" and cls.n == 6:
            return _config6_function(enc, "closed-form")
        tag = cls.tag
        pair: PredictorPair | None = self.models.get(tag)
        if pair is None:
            raise MissingModelError(f"no trained model for polygon class {tag}")
        space = build_approx_space(enc.frame_polygon, enc.j_frame)
        if space.dim != pair.phi_net.n_out:
            raise ModelError(f"model for {tag} outputs {pair.phi_net.n_out} coefficients, space has {space.dim}")
        c_phi, c_q = pair.coefficients(enc.x0_coef)
        return LocalBasisFunction(enc.frame, "network", space, c_phi, c_q)


def make_basis(mode: str = "oracle", models: dict | None = None, **kwargs):
    if mode in ("oracle", "navem-oracle"):
        return OracleBasis(**kwargs)
    if mode in ("network", "navem"):
        if not models:
            raise MissingModelError("network mode requires trained models")
        return NetworkBasis(models, **kwargs)
    raise ValueError(f"unknown basis mode {mode!r}")


@dataclass
class ElementBasisBundle:
    """Values ``phi`` (nq x n) and gradients ``grad`` (nq x n x 2) of the local
    basis at the points of ``quad``."""

    dofs: np.ndarray
    quad: QuadratureRule
    phi: np.ndarray
    grad: np.ndarray
    provenance: tuple
    functions: list = field(default_factory=list, repr=False)

    def values(self, coeffs):
        return self.phi @ coeffs

    def gradients(self, coeffs):
        return np.einsum("qnd,n->qd", self.grad, coeffs)

    def at(self, points):
        """Evaluate the local basis at extra points."""
        out = [f.evaluate(points) for f in self.functions]
        return np.column_stack([o[0] for o in out]), np.stack([o[1] for o in out], axis=1)


def element_bundle(P: Polygon, dofs, basis, degree: int = ASSEMBLY_DEGREE, functions=None) -> ElementBasisBundle:
    quad = interior_quadrature(P, degree)
    funcs = [basis.local_function(P, j) for j in range(len(P))] if functions is None else functions
    vals = [f.evaluate(quad.points) for f in funcs]
    phi = np.column_stack([v[0] for v in vals])
    grad = np.stack([v[1] for v in vals], axis=1)
    return ElementBasisBundle(np.asarray(dofs), quad, phi, grad, tuple(f.provenance for f in funcs), funcs)


def mesh_bundles(mesh: Mesh, basis, degree: int = ASSEMBLY_DEGREE) -> list:
    return [element_bundle(mesh.polygon(k), mesh.elements[k], basis, degree) for k in range(mesh.n_elements)]


def local_navem_matrices(bundle: ElementBasisBundle, problem: Problem):
    """Local matrix ``A_ij = sum_q w [q_i . D q_j + (beta . q_j) phi_i + gamma phi_i phi_j]``
    (row ``i`` is the test function) and load vector ``sum_q w f phi_i``."""
    x, w = bundle.quad.points, bundle.quad.weights
    phi, grad = bundle.phi, bundle.grad
    Dg = np.einsum("qab,qjb->qja", problem.D(x), grad)
    A = np.einsum("q,qia,qja->ij", w, grad, Dg)
    bq = np.einsum("qa,qja->qj", problem.beta(x), grad)
    A += phi.T @ (w[:, None] * bq)
    A += phi.T @ ((w * problem.gamma(x))[:, None] * phi)
    rhs = phi.T @ (w * problem.f(x))
    return A, rhs


def assemble_navem(mesh: Mesh, problem: Problem, bundles):
    asm = Assembler(mesh.n_vertices)
    for b in bundles:
        A, rhs = local_navem_matrices(b, problem)
        asm.add(b.dofs, A, rhs)
    return asm.matrix(), asm.rhs


def solve_navem(mesh: Mesh, problem: Problem, basis=None, bundles=None) -> np.ndarray:
    """Linear solve; Dirichlet data imposed by vertex interpolation."""
    if bundles is None:
        bundles = mesh_bundles(mesh, OracleBasis() if basis is None else basis)
    A, b = assemble_navem(mesh, problem, bundles)
    Ad, bd = apply_dirichlet(A, b, mesh.boundary, problem.g(mesh.vertices))
    return sparse_solve(Ad, bd)


def solve_navem_newton(mesh: Mesh, problem: Problem, basis=None, tol: NewtonTolerances = NewtonTolerances(), bundles=None, u0=None):
    """Newton iteration for ``-div(D(u) grad u) = f`` with the exact Jacobian of
    the broken form; the coefficient is sampled from the basis at quadrature points."""
    nl = problem.nonlinear
    if nl is None:
        raise ValueError(f"problem {problem.name!r} has no nonlinearity")
    if bundles is None:
        bundles = mesh_bundles(mesh, OracleBasis() if basis is None else basis)
    loads = [b.phi.T @ (b.quad.weights * problem.f(b.quad.points)) for b in bundles]
    stiff = [np.einsum("qia,qja->qij", b.grad, b.grad) for b in bundles]

    def system(u):
        asm = Assembler(mesh.n_vertices)
        for b, Kq, rhs in zip(bundles, stiff, loads):
            ue = u[b.dofs]
            w = b.quad.weights
            z = b.phi @ ue
            Ae = np.einsum("q,qij->ij", w * nl.D(z), Kq)
            gz = b.gradients(ue)
            # d/du_k of sum_q w D(z) grad z . grad phi_i
            J = b.grad.transpose(1, 0, 2).reshape(len(ue), -1) @ (((w * nl.dD(z))[:, None] * gz)[:, :, None] * b.phi[:, None, :]).reshape(-1, len(ue))
            asm.add(b.dofs, Ae + J, rhs - Ae @ ue)
        return asm.rhs, asm.matrix()

    g = problem.g(mesh.vertices)
    u0 = np.zeros(mesh.n_vertices) if u0 is None else u0
    return newton(system, u0, mesh.boundary, g, tol)


def navem_errors(mesh: Mesh, dofs, u_exact, grad_exact, basis=None, degree: int = ERROR_DEGREE, bundles=None):
    """Broken L2 errors of the reconstructed solution and its gradient.

    ``bundles`` may hold assembly bundles; their basis functions are re-evaluated
    at a rule of the given degree.
    """
    e0 = e1 = 0.0
    for k in range(mesh.n_elements):
        P = mesh.polygon(k)
        funcs = bundles[k].functions if bundles is not None else None
        b = element_bundle(P, mesh.elements[k], basis if basis is not None else OracleBasis(), degree, funcs)
        ue = dofs[b.dofs]
        x, w = b.quad.points, b.quad.weights
        e0 += float(w @ (u_exact(x) - b.values(ue)) ** 2)
        e1 += float(w @ np.sum((grad_exact(x) - b.gradients(ue)) ** 2, axis=1))
    return np.sqrt(e0), np.sqrt(e1)


def interface_jump(mesh: Mesh, dofs, bundles, n_points: int = 8):
    """L2 norm of the trace jump on every interior edge and the global aggregate."""
    s, wq = np.polynomial.legendre.leggauss(n_points)
    s, wq = 0.5 * (s + 1), 0.5 * wq
    jumps = {}
    for (a, c), owners in mesh.edge_map().items():
        if len(owners) != 2:
            continue
        pa, pc = mesh.vertices[a], mesh.vertices[c]
        pts = pa + s[:, None] * (pc - pa)
        tr = []
        for k, _ in owners:
            phi, _ = bundles[k].at(pts)
            tr.append(phi @ dofs[bundles[k].dofs])
        L = float(np.linalg.norm(pc - pa))
        jumps[(a, c)] = float(np.sqrt(L * (wq @ (tr[0] - tr[1]) ** 2)))
    total = float(np.sqrt(sum(v**2 for v in jumps.values())))
    return jumps, total


def export_solution(path, mesh: Mesh, dofs, bundles) -> None:
    """Text table: vertex DOFs, then per-element quadrature-point samples."""
    lines = ["navem-solution v1", f"vertices {mesh.n_vertices}"]
    for p, u in zip(mesh.vertices, dofs):
        lines.append(f"{p[0]!r} {p[1]!r} {float(u)!r}")
    lines.append(f"samples {sum(len(b.quad.points) for b in bundles)}")
    for k, b in enumerate(bundles):
        vals = b.values(dofs[b.dofs])
        grads = b.gradients(dofs[b.dofs])
        for p, v, g in zip(b.quad.points, vals, grads):
            lines.append(f"{k} {p[0]!r} {p[1]!r} {float(v)!r} {float(g[0])!r} {float(g[1])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
