"""Lowest-order virtual element baseline.

Scaled monomials ``{1, (x - c_x)/h, (y - c_y)/h}`` centred at the element
centroid.  The elliptic projector is computed from boundary data only, the
enhanced-space L2 projector onto linears coincides with it, and the
non-polynomial part is stabilised by the identity on DOF vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import Assembler, NewtonTolerances, apply_dirichlet, newton, sparse_solve
from .geometry import GeometryError, Polygon, interior_quadrature
from .meshes import Mesh
from .problems import Problem

logger = logging.getLogger(__name__)

ASSEMBLY_DEGREE = 2
ERROR_DEGREE = 8


@dataclass(frozen=True)
class LocalProjectors:
    """``pi_star`` maps DOFs to monomial coefficients (3 x n); ``pi_nabla`` = D pi_star
    maps DOFs to the DOFs of the projection (n x n); ``pi0_grad`` (2 x n) gives the
    constant gradient moments; ``pi0_1`` is the L2 projector onto linears."""

    polygon: Polygon
    center: np.ndarray
    h: float
    pi_star: np.ndarray
    pi_nabla: np.ndarray
    pi0_grad: np.ndarray
    boundary_weights: np.ndarray

    @property
    def pi0_1(self) -> np.ndarray:
        return self.pi_star

    def monomials(self, points) -> np.ndarray:
        p = (np.asarray(points, dtype=float).reshape(-1, 2) - self.center) / self.h
        return np.column_stack([np.ones(len(p)), p])

    def evaluate(self, points) -> np.ndarray:
        """Matrix sending DOFs to the values of the projection at ``points``."""
        return self.monomials(points) @ self.pi_star

    def gradient(self) -> np.ndarray:
        """Matrix (2 x n) sending DOFs to the gradient of the projection."""
        return self.pi_star[1:] / self.h


def _vertex_edge_sum(P: Polygon, per_edge: np.ndarray) -> np.ndarray:
    """Half of the adjacent-edge quantities at each vertex (trapezoid of a hat)."""
    return 0.5 * (per_edge + np.roll(per_edge, 1, axis=0))


def projectors(P: Polygon) -> LocalProjectors:
    n = len(P)
    c = P.centroid
    h = P.diameter
    lengths = P.edge_lengths
    normals = P.outward_normals
    # integral of each hat times n over the boundary
    gmom = _vertex_edge_sum(P, lengths[:, None] * normals).T  # 2 x n
    bw = _vertex_edge_sum(P, lengths) / P.perimeter
    B = np.vstack([bw, gmom / h])
    Dm = np.column_stack([np.ones(n), (P.vertices - c) / h])
    G = B @ Dm
    if abs(np.linalg.det(G)) < 1e-14 * max(1.0, np.abs(G).max()) ** 3:
        raise GeometryError("degenerate element: singular projector system")
    pi_star = np.linalg.solve(G, B)
    return LocalProjectors(P, c, h, pi_star, Dm @ pi_star, gmom / P.area, bw)


def projector_nabla(P: Polygon) -> np.ndarray:
    return projectors(P).pi_nabla


def projector_l2_gradient(P: Polygon) -> np.ndarray:
    return projectors(P).pi0_grad


@dataclass
class LocalVemMatrices:
    consistency: np.ndarray
    stabilization: np.ndarray
    advection: np.ndarray
    reaction: np.ndarray
    rhs: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.consistency + self.stabilization + self.advection + self.reaction


def stabilization_matrix(proj: LocalProjectors) -> np.ndarray:
    R = np.eye(len(proj.polygon)) - proj.pi_nabla
    return R.T @ R


def local_vem_matrices(P: Polygon, problem: Problem, proj: LocalProjectors | None = None) -> LocalVemMatrices:
    proj = projectors(P) if proj is None else proj
    quad = interior_quadrature(P, ASSEMBLY_DEGREE)
    x, w = quad.points, quad.weights
    G = proj.pi0_grad
    Dq = problem.D(x)
    Dbar = np.einsum("q,qij->ij", w, Dq)
    K = G.T @ Dbar @ G
    Cs = 0.5 * np.trace(problem.D(P.centroid[None])[0])
    S = Cs * stabilization_matrix(proj)
    Pv = proj.evaluate(x)  # nq x n
    bg = problem.beta(x) @ G  # nq x n, beta . grad of each basis projection
    adv = Pv.T @ (w[:, None] * bg)
    rea = Pv.T @ ((w * problem.gamma(x))[:, None] * Pv)
    rhs = float(w @ problem.f(x)) * proj.boundary_weights
    return LocalVemMatrices(K, S, adv, rea, rhs)


def _check_dofs(mesh: Mesh):
    if mesh.hanging.any():
        logger.debug("hanging nodes treated as ordinary vertices by the virtual element space")


def assemble_vem(mesh: Mesh, problem: Problem):
    _check_dofs(mesh)
    asm = Assembler(mesh.n_vertices)
    for k, el in enumerate(mesh.elements):
        loc = local_vem_matrices(mesh.polygon(k), problem)
        asm.add(el, loc.total, loc.rhs)
    return asm.matrix(), asm.rhs


def solve_vem(mesh: Mesh, problem: Problem) -> np.ndarray:
    A, b = assemble_vem(mesh, problem)
    g = problem.g(mesh.vertices)
    Ad, bd = apply_dirichlet(A, b, mesh.boundary, g)
    return sparse_solve(Ad, bd)


def vem_newton_system(mesh: Mesh, problem: Problem):
    """Closure ``u -> (rhs - A(u) u, dA(u)u/du)`` over all DOFs of the mesh."""
    nl = problem.nonlinear
    if nl is None:
        raise ValueError(f"problem {problem.name!r} has no nonlinearity")
    cache = []
    for k in range(mesh.n_elements):
        P = mesh.polygon(k)
        proj = projectors(P)
        quad = interior_quadrature(P, ASSEMBLY_DEGREE)
        Pv = proj.evaluate(quad.points)
        rhs = float(quad.weights @ problem.f(quad.points)) * proj.boundary_weights
        cache.append((mesh.elements[k], proj, quad.weights, Pv, stabilization_matrix(proj), rhs, proj.pi_star[0]))

    def system(u):
        asm = Assembler(mesh.n_vertices)
        for el, proj, w, Pv, S, rhs, mean_row in cache:
            ue = u[el]
            z = Pv @ ue
            G = proj.pi0_grad
            gu = G @ ue
            Dz, dDz = nl.D(z), nl.dD(z)
            K = G.T @ G * float(w @ Dz)
            zbar = float(mean_row @ ue)
            Ks = nl.D(zbar) * S
            Su = S @ ue
            # derivative of the coefficient wrt the DOFs
            J1 = np.outer(G.T @ gu, (w * dDz) @ Pv)
            J2 = nl.dD(zbar) * np.outer(Su, mean_row)
            Ae = K + Ks
            asm.add(el, Ae + J1 + J2, rhs - Ae @ ue)
        return asm.rhs, asm.matrix()

    return system


def solve_vem_newton(mesh: Mesh, problem: Problem, tol: NewtonTolerances = NewtonTolerances(), u0=None):
    """Newton iteration for the quasilinear problem with an exact Jacobian.

    Returns a :class:`~navem.assembly.NewtonResult`.
    """
    system = vem_newton_system(mesh, problem)
    g = problem.g(mesh.vertices)
    u0 = np.zeros(mesh.n_vertices) if u0 is None else u0
    return newton(system, u0, mesh.boundary, g, tol)


def vem_errors(mesh: Mesh, dofs: np.ndarray, u_exact, grad_exact, degree: int = ERROR_DEGREE):
    """Broken L2 error of the projected solution and of its projected gradient."""
    e0 = e1 = 0.0
    for k, el in enumerate(mesh.elements):
        P = mesh.polygon(k)
        proj = projectors(P)
        quad = interior_quadrature(P, degree)
        uh = proj.evaluate(quad.points) @ dofs[el]
        gh = proj.pi0_grad @ dofs[el]
        e0 += float(quad.weights @ (u_exact(quad.points) - uh) ** 2)
        e1 += float(quad.weights @ np.sum((grad_exact(quad.points) - gh) ** 2, axis=1))
    return np.sqrt(e0), np.sqrt(e1)
