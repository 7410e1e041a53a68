"""Manufactured test problems.

Linear problems have the form ``-div(D grad u) + beta . grad u + gamma u = f``
with Dirichlet data ``g = u``.  The quasilinear problem replaces ``D`` by the
scalar ``1 / (lam + u^2)``.  Forcing terms are differentiated by hand below and
checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]

LAMBDAS = (1.0, 0.5, 0.1)


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar diffusion ``D(u, lam) = 1 / (lam + u^2)`` and its ``u`` derivative."""

    lam: float

    def D(self, u):
        return 1.0 / (self.lam + u * u)

    def dD(self, u):
        return -2.0 * u / (self.lam + u * u) ** 2


@dataclass(frozen=True)
class Problem:
    """Coefficient callbacks evaluated on ``(n, 2)`` point arrays.

    ``D`` returns ``(n, 2, 2)``, ``beta`` returns ``(n, 2)``, ``gamma``, ``f``,
    ``u`` return ``(n,)`` and ``grad`` returns ``(n, 2)``.
    """

    name: str
    D: Field
    beta: Field
    gamma: Field
    f: Field
    u: Field
    grad: Field
    nonlinear: Nonlinearity | None = None
    meta: dict = field(default_factory=dict)

    def g(self, points):
        return self.u(points)


def _xy(points):
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return p[:, 0], p[:, 1]


def _zero_vec(points):
    return np.zeros((len(np.asarray(points).reshape(-1, 2)), 2))


def _zero(points):
    return np.zeros(len(np.asarray(points).reshape(-1, 2)))


def _const_tensor(M):
    M = np.asarray(M, dtype=float)

    def D(points):
        n = len(np.asarray(points).reshape(-1, 2))
        return np.broadcast_to(M, (n, 2, 2)).copy()

    return D


# --- test 1: variable diffusion, advection and reaction -------------------


def _t1_parts(points):
    x, y = _xy(points)
    a = (x - 0.2) + (y - 0.3) / 2
    b = (x - 0.7) / 2 + (y - 0.8)
    s = np.sin(2 * np.pi * x) * np.sin(3 * np.pi * y)
    u = 3 * a**2 + 2 * b**3 + s
    ux = 6 * a + 3 * b**2 + 2 * np.pi * np.cos(2 * np.pi * x) * np.sin(3 * np.pi * y)
    uy = 3 * a + 6 * b**2 + 3 * np.pi * np.sin(2 * np.pi * x) * np.cos(3 * np.pi * y)
    uxx = 6 + 3 * b - 4 * np.pi**2 * s
    uyy = 1.5 + 12 * b - 9 * np.pi**2 * s
    uxy = 3 + 6 * b + 6 * np.pi**2 * np.cos(2 * np.pi * x) * np.cos(3 * np.pi * y)
    return x, y, u, ux, uy, uxx, uyy, uxy


def _t1_D(points):
    x, y = _xy(points)
    D = np.empty((len(x), 2, 2))
    D[:, 0, 0] = 1 + y**2
    D[:, 0, 1] = D[:, 1, 0] = -x * y
    D[:, 1, 1] = 1 + x**2
    return D


def _t1_f(points):
    x, y, u, ux, uy, uxx, uyy, uxy = _t1_parts(points)
    # div(D grad u) = D:hess(u) + (div D) . grad u, with div D = (-x, -y)
    div_flux = (1 + y**2) * uxx - 2 * x * y * uxy + (1 + x**2) * uyy - x * ux - y * uy
    return -div_flux + x * ux - y * uy + x * y * u


def test1() -> Problem:
    return Problem(
        name="test1",
        D=_t1_D,
        beta=lambda p: np.column_stack(_xy(p)) * np.array([1.0, -1.0]),
        gamma=lambda p: np.prod(np.column_stack(_xy(p)), axis=1),
        f=_t1_f,
        u=lambda p: _t1_parts(p)[2],
        grad=lambda p: np.column_stack(_t1_parts(p)[3:5]),
    )


# --- test 2: strongly anisotropic constant diffusion ----------------------


def test2_tensor(ratio: float = 1e-6, angle: float = np.pi / 6) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    G = np.array([[c, -s], [s, c]])
    return G @ np.diag([1.0, ratio]) @ G.T


def _t2_parts(points):
    x, y = _xy(points)
    p, r = x - 2 * y**2, y + 2 * x
    w = 3 * np.cos(p) ** 2 + 4 * np.sin(r) ** 2
    s2p, c2p, s2r, c2r = np.sin(2 * p), np.cos(2 * p), np.sin(2 * r), np.cos(2 * r)
    wx = -3 * s2p + 8 * s2r
    wy = 12 * y * s2p + 4 * s2r
    wxx = -6 * c2p + 32 * c2r
    wxy = 24 * y * c2p + 16 * c2r
    wyy = 12 * s2p - 96 * y**2 * c2p + 8 * c2r
    sw, cw = np.sin(w), np.cos(w)
    uxx = -sw * wx * wx + cw * wxx
    uxy = -sw * wx * wy + cw * wxy
    uyy = -sw * wy * wy + cw * wyy
    return sw, cw * wx, cw * wy, uxx, uxy, uyy


def test2(ratio: float = 1e-6) -> Problem:
    K = test2_tensor(ratio)

    def f(points):
        _, _, _, uxx, uxy, uyy = _t2_parts(points)
        return -(K[0, 0] * uxx + 2 * K[0, 1] * uxy + K[1, 1] * uyy)

    return Problem(
        name="test2",
        D=_const_tensor(K),
        beta=_zero_vec,
        gamma=_zero,
        f=f,
        u=lambda p: _t2_parts(p)[0],
        grad=lambda p: np.column_stack(_t2_parts(p)[1:3]),
        meta={"ratio": ratio},
    )


# --- test 3: quasilinear diffusion -----------------------------------------


def _t3_parts(points):
    x, y = _xy(points)
    rho = (x - 0.5) ** 2 + (y - 0.5) ** 2
    S, C = np.sin(3 * np.pi * rho), np.cos(3 * np.pi * rho)
    u = S**3 / 8
    du = 9 * np.pi / 8 * S**2 * C
    d2u = 27 * np.pi**2 / 8 * (2 * S * C**2 - S**3)
    grad = np.column_stack([2 * (x - 0.5) * du, 2 * (y - 0.5) * du])
    lap = 4 * rho * d2u + 4 * du
    return u, grad, lap


def test3(lam: float = 1.0) -> Problem:
    nl = Nonlinearity(float(lam))

    def f(points):
        u, grad, lap = _t3_parts(points)
        return -nl.D(u) * lap - nl.dD(u) * np.einsum("ij,ij->i", grad, grad)

    def D(points):
        u = _t3_parts(points)[0]
        return nl.D(u)[:, None, None] * np.eye(2)

    return Problem(
        name="test3",
        D=D,
        beta=_zero_vec,
        gamma=_zero,
        f=f,
        u=lambda p: _t3_parts(p)[0],
        grad=lambda p: _t3_parts(p)[1],
        nonlinear=nl,
        meta={"lam": float(lam)},
    )


def linear_problem(a: float = 0.3, b: float = -0.7, c: float = 0.2, D=None) -> Problem:
    """Pure diffusion with a linear exact solution (patch test)."""
    M = np.eye(2) if D is None else np.asarray(D, dtype=float)
    return Problem(
        name="linear",
        D=_const_tensor(M),
        beta=_zero_vec,
        gamma=_zero,
        f=_zero,
        u=lambda p: a * _xy(p)[0] + b * _xy(p)[1] + c,
        grad=lambda p: np.tile([a, b], (len(_xy(p)[0]), 1)),
    )


def get_problem(name: str, lam: float = 1.0) -> Problem:
    if name == "test1":
        return test1()
    if name == "test2":
        return test2()
    if name == "test3":
        return test3(lam)
    if name == "linear":
        return linear_problem()
    raise ValueError(f"unknown problem {name!r}; expected test1, test2, test3 or linear")
