"""Sparse global assembly, Dirichlet elimination and a plain Newton driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised on singular systems or Newton failure; carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class Assembler:
    """Collects local blocks and builds a CSR matrix with summed duplicates."""

    def __init__(self, n: int):
        self.n = n
        self._rows, self._cols, self._vals = [], [], []
        self.rhs = np.zeros(n)

    def add(self, dofs, local, rhs=None):
        dofs = np.asarray(dofs)
        local = np.asarray(local, dtype=float)
        self._rows.append(np.repeat(dofs, len(dofs)))
        self._cols.append(np.tile(dofs, len(dofs)))
        self._vals.append(local.reshape(-1))
        if rhs is not None:
            np.add.at(self.rhs, dofs, rhs)

    def matrix(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix((self.n, self.n))
        rows = np.concatenate(self._rows)
        cols = np.concatenate(self._cols)
        vals = np.concatenate(self._vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, fixed: np.ndarray, values: np.ndarray):
    """Replace the rows of ``fixed`` DOFs by identity rows with right-hand side ``values``."""
    A = sp.csr_matrix(A, copy=True)
    b = np.array(b, dtype=float, copy=True)
    idx = np.flatnonzero(fixed)
    keep = np.ones(A.shape[0])
    keep[idx] = 0.0
    A = sp.diags(keep) @ A
    A = A + sp.diags(1.0 - keep)
    b[idx] = values[idx] if len(values) == len(b) else values
    return A.tocsc(), b


def sparse_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    x = spla.spsolve(sp.csc_matrix(A), b)
    if not np.all(np.isfinite(x)):
        raise SolverError("singular or ill-posed linear system")
    return x


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)


@dataclass(frozen=True)
class NewtonTolerances:
    res_rel: float = 1e-12
    res_abs: float = 1e-12
    step_rel: float = 1e-10
    step_abs: float = 1e-10
    max_iter: int = 100


def newton(system, u0: np.ndarray, fixed: np.ndarray, g: np.ndarray, tol: NewtonTolerances = NewtonTolerances()) -> NewtonResult:
    """Plain Newton iteration.

    ``system(u)`` returns ``(residual, jacobian)`` with ``residual = rhs - A(u) u``
    over all DOFs.  Dirichlet rows use the residual ``g - u``.  Stops when both the
    residual and the step norms meet their mixed tolerances.
    """
    u = np.array(u0, dtype=float, copy=True)
    fixed_idx = np.flatnonzero(fixed)
    res_hist, step_hist = [], []
    r0_norm = None
    u0_norm = float(np.linalg.norm(u))
    for it in range(1, tol.max_iter + 1):
        r, J = system(u)
        r = np.array(r, dtype=float)
        r[fixed_idx] = g[fixed_idx] - u[fixed_idx]
        rn = float(np.linalg.norm(r))
        if r0_norm is None:
            r0_norm = rn
        res_hist.append(rn)
        Jd, rd = apply_dirichlet(J, r, fixed, r)
        delta = sparse_solve(Jd, rd)
        u += delta
        dn = float(np.linalg.norm(delta))
        step_hist.append(dn)
        logger.debug("newton it %d residual %.3e step %.3e", it, rn, dn)
        if not np.isfinite(dn):
            raise SolverError("Newton iteration diverged", res_hist)
        if dn <= tol.step_rel * u0_norm + tol.step_abs:
            r_new, _ = system(u)
            r_new = np.array(r_new, dtype=float)
            r_new[fixed_idx] = g[fixed_idx] - u[fixed_idx]
            rn_new = float(np.linalg.norm(r_new))
            if rn_new <= tol.res_rel * r0_norm + tol.res_abs:
                res_hist.append(rn_new)
                return NewtonResult(u, it, True, res_hist, step_hist)
    raise SolverError(f"Newton did not converge in {tol.max_iter} iterations", res_hist)
