"""Sparse symmetric assembly, a kernel-aware conjugate-gradient solver and
closed-form routines for symmetric 1x1 / 2x2 matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import IncompatibleRhs, NoConvergence, NonpositiveDensity

DEFAULT_TOL = 1e-10
COMPAT_RTOL = 1e-10


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    kernel_projected: bool

    def to_dict(self):
        return {"iterations": self.iterations, "relative_residual": self.relative_residual,
                "kernel_projected": self.kernel_projected}


def check_symmetric(L: sparse.spmatrix, rtol=1e-12) -> bool:
    diff = abs(L - L.T)
    scale = abs(L).max() if L.nnz else 1.0
    return diff.nnz == 0 or diff.max() <= rtol * scale


def assemble_weighted_laplacian(cache, f) -> sparse.csr_matrix:
    """Matrix of ``u -> w * div(f grad u)``.

    Off-diagonal entries are the stiffness weights times the edge average of
    ``f``; the diagonal is minus the row sum, so constants are in the kernel.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (cache.mesh.n_vertices,):
        raise ValueError("density must have one value per vertex")
    if not np.all(f > 0) or not np.all(np.isfinite(f)):
        raise NonpositiveDensity("weighted Laplacian needs a finite positive density")
    K = cache.stiffness.tocoo()
    off = K.row != K.col
    r, c = K.row[off], K.col[off]
    data = K.data[off] * 0.5 * (f[r] + f[c])
    V = cache.mesh.n_vertices
    L = sparse.coo_matrix((data, (r, c)), shape=(V, V)).tocsr()
    L = L - sparse.diags(np.asarray(L.sum(axis=1)).ravel())
    L = L.tocsr()
    L.sum_duplicates()
    if not check_symmetric(L):
        raise AssertionError("assembled Laplacian is not symmetric")
    return L


def _component_mean_removal(labels, n_comp):
    counts = np.bincount(labels, minlength=n_comp).astype(float)

    def project(v):
        return v - (np.bincount(labels, v, minlength=n_comp) / counts)[labels]

    return project


def solve_mean_zero(L, rhs, tol=DEFAULT_TOL, *, labels=None, weights=None, maxiter=None, atol=0.0):
    """Solve ``L u = rhs`` on the complement of the per-component constants.

    ``L`` must be symmetric negative semidefinite with the constants of each
    connected component (given by ``labels``) as kernel.  ``rhs`` must sum to
    zero on every component up to ``1e-10 * ||rhs||_1 + atol``; the small
    remainder is projected away.  ``atol`` lets callers account for rounding
    when ``rhs`` is a difference of much larger terms.  The returned ``u`` has zero ``weights``-mean on every
    component.  Preconditioned CG with a Jacobi preconditioner, iteration cap
    ``20 * V`` by default.
    """
    rhs = np.asarray(rhs, dtype=float)
    V = len(rhs)
    labels = np.zeros(V, dtype=np.int64) if labels is None else np.asarray(labels)
    weights = np.ones(V) if weights is None else np.asarray(weights, dtype=float)
    n_comp = int(labels.max()) + 1
    maxiter = 20 * V if maxiter is None else maxiter

    l1 = np.abs(rhs).sum()
    sums = np.bincount(labels, rhs, minlength=n_comp)
    if np.any(np.abs(sums) > COMPAT_RTOL * l1 + atol):
        raise IncompatibleRhs(f"rhs has nonzero component sums {sums.tolist()} (compatibility violated)")
    project = _component_mean_removal(labels, n_comp)
    projected = bool(np.any(sums != 0))
    b = -project(rhs)                      # solve the SPD system (-L) u = -rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(V), SolveReport(0, 0.0, projected)

    A = -L
    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    u = np.zeros(V)
    r = b.copy()
    z = project(inv_diag * r)
    p = z.copy()
    rz = r @ z
    it = 0
    res = 1.0
    while it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        u += alpha * p
        r -= alpha * Ap
        r = project(r)
        it += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = project(inv_diag * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise NoConvergence(f"CG stopped after {it} iterations at relative residual {res:.3e}")

    wsum = np.bincount(labels, weights, minlength=n_comp)
    u -= (np.bincount(labels, weights * u, minlength=n_comp) / wsum)[labels]
    true_res = np.linalg.norm(L @ u - project(rhs)) / bnorm
    return u, SolveReport(it, float(true_res), projected)


# ----------------------------------------------------------------------
# symmetric 1x1 / 2x2

def sym_eig_min(M) -> np.ndarray:
    """Smallest eigenvalue of symmetric (..., n, n) matrices, n in {1, 2}."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    a, b, d = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    return 0.5 * (a + d) - np.hypot(0.5 * (a - d), b)


def sym_eig_max(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    a, b, d = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    return 0.5 * (a + d) + np.hypot(0.5 * (a - d), b)


def sym_det(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    b = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
    return M[..., 0, 0] * M[..., 1, 1] - b * b
