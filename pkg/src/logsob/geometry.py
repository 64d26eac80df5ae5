"""Discrete first- and second-order operators on an :class:`EmbeddedMesh`.

Everything is per vertex.  Conventions:

* ``laplace_beltrami`` is the P1 stiffness (cotangent weights for surfaces,
  inverse edge lengths for curves) divided by the barycentric dual measure.
* ``H = normal_part(laplace_beltrami(x))``; on a round sphere of radius ``r``
  this gives ``H = -(n / r**2) x`` so ``H + x_perp / 2`` vanishes at
  ``r = sqrt(2 n)``.
* The second fundamental form and the Hessian of scalar fields come from one
  weighted quadric fit over the 2-ring, expressed in the vertex tangent frame,
  and are trace-corrected so that ``tr II = H`` and ``tr D^2 u = Lap u``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import IllConditionedFit
from .mesh import EmbeddedMesh

_FIT_COND_MAX = 1e10



def _cell_hat_gradients(points, cells):
    """Gradients of the barycentric hat functions on each cell, shape (C, n+1, N)."""
    base = points[cells[:, 0]]
    E = points[cells[:, 1:]] - base[:, None, :]                  # (C, n, N)
    gram = np.einsum("cin,cjn->cij", E, E)
    G = np.einsum("cij,cjn->cin", np.linalg.inv(gram), E)      # dual basis rows
    g0 = -G.sum(axis=1, keepdims=True)
    return np.concatenate([g0, G], axis=1)


def _mixed_areas(points, cells, area):
    """Split each cell's measure among its vertices.

    Curves use half edges.  Triangles use the mixed Voronoi rule: circumcentric
    areas when the triangle is non-obtuse, otherwise half of the area to the
    obtuse corner and a quarter to each other corner.
    """
    if cells.shape[1] == 2:
        return np.repeat(area[:, None] / 2, 2, axis=1)
    P = points[cells]
    out = np.empty((len(cells), 3))
    cot = np.empty((len(cells), 3))
    sq = np.empty((len(cells), 3))                # squared length of the edge opposite corner k
    for k in range(3):
        a = P[:, (k + 1) % 3] - P[:, k]
        b = P[:, (k + 2) % 3] - P[:, k]
        dot = np.einsum("cn,cn->c", a, b)
        cot[:, k] = dot / (2 * area)
        sq[:, k] = np.einsum("cn,cn->c", a - b, a - b)
    for k in range(3):
        j, l = (k + 1) % 3, (k + 2) % 3
        # edge k-j is opposite l, edge k-l is opposite j
        out[:, k] = (sq[:, l] * cot[:, l] + sq[:, j] * cot[:, j]) / 8
    obtuse = cot < 0
    bad = obtuse.any(axis=1)
    out[bad] = area[bad, None] / 4
    out[obtuse] = (area[:, None] / 2 * np.ones(3))[obtuse]
    return out


def _k_ring(adj: sparse.csr_matrix, i: int, k: int) -> np.ndarray:
    seen = {i}
    frontier = [i]
    for _ in range(k):
        nxt = []
        for v in frontier:
            for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    seen.discard(i)
    return np.array(sorted(seen), dtype=np.int64)


class GeometryCache:
    """Per-vertex geometry of a mesh.

    Attributes are read-only arrays indexed by vertex.  ``dual_measure`` is the
    barycentric lumped measure, which makes :func:`divergence` the exact
    negative adjoint of the cell gradient and ``divergence o gradient`` the
    cotangent Laplacian.  Mean curvature uses mixed Voronoi areas instead
    because those give a pointwise convergent ``H`` at irregular vertices.
    Tangent frames start from area-weighted cell projectors and are then
    re-estimated from the slope of a quadric fit, which removes the O(h)
    frame error of the projector average.
    """

    def __init__(self, mesh: EmbeddedMesh):
        self.mesh = mesh
        n, N = mesh.intrinsic_dim, mesh.ambient_dim
        X, C = mesh.vertices, mesh.cells
        V = mesh.n_vertices
        area = mesh.cell_measures

        self.hat_gradients = _cell_hat_gradients(X, C)             # (C, n+1, N)
        self.dual_measure = np.bincount(C.ravel(), np.repeat(area / (n + 1), n + 1), minlength=V)
        self.mixed_measure = np.bincount(C.ravel(), _mixed_areas(X, C, area).ravel(), minlength=V)

        # P1 stiffness: K_ij = -sum_T |T| <grad phi_i, grad phi_j>
        local = -np.einsum("c,cin,cjn->cij", area, self.hat_gradients, self.hat_gradients)
        rows = np.repeat(C, n + 1, axis=1).ravel()
        cols = np.tile(C, (1, n + 1)).ravel()
        K = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(V, V)).tocsr()
        K.sum_duplicates()
        self.stiffness = K

        E = X[C[:, 1:]] - X[C[:, :1]]
        proj = np.einsum("cin,cim->cnm", E, self.hat_gradients[:, 1:])   # projector onto each cell plane
        proj = 0.5 * (proj + proj.transpose(0, 2, 1))
        acc = np.zeros((V, N, N))
        for j in range(n + 1):
            np.add.at(acc, C[:, j], area[:, None, None] * proj)
        self.tangent_basis, self.normal_basis = _frames_from_projector(acc, n)

        self._stencil = self._build_stencil()
        self._operators = self._fit_operators(self._stencil)
        slope = self._linear_part(self._fit(X))                     # (V, n, N) tangent vectors of the fitted graph
        q, _ = np.linalg.qr(slope.transpose(0, 2, 1))               # (V, N, n)
        self.tangent_basis, self.normal_basis = _frames_from_projector(np.einsum("vna,vma->vnm", q, q), n)
        self._operators = self._fit_operators(self._stencil)

        self.lap_x = laplace_beltrami(self, X)
        self.mean_curvature = normal_part(self, (K @ X) / self.mixed_measure[:, None])

        star_area = np.bincount(C.ravel(), np.repeat(area, n + 1), minlength=V)
        self._star_weights = area[:, None] / star_area[C]            # (C, n+1)

        for a in ("dual_measure", "mixed_measure", "tangent_basis", "normal_basis", "lap_x",
                  "mean_curvature", "hat_gradients"):
            getattr(self, a).setflags(write=False)

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.mesh.intrinsic_dim

    def cell_gradient(self, u) -> np.ndarray:
        """Affine gradient of ``u`` on every cell, shape (C, N).

        Built from differences against the first vertex of each cell, so
        constants have exactly zero gradient.
        """
        u = np.asarray(u, dtype=float)
        vals = u[self.mesh.cells]
        return np.einsum("cin,ci...->cn...", self.hat_gradients[:, 1:], vals[:, 1:] - vals[:, :1])

    # ------------------------------------------------------------------
    # quadric fits
    def _build_stencil(self):
        """2-ring neighbourhoods (3-ring around low-valence surface vertices)."""
        mesh = self.mesh
        adj = mesh.vertex_adjacency
        V = mesh.n_vertices
        two = ((adj + adj @ adj) > 0).tolil()
        two.setdiag(0)
        two = two.tocsr()
        two.eliminate_zeros()
        rings = [two.indices[two.indptr[i]:two.indptr[i + 1]] for i in range(V)]
        if self.n == 2:
            valence = np.diff(adj.indptr)
            for i in np.flatnonzero(valence < 5):
                rings[i] = _k_ring(adj, i, 3)
        return rings

    def _fit_operators(self, rings):
        n = self.n
        V = self.mesh.n_vertices
        p = n + n * (n + 1) // 2
        ops = [None] * V
        sizes = np.array([len(r) for r in rings])
        for k in np.unique(sizes):
            group = np.flatnonzero(sizes == k)
            nb = np.array([rings[i] for i in group])
            ops_k, ok = self._fit_operator_batch(group, nb, p)
            for g, i in enumerate(group):
                if ok[g]:
                    ops[i] = ops_k[g]
        adj = self.mesh.vertex_adjacency
        for i in range(V):
            if ops[i] is None:
                # widen once before giving up
                wider = _k_ring(adj, i, 3)
                op, ok = self._fit_operator_batch(np.array([i]), wider[None, :], p)
                if not ok[0]:
                    raise IllConditionedFit(f"quadric fit at vertex {i} is ill-conditioned")
                rings[i] = wider
                ops[i] = op[0]
        kmax = max(len(r) for r in rings)
        idx = np.empty((V, kmax), dtype=np.int64)
        P = np.zeros((V, p, kmax))
        for i in range(V):
            idx[i, :len(rings[i])] = rings[i]
            idx[i, len(rings[i]):] = i          # padding points at the centre, whose difference is zero
            P[i, :, :len(rings[i])] = ops[i]
        return idx, P

    def _fit_operator_batch(self, centres, nb, p):
        k = nb.shape[1]
        if k < p:
            return None, np.zeros(len(centres), dtype=bool)
        X = self.mesh.vertices
        d = X[nb] - X[centres][:, None, :]                                  # (g, k, N)
        t = np.einsum("gkN,gaN->gka", d, self.tangent_basis[centres])      # (g, k, n)
        rho = np.linalg.norm(t, axis=2).max(axis=1)
        rho = np.where(rho > 0, rho, 1.0)
        s = t / rho[:, None, None]
        if self.n == 1:
            A = np.stack([s[..., 0], 0.5 * s[..., 0] ** 2], axis=2)
            scale = np.stack([rho, rho ** 2], axis=1)
        else:
            A = np.stack([s[..., 0], s[..., 1], 0.5 * s[..., 0] ** 2, s[..., 0] * s[..., 1],
                          0.5 * s[..., 1] ** 2], axis=2)
            scale = np.stack([rho, rho, rho ** 2, rho ** 2, rho ** 2], axis=1)
        w = 1.0 / np.linalg.norm(d, axis=2)
        AtW = A.transpose(0, 2, 1) * w[:, None, :]
        normal = AtW @ A
        ok = np.linalg.cond(normal) < _FIT_COND_MAX
        normal[~ok] = np.eye(p)
        ops = np.linalg.solve(normal, AtW) / scale[:, :, None]
        return ops, ok

    def _fit(self, values):
        """Fitted (linear, quadratic) coefficients of per-vertex values over each stencil."""
        idx, P = self._operators
        values = np.asarray(values, dtype=float)
        diff = values[idx] - values[:, None, ...]
        return np.einsum("vpk,vk...->vp...", P, diff)

    def _linear_part(self, coef):
        return coef[:, :self.n]

    def _quadratic_part(self, coef):
        if self.n == 1:
            return coef[:, 1][:, None, None, ...]
        q11, q12, q22 = coef[:, 2], coef[:, 3], coef[:, 4]
        return np.stack([np.stack([q11, q12], 1), np.stack([q12, q22], 1)], 1)

    @cached_property
    def raw_second_fundamental_form(self) -> np.ndarray:
        """Fitted II before trace correction, shape (V, n, n, N)."""
        Q = self._quadratic_part(self._fit(self.mesh.vertices))          # (V, n, n, N)
        Nb = self.normal_basis
        out = np.einsum("vabN,vmN,vmM->vabM", Q, Nb, Nb)
        out.setflags(write=False)
        return out

    @cached_property
    def second_fundamental_form(self) -> np.ndarray:
        """II trace-corrected so that ``tr II = H`` exactly, shape (V, n, n, N)."""
        II = self.raw_second_fundamental_form.copy()
        tr = np.einsum("vaaN->vN", II)
        fix = (self.mean_curvature - tr) / self.n
        for a in range(self.n):
            II[:, a, a] += fix
        II.setflags(write=False)
        return II

    @cached_property
    def fit_trace_defect(self) -> np.ndarray:
        """``|tr II_fit - H|`` per vertex, the quadric-fit error indicator."""
        tr = np.einsum("vaaN->vN", self.raw_second_fundamental_form)
        return np.linalg.norm(tr - self.mean_curvature, axis=1)


def _frames_from_projector(P, n):
    """Tangent (V, n, N) and normal (V, m, N) orthonormal bases from symmetric projector-like matrices."""
    _, vecs = np.linalg.eigh(P)
    N = P.shape[-1]
    tangent = np.ascontiguousarray(vecs[:, :, ::-1][:, :, :n].transpose(0, 2, 1))
    normal = np.ascontiguousarray(vecs[:, :, :N - n].transpose(0, 2, 1))
    return tangent, normal


def build_geometry_cache(mesh: EmbeddedMesh) -> GeometryCache:
    return GeometryCache(mesh)


# ----------------------------------------------------------------------
# operators

def tangential_part(cache: GeometryCache, V) -> np.ndarray:
    T = cache.tangent_basis
    return np.einsum("van,va->vn", T, np.einsum("van,vn->va", T, np.asarray(V, dtype=float)))


def normal_part(cache: GeometryCache, V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    return V - tangential_part(cache, V)


def tangent_coordinates(cache: GeometryCache, V) -> np.ndarray:
    return np.einsum("van,vn->va", cache.tangent_basis, np.asarray(V, dtype=float))


def gradient(cache: GeometryCache, f, *, per_cell=False) -> np.ndarray:
    """Tangential gradient of a scalar field.

    Per-vertex values are the measure-weighted average of the affine cell
    gradients over the vertex star, projected onto the vertex tangent space.
    With ``per_cell=True`` the raw cell gradients are returned instead.
    """
    g = cache.cell_gradient(f)
    if per_cell:
        return g
    mesh = cache.mesh
    C = mesh.cells
    acc = np.zeros((mesh.n_vertices, mesh.ambient_dim))
    for j in range(C.shape[1]):
        np.add.at(acc, C[:, j], cache._star_weights[:, j, None] * g)
    return tangential_part(cache, acc)


def divergence(cache: GeometryCache, V, *, per_cell=False) -> np.ndarray:
    """Divergence as the negative adjoint of the cell gradient.

    ``sum_i w_i div(V)_i g_i = -sum_T |T| <V_T, grad_T g>`` for every ``g``.
    Vertex fields are projected to their tangential part and averaged onto
    cells; ``per_cell=True`` takes cell values directly, so that
    ``divergence(gradient(u, per_cell=True), per_cell=True)`` equals
    ``laplace_beltrami(u)``.
    """
    mesh = cache.mesh
    V = np.asarray(V, dtype=float)
    if per_cell:
        VT = V
    else:
        VT = tangential_part(cache, V)[mesh.cells].mean(axis=1)
    local = mesh.cell_measures[:, None] * np.einsum("cn,cin->ci", VT, cache.hat_gradients)
    out = -np.bincount(mesh.cells.ravel(), local.ravel(), minlength=mesh.n_vertices)
    return out / cache.dual_measure


def laplace_beltrami(cache: GeometryCache, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = cache.stiffness @ f
    return out / (cache.dual_measure if f.ndim == 1 else cache.dual_measure[:, None])


def hessian(cache: GeometryCache, u, *, trace_correct=True) -> np.ndarray:
    """Per-vertex tangential Hessian (V, n, n) in the vertex tangent basis."""
    Q = cache._quadratic_part(cache._fit(u))
    if trace_correct:
        fix = (laplace_beltrami(cache, u) - np.trace(Q, axis1=1, axis2=2)) / cache.n
        Q = Q + fix[:, None, None] * np.eye(cache.n)
    return Q


def pair_second_fundamental_form(cache: GeometryCache, y) -> np.ndarray:
    """``<II, y>`` per vertex, shape (V, n, n); ``y`` is (V, N) or (N,)."""
    y = np.broadcast_to(np.asarray(y, dtype=float), (cache.mesh.n_vertices, cache.mesh.ambient_dim))
    return np.einsum("vabN,vN->vab", cache.second_fundamental_form, y)
