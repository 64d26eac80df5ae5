"""Closed simplicial submanifolds of Euclidean space and canonical test shapes.

A mesh is an ``n``-dimensional simplicial complex (``n`` in {1, 2}) whose
vertices live in ``R^N``.  Meshes are validated once and never mutated; any
refinement produces a new object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import BoundaryDetected, DegenerateCell, IndexOutOfRange, MeshError, UnsupportedSpec

MAX_AMBIENT_DIM = 8
# relative to the squared mesh scale; anything below is a collapsed simplex
_DEGENERATE_RTOL = 1e-12


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def simplex_measures(points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """n-dimensional measure of each simplex (Gram determinant formula)."""
    base = points[cells[:, 0]]
    edges = points[cells[:, 1:]] - base[:, None, :]          # (C, n, N)
    gram = np.einsum("cin,cjn->cij", edges, edges)
    n = cells.shape[1] - 1
    det = np.linalg.det(gram) if n > 1 else gram[:, 0, 0]
    return np.sqrt(np.clip(det, 0.0, None)) / math.factorial(n)


class EmbeddedMesh:
    """Validated closed simplicial ``n``-manifold in ``R^N``.

    Use :func:`build_mesh` rather than calling the constructor directly; the
    constructor trusts its inputs.
    """

    def __init__(self, vertices, cells, component_labels, closed=True):
        self.vertices = _readonly(np.asarray(vertices, dtype=float))
        self.cells = _readonly(np.asarray(cells, dtype=np.int64))
        self.component_labels = _readonly(np.asarray(component_labels, dtype=np.int64))
        self.closed = closed

    @property
    def intrinsic_dim(self) -> int:
        return self.cells.shape[1] - 1

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def codim(self) -> int:
        return self.ambient_dim - self.intrinsic_dim

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_components(self) -> int:
        return int(self.component_labels.max()) + 1

    @cached_property
    def cell_measures(self) -> np.ndarray:
        return _readonly(simplex_measures(self.vertices, self.cells))

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        pairs = np.concatenate([self.cells[:, [a, b]] for a, b in combinations(range(self.cells.shape[1]), 2)])
        pairs.sort(axis=1)
        return _readonly(np.unique(pairs, axis=0))

    @cached_property
    def cell_components(self) -> np.ndarray:
        return _readonly(self.component_labels[self.cells[:, 0]])

    @cached_property
    def vertex_adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        V = self.n_vertices
        data = np.ones(2 * len(e))
        adj = sparse.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(V, V))
        return adj.tocsr()

    def mesh_size(self) -> float:
        """Longest edge length ``h``."""
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).max())

    def euler_characteristic(self) -> int:
        if self.intrinsic_dim == 1:
            return self.n_vertices - self.n_cells
        return self.n_vertices - len(self.edges) + self.n_cells

    def component(self, k: int) -> tuple["EmbeddedMesh", np.ndarray]:
        """Sub-mesh of component ``k`` and the original indices of its vertices."""
        keep = np.flatnonzero(self.component_labels == k)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        cells = remap[self.cells[self.cell_components == k]]
        sub = EmbeddedMesh(self.vertices[keep], cells, np.zeros(len(keep), dtype=np.int64), self.closed)
        return sub, keep

    def translated(self, offset) -> "EmbeddedMesh":
        offset = np.asarray(offset, dtype=float)
        return EmbeddedMesh(self.vertices + offset, self.cells, self.component_labels, self.closed)

    def __repr__(self):
        return (f"EmbeddedMesh(n={self.intrinsic_dim}, N={self.ambient_dim}, V={self.n_vertices}, "
                f"cells={self.n_cells}, components={self.n_components})")


def _component_labels(n_vertices, cells):
    # vertices are connected through shared cells
    k = cells.shape[1]
    rows = np.repeat(cells[:, 0], k - 1)
    cols = cells[:, 1:].ravel()
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    _, labels = connected_components(g, directed=False)
    # relabel by first appearance so labels are deterministic in vertex order
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return relabel[labels]


def build_mesh(vertices, cells, ambient_dim=None, *, allow_boundary=False) -> EmbeddedMesh:
    """Validate raw arrays and return an :class:`EmbeddedMesh`.

    Every (n-1)-face must be shared by exactly two cells, every cell must have
    positive measure and every vertex must belong to some cell.
    ``allow_boundary`` skips the closedness check; it exists for local operator
    tests on planar patches and such meshes are rejected by the functionals.
    """
    V = np.asarray(vertices, dtype=float)
    C = np.asarray(cells)
    if V.ndim != 2 or V.shape[0] == 0 or C.ndim != 2 or C.shape[0] == 0:
        raise MeshError("vertices and cells must be nonempty 2-d arrays")
    if ambient_dim is not None and V.shape[1] != ambient_dim:
        raise MeshError(f"vertices have {V.shape[1]} coordinates, expected ambient_dim={ambient_dim}")
    n = C.shape[1] - 1
    if n not in (1, 2):
        raise MeshError(f"only curves and surfaces are supported, got {n}-simplices")
    N = V.shape[1]
    if not n < N <= MAX_AMBIENT_DIM:
        raise MeshError(f"ambient dimension {N} must exceed n={n} and be at most {MAX_AMBIENT_DIM}")
    if not np.issubdtype(C.dtype, np.integer):
        if not np.all(np.equal(np.mod(C, 1), 0)):
            raise IndexOutOfRange("cell indices must be integers")
    C = C.astype(np.int64)
    if C.min() < 0 or C.max() >= V.shape[0]:
        raise IndexOutOfRange(f"cell index out of range [0, {V.shape[0]})")
    if np.any(np.diff(np.sort(C, axis=1), axis=1) == 0):
        raise DegenerateCell("cell with repeated vertex")
    if not np.all(np.isfinite(V)):
        raise MeshError("non-finite vertex coordinate")

    unused = np.setdiff1d(np.arange(V.shape[0]), C.ravel())
    if len(unused):
        raise MeshError(f"{len(unused)} vertices belong to no cell (first: {unused[0]})")

    if not allow_boundary:
        faces = np.concatenate([np.delete(C, j, axis=1) for j in range(n + 1)])
        faces.sort(axis=1)
        _, counts = np.unique(faces, axis=0, return_counts=True)
        bad = counts != 2
        if np.any(bad):
            raise BoundaryDetected(f"{int(bad.sum())} ({n - 1})-faces without exactly two cofaces")

    meas = simplex_measures(V, C)
    scale = np.ptp(V, axis=0).max() if V.shape[0] > 1 else 1.0
    degenerate = meas <= _DEGENERATE_RTOL * max(scale, 1e-300) ** n
    if np.any(degenerate):
        raise DegenerateCell(f"{int(degenerate.sum())} cells with zero measure")

    labels = _component_labels(V.shape[0], C)
    return EmbeddedMesh(V, C, labels, closed=not allow_boundary)


def total_measure(mesh: EmbeddedMesh) -> float:
    return float(mesh.cell_measures.sum())


# ---------------------------------------------------------------------------
# shape generators

SHAPE_KINDS = ("circle", "sphere2", "torus3", "clifford_torus4", "disjoint_union")
_MIN_RESOLUTION = {"circle": 16, "sphere2": 162, "torus3": 64, "clifford_torus4": 64}


@dataclass(frozen=True)
class ShapeSpec:
    """Description of a generated test shape.

    ``radii`` is ``(r,)`` for circle/sphere2, ``(R, a)`` for torus3 and
    ``(r1, r2)`` for clifford_torus4.  ``resolution`` is a vertex-count target,
    or an explicit ``(nu, nv)`` grid for the tori.  A disjoint union takes its
    pieces from ``parts`` and ignores the other fields except ``center``.
    """

    kind: str
    radii: tuple = (1.0,)
    resolution: int | tuple = 0
    center: tuple | None = None
    parts: tuple = field(default=())

    def validate(self):
        if self.kind not in SHAPE_KINDS:
            raise UnsupportedSpec(f"unknown shape kind {self.kind!r}")
        if self.kind == "disjoint_union":
            if len(self.parts) != 2:
                raise UnsupportedSpec("disjoint_union takes exactly two parts")
            for p in self.parts:
                p.validate()
            return
        want = 2 if self.kind in ("torus3", "clifford_torus4") else 1
        if len(self.radii) != want:
            raise UnsupportedSpec(f"{self.kind} takes {want} radius parameter(s)")
        if any(not (r > 0 and math.isfinite(r)) for r in self.radii):
            raise UnsupportedSpec("radii must be positive")
        if self.kind == "torus3" and self.radii[1] >= self.radii[0]:
            raise UnsupportedSpec("torus3 needs tube radius a < R")
        res = self.resolution
        total = res[0] * res[1] if isinstance(res, tuple) else res
        if isinstance(res, tuple) and (len(res) != 2 or min(res) < 3):
            raise UnsupportedSpec("grid resolution must be (nu, nv) with both >= 3")
        if res and total < _MIN_RESOLUTION[self.kind]:
            raise UnsupportedSpec(f"{self.kind} resolution {total} below minimum {_MIN_RESOLUTION[self.kind]}")


_DEFAULT_RES = {"circle": 256, "sphere2": 2562, "torus3": 1024, "clifford_torus4": 1024}
_AMBIENT = {"circle": 2, "sphere2": 3, "torus3": 3, "clifford_torus4": 4}


def _circle(r, k):
    t = 2 * np.pi * np.arange(k) / k
    pts = r * np.column_stack([np.cos(t), np.sin(t)])
    cells = np.column_stack([np.arange(k), (np.arange(k) + 1) % k])
    return pts, cells


def icosphere(level: int):
    """Unit icosphere after ``level`` midpoint subdivisions (10*4**level + 2 vertices)."""
    p = (1 + math.sqrt(5)) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
             (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
             (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    pts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = pts[a] + pts[b]
                pts.append(m / np.linalg.norm(m))
                cache[key] = len(pts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(pts), np.array(faces, dtype=np.int64)


def _sphere_level(resolution):
    if not resolution:
        resolution = _DEFAULT_RES["sphere2"]
    levels = [10 * 4 ** k + 2 for k in range(9)]
    # closest level in log scale, ties go to the finer mesh
    return min(range(len(levels)), key=lambda k: (abs(math.log(levels[k] / resolution)), -k))


def _grid_shape(resolution, ratio):
    if isinstance(resolution, tuple):
        return resolution
    total = resolution or _DEFAULT_RES["torus3"]
    nu = max(3, round(math.sqrt(total * ratio)))
    nv = max(3, round(total / nu))
    return nu, nv


def _grid_cells(nu, nv):
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * nv + j
    b = ((i + 1) % nu) * nv + j
    c = ((i + 1) % nu) * nv + (j + 1) % nv
    d = i * nv + (j + 1) % nv
    return np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])


def _raw_shape(spec: ShapeSpec):
    kind = spec.kind
    if kind == "circle":
        return _circle(spec.radii[0], spec.resolution or _DEFAULT_RES["circle"])
    if kind == "sphere2":
        pts, cells = icosphere(_sphere_level(spec.resolution))
        return spec.radii[0] * pts, cells
    if kind == "torus3":
        R, a = spec.radii
        nu, nv = _grid_shape(spec.resolution, R / a)
        u, v = np.meshgrid(2 * np.pi * np.arange(nu) / nu, 2 * np.pi * np.arange(nv) / nv, indexing="ij")
        u, v = u.ravel(), v.ravel()
        pts = np.column_stack([(R + a * np.cos(v)) * np.cos(u), (R + a * np.cos(v)) * np.sin(u), a * np.sin(v)])
        return pts, _grid_cells(nu, nv)
    if kind == "clifford_torus4":
        r1, r2 = spec.radii
        nu, nv = _grid_shape(spec.resolution, r1 / r2)
        u, v = np.meshgrid(2 * np.pi * np.arange(nu) / nu, 2 * np.pi * np.arange(nv) / nv, indexing="ij")
        u, v = u.ravel(), v.ravel()
        pts = np.column_stack([r1 * np.cos(u), r1 * np.sin(u), r2 * np.cos(v), r2 * np.sin(v)])
        return pts, _grid_cells(nu, nv)
    raise UnsupportedSpec(f"cannot generate {kind!r}")


def generate_shape(spec: ShapeSpec) -> EmbeddedMesh:
    """Generate the mesh described by ``spec`` with vertices exactly on the shape."""
    spec.validate()
    if spec.kind == "disjoint_union":
        a, b = (generate_shape(p) for p in spec.parts)
        if a.ambient_dim != b.ambient_dim or a.intrinsic_dim != b.intrinsic_dim:
            raise UnsupportedSpec("disjoint_union parts must share intrinsic and ambient dimension")
        lo_a, hi_a = a.vertices.min(0), a.vertices.max(0)
        lo_b, hi_b = b.vertices.min(0), b.vertices.max(0)
        if not np.any((hi_a < lo_b) | (hi_b < lo_a)):
            raise UnsupportedSpec("disjoint_union parts have overlapping bounding boxes")
        verts = np.vstack([a.vertices, b.vertices])
        cells = np.vstack([a.cells, b.cells + a.n_vertices])
        if spec.center is not None:
            verts = verts + np.asarray(spec.center, dtype=float)
        return build_mesh(verts, cells)
    pts, cells = _raw_shape(spec)
    N = _AMBIENT[spec.kind]
    if spec.center is not None:
        c = np.asarray(spec.center, dtype=float)
        if c.shape != (N,):
            raise UnsupportedSpec(f"center must have {N} coordinates")
        pts = pts + c
    return build_mesh(pts, cells, N)


def circle(r=1.0, resolution=256, center=None):
    return generate_shape(ShapeSpec("circle", (float(r),), resolution, center))


def sphere2(r=1.0, resolution=2562, center=None):
    return generate_shape(ShapeSpec("sphere2", (float(r),), resolution, center))


def torus3(R=2.0, a=1.0, resolution=1024, center=None):
    return generate_shape(ShapeSpec("torus3", (float(R), float(a)), resolution, center))


def clifford_torus4(r1=math.sqrt(2), r2=math.sqrt(2), resolution=(64, 64), center=None):
    return generate_shape(ShapeSpec("clifford_torus4", (float(r1), float(r2)), resolution, center))
