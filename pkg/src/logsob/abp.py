"""Numerical reenactment of the ABP-style proof of the plain-form inequality.

For a connected mesh and a unit-mass density ``f``:

1. ``alpha = -(int f log f - int |grad f|^2/f - int f |H|^2)``;
2. solve ``div(f grad u) = f log f - |grad f|^2/f - f |H|^2 + alpha f``,
   which is compatible because the right side integrates to zero;
3. on the normal bundle, ``Phi(x, y) = grad u(x) + y`` and the contact set
   ``A = {D^2 u(x) - <II(x), y> >= 0}``;
4. every ``xi`` is hit by ``Phi`` on ``A`` (probe: minimise ``u - <x, xi>``);
5. on ``A``, ``det(D^2 u - <II, y>) <= f exp(-|2H + y|^2/4 + |Phi|^2/4 + alpha - n)``;
6. integrating that bound over the normal fibres gives
   ``alpha - n - (n/2) log(4 pi) >= 0``, which is exactly the deficit.

Discretely the only inexact step is the pointwise non-divergence form of
the PDE in step 5.  Its defect ``pde_defect`` is measured per vertex and is
the tolerance of the Jacobian-bound check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DisconnectedInput, QuadratureUnderflow
from .functionals import _positive, entropy_constant, fisher_density
from .geometry import GeometryCache, gradient, hessian, laplace_beltrami, tangential_part
from .linalg import DEFAULT_TOL, SolveReport, assemble_weighted_laplacian, solve_mean_zero, sym_det, sym_eig_max, sym_eig_min

FIBER_CAP = 12.0
GRID_POINTS = 64
PSD_RTOL = 1e-8
MASS_TOL = 1e-12


@dataclass(frozen=True)
class AbpState:
    cache: GeometryCache
    f: np.ndarray
    alpha: float
    u: np.ndarray
    rhs: np.ndarray
    solve: SolveReport
    entropy0: float
    fisher: float
    curvature: float
    grad_f: np.ndarray = field(repr=False)
    grad_u: np.ndarray = field(repr=False)
    lap_u: np.ndarray = field(repr=False)
    hess_u: np.ndarray = field(repr=False)
    pde_defect: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.cache.n

    @property
    def proof_constant(self) -> float:
        """``alpha - n - (n/2) log(4 pi)``; equal to the unit-mass deficit."""
        return self.alpha - entropy_constant(self.n)

    def pde_residual(self) -> float:
        L = assemble_weighted_laplacian(self.cache, self.f)
        return float(np.linalg.norm(L @ self.u - self.rhs) / max(np.linalg.norm(self.rhs), 1e-300))


def prepare_abp(cache: GeometryCache, f, tol=DEFAULT_TOL) -> AbpState:
    """Normalise ``f``, compute ``alpha`` and solve the weighted PDE for ``u``."""
    mesh = cache.mesh
    if mesh.n_components != 1:
        raise DisconnectedInput("the proof construction needs a connected mesh; audit each component")
    w = cache.dual_measure
    f = _positive(f, mesh.n_vertices)
    f = f / (w @ f)
    if abs(w @ f - 1) > MASS_TOL:
        raise AssertionError("normalisation failed")

    H = cache.mean_curvature
    H2 = np.einsum("vn,vn->v", H, H)
    logf = np.log(f)
    q = fisher_density(cache, f)                  # lumped |grad f|^2 / f
    entropy0 = float(w @ (f * logf))
    fisher = float(w @ q)
    curvature = float(w @ (f * H2))
    alpha = -(entropy0 - fisher - curvature)

    rhs = w * (f * logf - q - f * H2 + alpha * f)
    L = assemble_weighted_laplacian(cache, f)
    # rhs is a cancellation of O(1) terms; allow rounding at their scale
    scale = w @ (np.abs(f * logf) + q + f * H2 + abs(alpha) * f)
    u, report = solve_mean_zero(L, rhs, tol, weights=w, atol=1e-12 * scale)

    grad_f = gradient(cache, f)
    grad_u = gradient(cache, u)
    lap_u = laplace_beltrami(cache, u)
    hess_u = hessian(cache, u)
    gfu = np.einsum("vn,vn->v", grad_f, grad_u)
    gf2 = np.einsum("vn,vn->v", grad_f, grad_f)
    # how far the vertex values miss Lap u = log f - |grad f|^2/f^2 - |H|^2 - <grad f, grad u>/f + alpha
    defect = lap_u - (logf - gf2 / f ** 2 - H2 - gfu / f + alpha)

    arrays = dict(grad_f=grad_f, grad_u=grad_u, lap_u=lap_u, hess_u=hess_u, pde_defect=defect)
    for a in arrays.values():
        a.setflags(write=False)
    return AbpState(cache, f, float(alpha), u, rhs, report, entropy0, fisher, curvature, **arrays)


# ----------------------------------------------------------------------
# normal bundle

@dataclass
class NormalBundleSample:
    """A batch of normal-bundle points ``(x_i, y)`` with their contact-set data."""

    vertex: np.ndarray          # (S,)
    y: np.ndarray               # (S, N)
    matrix: np.ndarray          # (S, n, n)  D^2 u - <II, y>
    phi: np.ndarray             # (S, N)     grad u + y
    eig_min: np.ndarray         # (S,)
    member: np.ndarray          # (S,) bool

    def __len__(self):
        return len(self.vertex)

    def subset(self, mask):
        return NormalBundleSample(self.vertex[mask], self.y[mask], self.matrix[mask], self.phi[mask],
                                  self.eig_min[mask], self.member[mask])


def psd_tolerance(M, rtol=PSD_RTOL):
    norm = np.maximum(np.abs(sym_eig_min(M)), np.abs(sym_eig_max(M)))
    return rtol * (1 + norm)


def evaluate_points(state: AbpState, vertex, y, psd_rtol=PSD_RTOL) -> NormalBundleSample:
    """Contact-set matrix, ``Phi`` and membership for given base vertices and normal vectors."""
    cache = state.cache
    vertex = np.asarray(vertex, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    II = cache.second_fundamental_form[vertex]
    M = state.hess_u[vertex] - np.einsum("sabN,sN->sab", II, y)
    lam = sym_eig_min(M)
    member = lam >= -psd_tolerance(M, psd_rtol)
    phi = state.grad_u[vertex] + y
    return NormalBundleSample(vertex, y, M, phi, lam, member)


def _fiber_nodes(m, cap, points):
    x, w = leggauss(points)
    x, w = cap * x, cap * w
    grids = np.meshgrid(*([x] * m), indexing="ij")
    weights = np.prod(np.meshgrid(*([w] * m), indexing="ij"), axis=0)
    return np.stack([g.ravel() for g in grids], axis=1), weights.ravel()


def sample_A(state: AbpState, strategy="grid", *, vertices=None, n_per_vertex=64, cap=FIBER_CAP,
             grid_points=GRID_POINTS, seed=0, psd_rtol=PSD_RTOL) -> NormalBundleSample:
    """Sample the normal bundle around ``y = -2H`` and flag contact-set membership.

    ``grid`` uses ``grid_points`` nodes per normal direction on the ball
    ``|2H + y| <= cap``; ``gaussian`` draws ``n_per_vertex`` points from the
    density proportional to ``exp(-|2H + y|^2 / 4)`` restricted to that ball.
    """
    cache = state.cache
    mesh = cache.mesh
    m = mesh.codim
    vertices = np.arange(mesh.n_vertices) if vertices is None else np.asarray(vertices, dtype=np.int64)
    if strategy == "grid":
        axis = np.linspace(-cap, cap, grid_points)
        s = np.stack([g.ravel() for g in np.meshgrid(*([axis] * m), indexing="ij")], axis=1)
        s = s[np.linalg.norm(s, axis=1) <= cap]
        coords = np.broadcast_to(s, (len(vertices),) + s.shape)
    elif strategy == "gaussian":
        rng = np.random.default_rng(seed)
        coords = rng.normal(scale=math.sqrt(2.0), size=(len(vertices), n_per_vertex, m))
        r = np.linalg.norm(coords, axis=2, keepdims=True)
        coords = np.where(r > cap, coords * (cap / np.maximum(r, 1e-300)), coords)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    Nb = cache.normal_basis[vertices]                                   # (V', m, N)
    y = np.einsum("vsm,vmN->vsN", coords, Nb) - 2 * cache.mean_curvature[vertices][:, None, :]
    vid = np.repeat(vertices, coords.shape[1])
    return evaluate_points(state, vid, y.reshape(-1, mesh.ambient_dim), psd_rtol)


@dataclass
class Lemma2Report:
    """Per-sample Jacobian-bound data for members of the contact set."""

    vertex: np.ndarray
    det: np.ndarray
    bound: np.ndarray           # f exp(-|2H+y|^2/4 + |Phi|^2/4 + alpha - n)
    log_margin: np.ndarray      # log(bound) - log(det); +inf where det <= 0
    tolerance: np.ndarray       # allowed log excess: max(pde_defect, 0) + rounding
    chain_lhs: np.ndarray       # Lap u - <H, y>
    chain_rhs: np.ndarray       # log f - |2H+y|^2/4 + |Phi|^2/4 + alpha
    slack: np.ndarray           # |2 grad f + f grad u|^2 / (4 f^2), dropped in the estimate
    trace_gap: np.ndarray       # tr M - (Lap u - <H, y>)
    lower_violation: np.ndarray
    upper_violation: np.ndarray

    @property
    def n_samples(self):
        return len(self.det)

    @property
    def n_violations(self):
        return int(self.lower_violation.sum() + self.upper_violation.sum())

    @property
    def tolerance_used(self):
        """Samples whose bound only holds thanks to the measured PDE defect."""
        return int(np.sum((self.log_margin < 0) & ~self.upper_violation))

    def summary(self, bins=20):
        finite = self.log_margin[np.isfinite(self.log_margin)]
        hist, edges = np.histogram(finite, bins=bins) if len(finite) else (np.zeros(0), np.zeros(0))
        return {"samples": self.n_samples, "violations": self.n_violations,
                "lower_violations": int(self.lower_violation.sum()),
                "upper_violations": int(self.upper_violation.sum()),
                "tolerance_used": self.tolerance_used,
                "min_log_margin": float(finite.min()) if len(finite) else None,
                "max_tolerance": float(self.tolerance.max()) if len(self.tolerance) else 0.0,
                "margin_histogram": {"counts": hist.tolist(), "edges": edges.tolist()}}


def lemma2_check(state: AbpState, samples: NormalBundleSample, rounding=1e-9) -> Lemma2Report:
    """Check ``0 <= det M`` and the Jacobian upper bound on contact-set samples."""
    s = samples.subset(samples.member)
    cache = state.cache
    n = state.n
    v = s.vertex
    f = state.f[v]
    H = cache.mean_curvature[v]
    two_h_y = 2 * H + s.y
    a2 = np.einsum("sn,sn->s", two_h_y, two_h_y)
    p2 = np.einsum("sn,sn->s", s.phi, s.phi)
    det = sym_det(s.matrix)
    log_bound = np.log(f) - a2 / 4 + p2 / 4 + state.alpha - n
    with np.errstate(divide="ignore"):
        log_margin = np.where(det > 0, log_bound - np.log(np.where(det > 0, det, 1.0)), np.inf)
    tol = np.maximum(state.pde_defect[v], 0.0) + rounding
    lower_tol = psd_tolerance(s.matrix) * (1 + np.abs(s.matrix).max(axis=(1, 2))) ** (n - 1)

    chain_lhs = state.lap_u[v] - np.einsum("sn,sn->s", H, s.y)
    chain_rhs = log_bound + n
    gf, gu = state.grad_f[v], state.grad_u[v]
    sq = 2 * gf + f[:, None] * gu
    slack = np.einsum("sn,sn->s", sq, sq) / (4 * f ** 2)
    trace_gap = np.trace(s.matrix, axis1=1, axis2=2) - chain_lhs
    return Lemma2Report(v, det, np.exp(log_bound), log_margin, tol, chain_lhs, chain_rhs, slack, trace_gap,
                        det < -lower_tol, log_margin < -tol)


# ----------------------------------------------------------------------
# surjectivity probes

@dataclass
class ProbeResult:
    vertex: np.ndarray
    y: np.ndarray
    member: np.ndarray
    eig_min: np.ndarray
    tangential_residual: np.ndarray
    ties: np.ndarray            # number of other vertices within 1e-12 of the minimum

    def summary(self, h=None):
        out = {"probes": int(len(self.vertex)), "member_fraction": float(self.member.mean()),
               "max_tangential_residual": float(self.tangential_residual.max()),
               "min_eig_min": float(self.eig_min.min()), "ties": int(np.sum(self.ties > 0))}
        if h is not None:
            out["h"] = h
            out["residual_over_h"] = float(self.tangential_residual.max() / h)
        return out


def lemma1_probe(state: AbpState, xi, chunk=512) -> ProbeResult:
    """For each ``xi``, minimise ``u_i - <x_i, xi>`` over vertices and test the hit point.

    ``xi`` is (N,) or (K, N).  The first minimiser in index order wins.
    """
    cache = state.cache
    X = cache.mesh.vertices
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    idx = np.empty(len(xi), dtype=np.int64)
    ties = np.empty(len(xi), dtype=np.int64)
    for a in range(0, len(xi), chunk):
        vals = state.u[None, :] - xi[a:a + chunk] @ X.T
        i = np.argmin(vals, axis=1)
        best = vals[np.arange(len(i)), i]
        idx[a:a + chunk] = i
        ties[a:a + chunk] = np.sum(vals <= best[:, None] + 1e-12, axis=1) - 1
    d = xi - state.grad_u[idx]
    # per-point projections at the selected vertices
    T = cache.tangent_basis[idx]
    tan = np.einsum("san,sa->sn", T, np.einsum("san,sn->sa", T, d))
    y = d - tan
    pts = evaluate_points(state, idx, y)
    return ProbeResult(idx, y, pts.member, pts.eig_min, np.linalg.norm(tan, axis=1), ties)


# ----------------------------------------------------------------------
# fibre integration

def fiber_integrals(cache: GeometryCache, cap=None, points=GRID_POINTS) -> np.ndarray:
    """``int exp(-|2H(x) + y|^2 / 4) dy`` over the normal fibre at each vertex.

    Tensor Gauss-Legendre on the box ``[-cap, cap]^m`` of normal coordinates.
    The exact value is ``(4 pi)^(m/2)``; the box must contain the ball of
    radius 12 around ``-2H`` or :class:`QuadratureUnderflow` is raised.
    """
    mesh = cache.mesh
    m = mesh.codim
    h_coords = 2 * np.einsum("vmN,vN->vm", cache.normal_basis, cache.mean_curvature)   # (V, m)
    need = FIBER_CAP + np.abs(h_coords).max()
    cap = need if cap is None else float(cap)
    if cap < need:
        raise QuadratureUnderflow(f"fibre box half-width {cap:.3g} is below the required {need:.3g}")
    nodes, weights = _fiber_nodes(m, cap, points)
    out = np.empty(mesh.n_vertices)
    for a in range(0, mesh.n_vertices, 256):
        z = h_coords[a:a + 256, None, :] + nodes[None, :, :]
        out[a:a + 256] = np.exp(-np.einsum("vkm,vkm->vk", z, z) / 4) @ weights
    return out


def reconstruct_constant(state: AbpState, cap=None, points=GRID_POINTS) -> float:
    """Integrate the Jacobian bound over the normal bundle and return the log of the covered mass.

    Returns ``log((4 pi)^(-(n+m)/2) sum_i w_i f_i F_i exp(alpha - n))`` with
    ``F_i`` the fibre integrals.  For exact fibre integrals this equals
    ``alpha - n - (n/2) log(4 pi)``, the plain-form deficit at unit mass.
    """
    cache = state.cache
    n, m = state.n, cache.mesh.codim
    F = fiber_integrals(cache, cap, points)
    total = cache.dual_measure @ (state.f * F)
    return -(n + m) / 2 * math.log(4 * math.pi) + state.alpha - n + math.log(total)


def audit_summary(state: AbpState, *, probes=10_000, samples_per_vertex=64, seed=0, strategy="gaussian",
                  max_vertices=None):
    """Everything the ``abp-audit`` command reports, as plain data."""
    cache = state.cache
    mesh = cache.mesh
    rng = np.random.default_rng(seed)
    verts = np.arange(mesh.n_vertices)
    if max_vertices is not None and max_vertices < mesh.n_vertices:
        verts = np.sort(rng.choice(mesh.n_vertices, max_vertices, replace=False))
    samples = sample_A(state, strategy, vertices=verts, n_per_vertex=samples_per_vertex, seed=seed)
    l2 = lemma2_check(state, samples)
    xi = rng.normal(scale=math.sqrt(2.0), size=(probes, mesh.ambient_dim))
    pr = lemma1_probe(state, xi)
    h = mesh.mesh_size()
    return {
        "alpha": state.alpha,
        "proof_constant": state.proof_constant,
        "reconstructed_constant": reconstruct_constant(state),
        "solve": state.solve.to_dict(),
        "pde_residual": state.pde_residual(),
        "max_pde_defect": float(np.abs(state.pde_defect).max()),
        "contact_samples": int(len(samples)),
        "contact_members": int(samples.member.sum()),
        "lemma2": l2.summary(),
        "lemma1": pr.summary(h),
    }


def tangential_check(cache, vectors):
    """Largest tangential component of per-vertex vectors (used to validate normal samples)."""
    return float(np.linalg.norm(tangential_part(cache, vectors), axis=1).max())


__all__ = ["AbpState", "Lemma2Report", "NormalBundleSample", "ProbeResult", "audit_summary", "evaluate_points",
           "fiber_integrals", "lemma1_probe", "lemma2_check", "prepare_abp", "reconstruct_constant",
           "sample_A"]
