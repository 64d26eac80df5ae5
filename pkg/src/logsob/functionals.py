"""Terms of the submanifold log-Sobolev inequality, in plain and Gaussian form.

Plain form, for a positive density ``f`` on an ``n``-dimensional closed
submanifold::

    int f (log f + n + n/2 log 4 pi) - int |grad f|^2 / f - int f |H|^2
        <= (int f) log(int f)

Gaussian form, with ``dmu = (4 pi)^(-n/2) exp(-|x|^2 / 4) dvol`` and
``f = (4 pi)^(-n/2) exp(-|x|^2 / 4) phi``::

    int phi log phi dmu - int |grad phi|^2 / phi dmu - int phi |H + x_perp / 2|^2 dmu
        <= (int phi dmu) log(int phi dmu)

The deficit is right side minus left side.  Pointwise terms are lumped with
the dual measure.  The Fisher term is assembled per cell as
``4 |T| |grad_T sqrt(f)|^2`` (weighted by the cell mean of the Gaussian
weight in the Gaussian form), which is nonnegative and vanishes only on
constants; :func:`fisher_density` lumps it back to vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MixedForms, NonpositiveDensity
from .geometry import GeometryCache, normal_part

FORMS = ("theorem1", "corollary2")


def entropy_constant(n: int) -> float:
    """``n + (n/2) log(4 pi)``."""
    return n + 0.5 * n * math.log(4 * math.pi)


def _positive(f, V, what="density"):
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full(V, float(f))
    if f.shape != (V,):
        raise ValueError(f"{what} must have one value per vertex")
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise NonpositiveDensity(f"{what} must be finite and strictly positive")
    return f


@dataclass(frozen=True)
class GaussianWeights:
    values: np.ndarray
    total: float


def gaussian_weight_values(mesh) -> np.ndarray:
    X = mesh.vertices
    return (4 * math.pi) ** (-mesh.intrinsic_dim / 2) * np.exp(-np.einsum("vn,vn->v", X, X) / 4)


def gaussian_weights(cache: GeometryCache) -> GaussianWeights:
    vals = gaussian_weight_values(cache.mesh)
    return GaussianWeights(vals, float(cache.dual_measure @ vals))


def gaussian_density(cache: GeometryCache) -> float:
    """Gaussian density ``mu(Sigma)``."""
    return gaussian_weights(cache).total


def shrinker_residual(cache: GeometryCache) -> np.ndarray:
    """``H + x_perp / 2`` per vertex; zero on a self-shrinker."""
    return cache.mean_curvature + 0.5 * normal_part(cache, cache.mesh.vertices)


def to_density(mesh, phi) -> np.ndarray:
    phi = _positive(phi, mesh.n_vertices, "phi")
    return gaussian_weight_values(mesh) * phi


def to_gaussian_form(mesh, f) -> np.ndarray:
    f = _positive(f, mesh.n_vertices)
    return f / gaussian_weight_values(mesh)


def fisher_cells(cache: GeometryCache, f, cell_weight=None) -> np.ndarray:
    """Per-cell Fisher information ``4 |T| w_T |grad_T sqrt f|^2``."""
    g = cache.cell_gradient(np.sqrt(f))
    out = 4 * cache.mesh.cell_measures * np.einsum("cn,cn->c", g, g)
    return out if cell_weight is None else out * cell_weight


def fisher_density(cache: GeometryCache, f, cell_weight=None) -> np.ndarray:
    """Vertex-lumped Fisher density; ``dual_measure @ fisher_density == sum(fisher_cells)``."""
    mesh = cache.mesh
    k = mesh.intrinsic_dim + 1
    per = fisher_cells(cache, f, cell_weight) / k
    return np.bincount(mesh.cells.ravel(), np.repeat(per, k), minlength=mesh.n_vertices) / cache.dual_measure


@dataclass(frozen=True)
class DeficitReport:
    """All terms of one form of the inequality.

    ``deficit = rhs - (entropy_term - fisher_term - curvature_term)`` with
    ``rhs = mass * log(mass)``.  ``components`` holds the same report per
    connected component when the mesh has more than one.
    """

    form: str
    entropy_term: float
    fisher_term: float
    curvature_term: float
    mass: float
    rhs: float
    deficit: float
    intrinsic_dim: int
    components: tuple = field(default=(), repr=False)
    metadata: dict = field(default_factory=dict, repr=False)

    @property
    def lhs(self) -> float:
        return self.entropy_term - self.fisher_term - self.curvature_term

    def to_dict(self, include_components=True):
        d = {"form": self.form, "entropy_term": self.entropy_term, "fisher_term": self.fisher_term,
             "curvature_term": self.curvature_term, "mass": self.mass, "rhs": self.rhs,
             "deficit": self.deficit, "intrinsic_dim": self.intrinsic_dim}
        if include_components and self.components:
            d["components"] = [c.to_dict(False) for c in self.components]
        if self.metadata:
            d["metadata"] = dict(self.metadata)
        return d


def _make_report(form, n, entropy, fisher, curvature, mass, metadata=None, components=()):
    rhs = mass * math.log(mass)
    deficit = rhs - (entropy - fisher - curvature)
    return DeficitReport(form, float(entropy), float(fisher), float(curvature), float(mass), float(rhs),
                         float(deficit), n, tuple(components), dict(metadata or {}))


def _metadata(cache):
    mesh = cache.mesh
    return {"n": mesh.intrinsic_dim, "m": mesh.codim, "vertices": mesh.n_vertices,
            "components": mesh.n_components, "h": mesh.mesh_size()}


def _assemble(cache, form, entropy_v, fisher_c, curvature_v, mass_v):
    """Integrate per-vertex / per-cell integrands, overall and per component."""
    mesh = cache.mesh
    w = cache.dual_measure
    n = mesh.intrinsic_dim
    comps = []
    if mesh.n_components > 1:
        lab, clab, K = mesh.component_labels, mesh.cell_components, mesh.n_components
        E = np.bincount(lab, w * entropy_v, minlength=K)
        F = np.bincount(clab, fisher_c, minlength=K)
        Cv = np.bincount(lab, w * curvature_v, minlength=K)
        M = np.bincount(lab, w * mass_v, minlength=K)
        comps = [_make_report(form, n, E[k], F[k], Cv[k], M[k], {"component": k}) for k in range(K)]
    return _make_report(form, n, w @ entropy_v, fisher_c.sum(), w @ curvature_v, w @ mass_v,
                        _metadata(cache), comps)


def deficit_theorem1(cache: GeometryCache, f) -> DeficitReport:
    """Evaluate the plain form of the inequality for a positive vertex density ``f``."""
    mesh = cache.mesh
    f = _positive(f, mesh.n_vertices)
    n = mesh.intrinsic_dim
    H2 = np.einsum("vn,vn->v", cache.mean_curvature, cache.mean_curvature)
    return _assemble(cache, "theorem1", f * (np.log(f) + entropy_constant(n)),
                     fisher_cells(cache, f), f * H2, f)


def deficit_corollary2(cache: GeometryCache, phi) -> DeficitReport:
    """Evaluate the Gaussian form of the inequality for a positive ``phi``."""
    mesh = cache.mesh
    phi = _positive(phi, mesh.n_vertices, "phi")
    mu = gaussian_weight_values(mesh)
    r = shrinker_residual(cache)
    mu_cell = mu[mesh.cells].mean(axis=1)
    return _assemble(cache, "corollary2", mu * phi * np.log(phi), fisher_cells(cache, phi, mu_cell),
                     mu * phi * np.einsum("vn,vn->v", r, r), mu * phi)


def combine_components(reports) -> DeficitReport:
    """Sum per-component reports into the report of their disjoint union.

    The union deficit exceeds the sum of component deficits by the concavity
    gap ``M log M - sum_k M_k log M_k``, which is positive as soon as two
    components carry mass.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to combine")
    forms = {r.form for r in reports}
    dims = {r.intrinsic_dim for r in reports}
    if len(forms) > 1 or len(dims) > 1:
        raise MixedForms(f"cannot combine forms {sorted(forms)} / dimensions {sorted(dims)}")
    if len(reports) == 1:
        return reports[0]
    tot = lambda a: math.fsum(getattr(r, a) for r in reports)  # noqa: E731
    return _make_report(reports[0].form, reports[0].intrinsic_dim, tot("entropy_term"), tot("fisher_term"),
                        tot("curvature_term"), tot("mass"), components=reports)


def concavity_gap(masses) -> float:
    masses = np.asarray(masses, dtype=float)
    M = masses.sum()
    return float(M * math.log(M) - np.sum(masses * np.log(masses)))


def rescaled_report(report: DeficitReport, c: float) -> DeficitReport:
    """Report of ``c * f`` obtained algebraically from the report of ``f``.

    Fisher and curvature terms scale linearly; the entropy term picks up
    ``M c log c``.  The deficit is therefore exactly ``c * deficit``.
    """
    if c <= 0:
        raise NonpositiveDensity("scale factor must be positive")
    lc = math.log(c)
    comps = tuple(rescaled_report(r, c) for r in report.components)
    return _make_report(report.form, report.intrinsic_dim, c * report.entropy_term + c * report.mass * lc,
                        c * report.fisher_term, c * report.curvature_term, c * report.mass,
                        report.metadata, comps)


def constant_density(cache: GeometryCache, mass=1.0) -> np.ndarray:
    return np.full(cache.mesh.n_vertices, mass / cache.dual_measure.sum())


def sphere_constant_deficit(n: int, r: float) -> float:
    """Closed-form plain-form deficit of a constant unit-mass density on the round n-sphere of radius r."""
    vol = 2 * math.pi * r if n == 1 else 4 * math.pi * r * r
    return math.log(vol) - entropy_constant(n) + n * n / (r * r)


def form_gap(cache: GeometryCache, phi) -> float:
    """``deficit_theorem1(to_density(phi)) - deficit_corollary2(phi)``; zero for smooth data."""
    return deficit_theorem1(cache, to_density(cache.mesh, phi)).deficit - deficit_corollary2(cache, phi).deficit


__all__ = [
    "DeficitReport", "GaussianWeights", "combine_components", "concavity_gap", "constant_density",
    "deficit_corollary2", "deficit_theorem1", "entropy_constant", "fisher_cells", "fisher_density", "form_gap",
    "gaussian_density", "gaussian_weights", "rescaled_report", "shrinker_residual", "sphere_constant_deficit",
    "to_density", "to_gaussian_form",
]
