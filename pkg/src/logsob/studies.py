"""Refinement and parameter studies built on the discrete operators.

These produce the tables behind ``verify --sweep`` and ``identities`` and the
discretisation scale ``eps_h`` used to judge whether a small negative
deficit is a discretisation artefact.
"""

from __future__ import annotations

import math

import numpy as np

from .functionals import (constant_density, deficit_corollary2, deficit_theorem1, gaussian_weight_values,
                          to_density)
from .geometry import GeometryCache, divergence, gradient, normal_part, tangential_part
from .mesh import ShapeSpec, generate_shape

ROUNDOFF = 1e-12


def _rms(cache, r):
    w = cache.dual_measure
    sq = r * r if r.ndim == 1 else np.einsum("vn,vn->v", r, r)
    return float(math.sqrt(w @ sq / w.sum()))


def divergence_residual(cache: GeometryCache) -> np.ndarray:
    """Per-vertex ``div(x_tan) - n - <H, x_perp>``."""
    X = cache.mesh.vertices
    return divergence(cache, tangential_part(cache, X)) - cache.n \
        - np.einsum("vn,vn->v", cache.mean_curvature, normal_part(cache, X))


def divergence_residual_rms(cache: GeometryCache) -> float:
    return _rms(cache, divergence_residual(cache))


def gradient_identity_residual_rms(cache: GeometryCache, phi=None) -> float:
    """RMS of ``grad phi / phi - grad f / f - x_tan / 2`` with ``f`` the Gaussian-weighted ``phi``.

    The default test function is ``1 + cos(x1) / 2``.
    """
    mesh = cache.mesh
    X = mesh.vertices
    phi = 1.0 + 0.5 * np.cos(X[:, 0]) if phi is None else np.asarray(phi, dtype=float)
    f = gaussian_weight_values(mesh) * phi
    r = gradient(cache, phi) / phi[:, None] - gradient(cache, f) / f[:, None] - 0.5 * tangential_part(cache, X)
    return _rms(cache, r)


def eps_h(cache: GeometryCache, scale: float = 1.0) -> float:
    """Discretisation scale for deficits of total size ``scale``.

    The RMS residual of the divergence identity (the identity that makes the
    two forms of the inequality agree) times ``scale``, plus a round-off
    floor for meshes where that residual vanishes identically.
    """
    scale = max(abs(scale), 1.0)
    return scale * (divergence_residual_rms(cache) + ROUNDOFF)


def form_tolerance(cache: GeometryCache, phi) -> float:
    """``eps_h`` scaled by the size of the terms of both forms for ``phi``."""
    a = deficit_corollary2(cache, phi)
    b = deficit_theorem1(cache, to_density(cache.mesh, phi))
    scale = max(abs(t) for r in (a, b) for t in (r.entropy_term, r.fisher_term, r.curvature_term, r.mass))
    return eps_h(cache, scale)


def refinement_orders(h, residuals):
    """Observed orders ``log(r_k / r_k+1) / log(h_k / h_k+1)`` between consecutive levels."""
    out = []
    for (ha, ra), (hb, rb) in zip(zip(h, residuals), zip(h[1:], residuals[1:])):
        out.append(math.log(ra / rb) / math.log(ha / hb) if ra > 0 and rb > 0 else None)
    return out


def radius_sweep(kind: str, radii, resolution=0) -> dict:
    """Constant unit-mass deficit against radius, with a parabola-refined minimiser."""
    if kind not in ("circle", "sphere2"):
        raise ValueError("radius sweeps are defined for circle and sphere2")
    radii = np.asarray(radii, dtype=float)
    rows = []
    for r in radii:
        cache = GeometryCache(generate_shape(ShapeSpec(kind, (float(r),), resolution)))
        rows.append([float(r), deficit_theorem1(cache, constant_density(cache)).deficit])
    d = np.array([row[1] for row in rows])
    k = int(np.argmin(d))
    r_min = float(radii[k])
    if 0 < k < len(d) - 1:
        left, right = radii[k] - radii[k - 1], radii[k + 1] - radii[k]
        if np.isclose(left, right):
            denom = d[k - 1] - 2 * d[k] + d[k + 1]
            if denom > 0:
                r_min = float(radii[k] + 0.5 * left * (d[k - 1] - d[k + 1]) / denom)
    n = 1 if kind == "circle" else 2
    target = math.sqrt(2 * n)
    return {"columns": ["radius", "deficit"], "rows": rows, "argmin_sample": float(radii[k]),
            "argmin_refined": r_min, "shrinker_radius": target, "relative_offset": abs(r_min - target) / target}


def refinement_ladder(kind: str, radii, levels: int, base=None, center=None):
    """Meshes of one shape at successively doubled (circle, tori) or quadrupled (sphere) vertex counts."""
    if kind == "sphere2":
        level0 = 2 if base is None else max(1, round(math.log(max(base - 2, 10) / 10, 4)))
    for k in range(levels):
        if kind == "circle":
            res = (base or 64) * 2 ** k
        elif kind == "sphere2":
            res = 10 * 4 ** (level0 + k) + 2
        elif kind in ("torus3", "clifford_torus4"):
            side = (base or 16) * 2 ** k
            res = (side, side)
        else:
            raise ValueError(f"no refinement ladder for {kind!r}")
        yield generate_shape(ShapeSpec(kind, tuple(radii), res, center))


def identity_table(kind: str, radii, levels: int, base=None, center=None) -> dict:
    rows = []
    for mesh in refinement_ladder(kind, radii, levels, base, center):
        cache = GeometryCache(mesh)
        rows.append([mesh.n_vertices, mesh.mesh_size(), divergence_residual_rms(cache),
                     gradient_identity_residual_rms(cache)])
    h = [r[1] for r in rows]
    div_orders = refinement_orders(h, [r[2] for r in rows])
    grad_orders = refinement_orders(h, [r[3] for r in rows])
    finite = [o for o in div_orders if o is not None]
    return {"columns": ["vertices", "h", "divergence_rms", "gradient_rms"], "rows": rows,
            "divergence_orders": div_orders, "gradient_orders": grad_orders,
            "min_divergence_order": min(finite) if finite else None}


__all__ = ["divergence_residual", "divergence_residual_rms", "eps_h", "form_tolerance",
           "gradient_identity_residual_rms", "identity_table", "radius_sweep", "refinement_ladder",
           "refinement_orders"]
