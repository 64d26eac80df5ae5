"""Adversarial search for small plain-form deficits.

Densities are parametrised as ``f = exp(g)``; descent runs on ``g`` with an
Armijo backtracking line search.  The gradient is taken in the discrete
``H^1`` inner product ``<a, b> = a^T (W - K) b`` (``W`` the dual measures,
``K`` the stiffness), which keeps the step size independent of the mesh
size.  With ``fix_mass`` the gradient is projected onto
``{sum_i w_i f_i dg_i = 0}`` in that inner product and the iterate is
renormalised to unit mass after every step.
"""

from __future__ import annotations

import csv
import io
import math
import os
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import factorized

from .errors import Diverged, Overflow
from .functionals import deficit_theorem1, entropy_constant
from .geometry import GeometryCache
from .studies import eps_h as measured_eps_h

_EXP_MAX = 700.0


@dataclass(frozen=True)
class OptimizerConfig:
    step: float = 1.0
    max_iter: int = 500
    grad_tol: float = 1e-8
    restarts: int = 1
    seed: int = 0
    fix_mass: bool = True
    init_scale: float = 0.5
    eps_h: float | None = None
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class OptTrace:
    deficits: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    final_g: np.ndarray | None = None
    converged: bool = False
    negative_flag: bool = False
    eps_h: float = 0.0
    seed: int | None = None

    @property
    def final_density(self):
        return np.exp(self.final_g)

    @property
    def min_deficit(self):
        return min(self.deficits)

    def to_dict(self, include_density=False):
        d = {"deficits": self.deficits, "grad_norms": self.grad_norms, "masses": self.masses,
             "steps": self.steps, "converged": self.converged, "negative_flag": self.negative_flag,
             "eps_h": self.eps_h, "seed": self.seed, "iterations": len(self.deficits) - 1,
             "final_deficit": self.deficits[-1], "min_deficit": self.min_deficit}
        if include_density:
            d["final_density"] = self.final_density.tolist()
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "deficit", "grad_norm", "mass", "step"])
        for k, row in enumerate(zip(self.deficits, self.grad_norms, self.masses, self.steps)):
            w.writerow([k, *(repr(float(x)) for x in row)])
        return buf.getvalue()


def _density(g):
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)) or np.abs(g).max() > _EXP_MAX:
        raise Overflow("log-density too large to exponentiate")
    return np.exp(g)


def deficit_value(cache: GeometryCache, g) -> float:
    return deficit_theorem1(cache, _density(g)).deficit


def deficit_gradient(cache: GeometryCache, g) -> np.ndarray:
    """Partial derivatives of the plain-form deficit with respect to ``g = log f``.

    Summing the entries gives the deficit itself (it is 1-homogeneous in ``f``).
    """
    f = _density(g)
    w = cache.dual_measure
    n = cache.n
    H2 = np.einsum("vn,vn->v", cache.mean_curvature, cache.mean_curvature)
    M = w @ f
    s = np.sqrt(f)
    wf = w * f
    d_rhs = (math.log(M) + 1) * wf
    d_entropy = wf * (np.log(f) + entropy_constant(n) + 1)
    d_fisher = -4 * s * (cache.stiffness @ s)
    d_curv = wf * H2
    return d_rhs - d_entropy + d_fisher + d_curv


_METRIC_SOLVERS = weakref.WeakKeyDictionary()
_METRIC_LOCK = threading.Lock()


def _metric_solver(cache):
    """Solver for ``(W - K) x = b``, factorised once per cache.

    SuperLU handles are not safe to share between threads, so every solve
    takes the same lock.
    """
    with _METRIC_LOCK:
        solve = _METRIC_SOLVERS.get(cache)
        if solve is None:
            metric = (sparse.diags(cache.dual_measure) - cache.stiffness).tocsc()
            lu = factorized(metric)

            def solve(b):
                with _METRIC_LOCK:
                    return lu(b)

            _METRIC_SOLVERS[cache] = solve
    return solve


def _search_direction(cache, g, fix_mass):
    """``H^1`` gradient (projected when the mass is fixed) and its norm."""
    solve = _metric_solver(cache)
    d = deficit_gradient(cache, g)
    G = solve(d)
    if fix_mass:
        a = cache.dual_measure * np.exp(g)
        Pa = solve(a)
        G = G - (a @ G) / (a @ Pa) * Pa
    return G, math.sqrt(max(d @ G, 0.0))


def random_start(cache: GeometryCache, scale: float, seed) -> np.ndarray:
    """Smoothed Gaussian noise with root-mean-square amplitude ``scale``.

    White noise is filtered once through the ``H^1`` metric so the start has
    finite Fisher information that does not blow up under refinement.
    """
    rng = np.random.default_rng(seed)
    w = cache.dual_measure
    g = _metric_solver(cache)(w * rng.standard_normal(cache.mesh.n_vertices))
    g -= (w @ g) / w.sum()
    rms = math.sqrt(w @ g ** 2 / w.sum())
    return scale * g / rms if rms > 0 else g


def _normalise(cache, g):
    return g - math.log(cache.dual_measure @ np.exp(g))


def minimize_deficit(cache: GeometryCache, config: OptimizerConfig = OptimizerConfig(), g0=None,
                     seed=None) -> OptTrace:
    """Projected gradient descent on the deficit starting from ``g0`` (random if omitted).

    The deficit is nonincreasing along the trace.  ``negative_flag`` is set if
    any iterate falls below ``-eps_h``; since the smooth deficit is
    nonnegative, that indicates a discretisation problem.
    """
    w = cache.dual_measure
    if g0 is None:
        g = random_start(cache, config.init_scale, config.seed if seed is None else seed)
    else:
        g = np.array(g0, dtype=float, copy=True)
    if config.fix_mass:
        g = _normalise(cache, g)
    eps_h = measured_eps_h(cache) if config.eps_h is None else config.eps_h

    trace = OptTrace(eps_h=eps_h, seed=seed if seed is not None else config.seed)
    D = deficit_value(cache, g)
    t = config.step
    for _ in range(config.max_iter):
        G, gnorm = _search_direction(cache, g, config.fix_mass)
        trace.deficits.append(D)
        trace.grad_norms.append(gnorm)
        trace.masses.append(float(w @ np.exp(g)))
        trace.negative_flag |= D < -eps_h
        if gnorm <= config.grad_tol:
            trace.converged = True
            trace.steps.append(0.0)
            break
        slope = gnorm * gnorm
        accepted = False
        for _ in range(config.max_backtracks):
            trial = g - t * G
            if np.abs(trial).max() <= _EXP_MAX:
                if config.fix_mass:
                    trial = _normalise(cache, trial)
                if np.abs(trial).max() <= _EXP_MAX:
                    Dt = deficit_value(cache, trial)
                    if Dt <= D - config.armijo * t * slope:
                        accepted = True
                        break
            t *= config.backtrack
        trace.steps.append(t if accepted else 0.0)
        if not accepted:
            # no decrease representable in floating point: stationary to rounding
            trace.converged = True
            break
        if not math.isfinite(Dt) or Dt < -1e6:
            raise Diverged(f"deficit fell to {Dt}; the discretisation is broken")
        g, D = trial, Dt
        t = min(t / config.backtrack, 1e6)
    else:
        G, gnorm = _search_direction(cache, g, config.fix_mass)
        trace.deficits.append(D)
        trace.grad_norms.append(gnorm)
        trace.masses.append(float(w @ np.exp(g)))
        trace.steps.append(0.0)
        trace.negative_flag |= D < -eps_h
        trace.converged = gnorm <= config.grad_tol
    trace.final_g = g
    return trace


def _threads():
    try:
        return max(1, int(os.environ.get("LOGSOB_THREADS", "1")))
    except ValueError:
        return 1


def minimize_restarts(cache: GeometryCache, config: OptimizerConfig) -> list:
    """Run ``config.restarts`` independent descents with seeds ``seed, seed+1, ...``.

    Results are returned in seed order, so they do not depend on ``LOGSOB_THREADS``.
    """
    seeds = [config.seed + k for k in range(config.restarts)]
    run = lambda s: minimize_deficit(cache, config, seed=s)  # noqa: E731
    threads = min(_threads(), len(seeds))
    if threads == 1:
        return [run(s) for s in seeds]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(run, seeds))


def config_dict(config: OptimizerConfig) -> dict:
    return asdict(config)
