"""Command-line interface: ``logsob {verify,abp-audit,optimize,identities,generate}``.

Every command prints one JSON report (schema ``logsob-report/1``) to stdout or
``--out``.  Exit codes: 0 success, 2 a negative deficit or a violated bound,
64 usage error, 65 bad input data, 70 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .abp import audit_summary, prepare_abp
from .errors import (DisconnectedInput, ExpressionError, IllConditionedFit, IncompatibleRhs, LogSobError,
                     MeshError, MixedForms, NonpositiveDensity, Overflow, QuadratureUnderflow)
from .expr import evaluate_expression
from .functionals import (combine_components, concavity_gap, constant_density, deficit_corollary2,
                          deficit_theorem1, to_density, to_gaussian_form)
from .geometry import GeometryCache
from .mesh import SHAPE_KINDS, ShapeSpec, generate_shape
from .mesh_io import format_mesh, read_mesh
from .optimizer import OptimizerConfig, config_dict, minimize_restarts
from .studies import eps_h, identity_table, radius_sweep

SCHEMA = "logsob-report/1"

EXIT_OK = 0
EXIT_NEGATIVE = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70

DENSITIES = ("const", "gauss-const", "expr", "file")
_DATA_ERRORS = (MeshError, NonpositiveDensity, IncompatibleRhs, DisconnectedInput, MixedForms,
                QuadratureUnderflow, ExpressionError, IllConditionedFit, Overflow, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------------
# JSON helpers

def _plain(obj):
    """Recursively convert numpy scalars/arrays so ``json`` can serialise them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(payload) -> str:
    return json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n"


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


# ----------------------------------------------------------------------
# mesh and density sources

def _shape_spec(args) -> ShapeSpec:
    kind = args.shape
    res = args.resolution or 0
    center = tuple(args.center) if args.center else None
    if kind == "disjoint_union":
        part = args.part or "circle"
        if part == "disjoint_union":
            raise UsageError("--part must be a single shape kind")
        radii = _radii(part, args)
        extent = 2 * sum(radii) + 1.0
        N = {"circle": 2, "sphere2": 3, "torus3": 3, "clifford_torus4": 4}[part]
        shift = [0.0] * N
        shift[0] = args.separation if args.separation is not None else extent
        a = ShapeSpec(part, radii, res)
        b = ShapeSpec(part, radii, res, tuple(shift))
        return ShapeSpec("disjoint_union", center=center, parts=(a, b))
    return ShapeSpec(kind, _radii(kind, args), res, center)


def _radii(kind, args):
    if kind in ("torus3", "clifford_torus4"):
        if args.radii:
            if len(args.radii) != 2:
                raise UsageError(f"{kind} takes --radii R1 R2")
            return tuple(args.radii)
        return (2.0, 1.0) if kind == "torus3" else (math.sqrt(2), math.sqrt(2))
    if args.radii:
        raise UsageError(f"{kind} takes --radius, not --radii")
    return (args.radius,)


def load_mesh(args):
    if (args.shape is None) == (args.mesh is None):
        raise UsageError("give exactly one of --shape or --mesh")
    if args.mesh is not None:
        mesh = read_mesh(args.mesh, args.mesh_format)
        return mesh, {"mesh": str(args.mesh)}
    spec = _shape_spec(args)
    return generate_shape(spec), {"shape": args.shape}


def _density_values(args, mesh):
    """Return ``(f, phi)`` for the plain and Gaussian forms."""
    kind = args.density
    if kind == "const":
        f = np.full(mesh.n_vertices, float(args.mass))
        return f, np.ones(mesh.n_vertices)
    if kind == "gauss-const":
        phi = np.full(mesh.n_vertices, float(args.mass))
        return to_density(mesh, phi), phi
    if kind == "expr":
        if not args.expr:
            raise UsageError("--density expr needs --expr")
        f = evaluate_expression(args.expr, mesh.vertices)
    else:
        if not args.density_file:
            raise UsageError("--density file needs --density-file")
        f = _read_values(args.density_file)
        if f.shape != (mesh.n_vertices,):
            raise NonpositiveDensity(f"density file has {f.size} values for {mesh.n_vertices} vertices")
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise NonpositiveDensity("density must evaluate to finite positive values at every vertex")
    return f, to_gaussian_form(mesh, f)


def _read_values(path):
    text = Path(path).read_text()
    try:
        if text.lstrip().startswith("["):
            return np.asarray(json.loads(text), dtype=float).ravel()
        return np.array([float(t) for t in text.replace(",", " ").split()])
    except (ValueError, TypeError) as exc:
        raise NonpositiveDensity(f"density file is not a list of numbers: {exc}") from None


def _mesh_meta(mesh, source):
    return {**source, "n": mesh.intrinsic_dim, "m": mesh.codim, "vertices": mesh.n_vertices,
            "cells": mesh.n_cells, "components": mesh.n_components, "h": mesh.mesh_size()}


def _envelope(args, mesh, source, result):
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "log") and v is not None}
    return {"schema": SCHEMA, "version": __version__, "command": args.command, "config": echo,
            "mesh": _mesh_meta(mesh, source) if mesh is not None else None, "result": result}


# ----------------------------------------------------------------------
# commands

def _eps_h(cache, *masses):
    return eps_h(cache, max((1.0, *masses)))


def _sweep(args, base_kind):
    try:
        r0, r1, steps = args.sweep.split(":")
        r0, r1, steps = float(r0), float(r1), int(steps)
    except ValueError:
        raise UsageError("--sweep expects r0:r1:steps") from None
    if not (0 < r0 < r1) or steps < 3:
        raise UsageError("--sweep needs 0 < r0 < r1 and at least 3 steps")
    if base_kind not in ("circle", "sphere2"):
        raise UsageError("--sweep works with --shape circle or sphere2")
    return radius_sweep(base_kind, np.linspace(r0, r1, steps), args.resolution or 0)


def cmd_verify(args):
    if args.sweep:
        if args.shape is None:
            raise UsageError("--sweep needs --shape")
        result = {"sweep": _sweep(args, args.shape)}
        if args.csv:
            Path(args.csv).write_text(rows_to_csv(result["sweep"]["columns"], result["sweep"]["rows"]))
        return _envelope(args, None, {}, result), EXIT_OK
    mesh, source = load_mesh(args)
    cache = GeometryCache(mesh)
    f, phi = _density_values(args, mesh)
    if args.density == "const":
        f = constant_density(cache, args.mass)
    t1 = deficit_theorem1(cache, f)
    c2 = deficit_corollary2(cache, phi)
    # the same density in both forms; for "const" the Gaussian form above uses phi = 1 instead
    cross = deficit_theorem1(cache, to_density(mesh, phi))
    eps = _eps_h(cache, t1.mass, c2.mass)
    result = {"theorem1": t1.to_dict(), "corollary2": c2.to_dict(),
              "cross_check": {"theorem1_of_gaussian_density": cross.deficit,
                              "form_gap": cross.deficit - c2.deficit, "eps_h": eps,
                              "within_eps": abs(cross.deficit - c2.deficit) <= eps}}
    if mesh.n_components > 1:
        parts = []
        for k in range(mesh.n_components):
            sub, keep = mesh.component(k)
            parts.append(deficit_theorem1(GeometryCache(sub), f[keep]))
        combined = combine_components(parts)
        result["per_component"] = {
            "deficits": [p.deficit for p in parts], "masses": [p.mass for p in parts],
            "combined_deficit": combined.deficit,
            "concavity_gap": concavity_gap([p.mass for p in parts]),
            "union_minus_sum": t1.deficit - sum(p.deficit for p in parts)}
    ok = t1.deficit >= -eps and c2.deficit >= -eps
    result["nonnegative"] = ok
    if args.table:
        print(f"theorem1   deficit {t1.deficit:.6g}", file=args.log)
        print(f"corollary2 deficit {c2.deficit:.6g}", file=args.log)
        print(f"eps_h {eps:.3g}", file=args.log)
    return _envelope(args, mesh, source, result), EXIT_OK if ok else EXIT_NEGATIVE


def _audit_one(cache, f, args):
    state = prepare_abp(cache, f)
    summary = audit_summary(state, probes=args.probes, samples_per_vertex=args.samples_per_vertex,
                            seed=args.seed, strategy=args.strategy, max_vertices=args.max_vertices)
    summary["deficit_theorem1"] = deficit_theorem1(cache, state.f).deficit
    return summary


def cmd_abp_audit(args):
    mesh, source = load_mesh(args)
    cache = GeometryCache(mesh)
    f, _ = _density_values(args, mesh)
    if args.density == "const":
        f = constant_density(cache, args.mass)
    eps = _eps_h(cache)
    if mesh.n_components > 1:
        if not args.per_component:
            raise DisconnectedInput(f"mesh has {mesh.n_components} components; use --per-component")
        audits, reports = [], []
        for k in range(mesh.n_components):
            sub, keep = mesh.component(k)
            sub_cache = GeometryCache(sub)
            audits.append(_audit_one(sub_cache, f[keep], args))
            reports.append(deficit_theorem1(sub_cache, f[keep]))
        combined = combine_components(reports)
        result = {"components": audits, "combined": combined.to_dict(),
                  "concavity_gap": concavity_gap([r.mass for r in reports])}
        bad = any(a["proof_constant"] < -eps or a["lemma2"]["violations"] for a in audits)
    else:
        result = _audit_one(cache, f, args)
        bad = result["proof_constant"] < -eps or result["lemma2"]["violations"] > 0
    result["eps_h"] = eps
    if args.csv:
        hist = (result if "lemma2" in result else result["components"][0])["lemma2"]["margin_histogram"]
        rows = list(zip(hist["edges"][:-1], hist["edges"][1:], hist["counts"]))
        Path(args.csv).write_text(rows_to_csv(["lo", "hi", "count"], rows))
    return _envelope(args, mesh, source, result), EXIT_NEGATIVE if bad else EXIT_OK


def cmd_optimize(args):
    mesh, source = load_mesh(args)
    cache = GeometryCache(mesh)
    config = OptimizerConfig(step=args.step, max_iter=args.max_iter, grad_tol=args.grad_tol,
                             restarts=args.restarts, seed=args.seed, fix_mass=not args.free_mass,
                             init_scale=args.init_scale)
    traces = minimize_restarts(cache, config)
    best = min(traces, key=lambda t: t.min_deficit)
    runs = [{"seed": t.seed, "initial_deficit": t.deficits[0], "final_deficit": t.deficits[-1],
             "min_deficit": t.min_deficit, "iterations": len(t.deficits) - 1, "converged": t.converged,
             "negative_flag": t.negative_flag} for t in traces]
    negative = any(t.negative_flag for t in traces)
    result = {"optimizer": config_dict(config), "eps_h": best.eps_h, "runs": runs,
              "min_deficit": best.min_deficit, "best_seed": best.seed, "negative_flag": negative,
              "best_trace": best.to_dict(include_density=args.include_density)}
    if args.csv:
        Path(args.csv).write_text(best.to_csv())
    print(f"min deficit {best.min_deficit!r} (seed {best.seed})", file=args.log)
    return _envelope(args, mesh, source, result), EXIT_NEGATIVE if negative else EXIT_OK


def cmd_identities(args):
    if args.shape is None:
        raise UsageError("identities needs --shape")
    if args.levels < 2:
        raise UsageError("--levels must be at least 2")
    if args.shape not in ("circle", "sphere2", "torus3", "clifford_torus4"):
        raise UsageError("identities needs --shape circle, sphere2, torus3 or clifford_torus4")
    center = tuple(args.center) if args.center else None
    result = identity_table(args.shape, _radii(args.shape, args), args.levels, args.resolution, center)
    rows = result["rows"]
    if args.csv:
        Path(args.csv).write_text(rows_to_csv(result["columns"], rows))
    return _envelope(args, None, {"shape": args.shape}, result), EXIT_OK


def cmd_generate(args):
    mesh, source = load_mesh(args)
    fmt = args.format or (Path(args.out).suffix.lstrip(".") if args.out else "json")
    return format_mesh(mesh, fmt), EXIT_OK


# ----------------------------------------------------------------------
# parser

def _mesh_args(p):
    g = p.add_argument_group("mesh source")
    g.add_argument("--shape", choices=SHAPE_KINDS + ("disjoint",), help="generated shape")
    g.add_argument("--mesh", help="OFF, OBJ or JSON mesh file")
    g.add_argument("--mesh-format", choices=("off", "obj", "json"), help="override the file extension")
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--radii", type=float, nargs="+", help="R a (torus3) or r1 r2 (clifford_torus4)")
    g.add_argument("--resolution", type=int, help="vertex-count target (grid side for tori in identities)")
    g.add_argument("--center", type=float, nargs="+", help="translation of the shape")
    g.add_argument("--part", choices=SHAPE_KINDS[:-1], help="piece used by --shape disjoint_union")
    g.add_argument("--separation", type=float, help="offset between the two pieces of a disjoint union")


def _density_args(p):
    g = p.add_argument_group("density")
    g.add_argument("--density", choices=DENSITIES, default="const",
                   help="const: unit-mass constant f; gauss-const: phi = const in the Gaussian form")
    g.add_argument("--mass", type=float, default=1.0, help="mass of const, value of gauss-const")
    g.add_argument("--expr", help="density f over coordinates x1..xN")
    g.add_argument("--density-file", help="one value per vertex (whitespace, commas or a JSON list)")


def build_parser():
    parser = _Parser(prog="logsob", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"logsob {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("verify", help="evaluate both forms of the inequality")
    _mesh_args(p)
    _density_args(p)
    p.add_argument("--sweep", help="r0:r1:steps radius sweep of the constant-density deficit")
    p.add_argument("--csv", help="write plot data here")
    p.add_argument("--table", action="store_true", help="human-readable summary on stderr")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("abp-audit", help="audit the ABP construction on a mesh")
    _mesh_args(p)
    _density_args(p)
    p.add_argument("--probes", type=int, default=10_000)
    p.add_argument("--samples-per-vertex", type=int, default=64)
    p.add_argument("--max-vertices", type=int)
    p.add_argument("--strategy", choices=("grid", "gaussian"), default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-component", action="store_true", help="audit each connected component")
    p.add_argument("--csv", help="write the margin histogram here")
    p.set_defaults(func=cmd_abp_audit)

    p = sub.add_parser("optimize", help="minimise the deficit over densities")
    _mesh_args(p)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--init-scale", type=float, default=0.5)
    p.add_argument("--free-mass", action="store_true", help="let the total mass float")
    p.add_argument("--include-density", action="store_true", help="add the best final density to the report")
    p.add_argument("--csv", help="write the best run's per-iteration curve here")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("identities", help="residuals of the discrete identities under refinement")
    _mesh_args(p)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--csv", help="write the residual table here")
    p.set_defaults(func=cmd_identities)

    p = sub.add_parser("generate", help="write a generated mesh")
    _mesh_args(p)
    p.add_argument("--format", choices=("off", "obj", "json"))
    p.set_defaults(func=cmd_generate)

    for p in sub.choices.values():
        p.add_argument("--out", help="write the output here instead of stdout")
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        if args.shape == "disjoint":
            args.shape = "disjoint_union"
        for name in ("probes", "samples_per_vertex", "restarts", "max_iter", "max_vertices"):
            if getattr(args, name, None) is not None and getattr(args, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        args.log = stderr
        payload, code = args.func(args)
        text = payload if isinstance(payload, str) else dumps(payload)
        if args.out:
            Path(args.out).write_text(text)
        else:
            stdout.write(text)
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_DATA
    except (LogSobError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_DATA if isinstance(exc, ValueError) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last line of defence, never show a traceback
        print(f"internal error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
