"""Reading and writing meshes as OFF, OBJ or JSON.

The JSON layout is ``{"ambient_dim": N, "vertices": [[...], ...], "cells": [[...], ...]}``
with zero-based indices.  It is the only format that can carry curves or
higher-codimension embeddings; OFF and OBJ hold triangle surfaces in R^3.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MeshError, UnsupportedSpec
from .mesh import EmbeddedMesh, build_mesh

FORMATS = ("off", "obj", "json")


def _format_for(path, fmt):
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in FORMATS:
        raise UnsupportedSpec(f"unknown mesh format {fmt!r}; expected one of {', '.join(FORMATS)}")
    return fmt


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def parse_off(text: str):
    lines = _tokens(text)
    try:
        head = next(lines)
        if not head.upper().startswith("OFF"):
            raise MeshError("OFF file must start with 'OFF'")
        rest = head[3:].split()
        counts = rest if rest else next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = [[float(t) for t in next(lines).split()[:3]] for _ in range(nv)]
        faces = []
        for _ in range(nf):
            parts = next(lines).split()
            k = int(parts[0])
            if k != 3:
                raise MeshError(f"only triangles are supported, found a {k}-gon")
            faces.append([int(t) for t in parts[1:4]])
    except StopIteration:
        raise MeshError("OFF file ended early") from None
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed OFF file: {exc}") from None
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def parse_obj(text: str):
    verts, faces = [], []
    try:
        for line in _tokens(text):
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for t in parts[1:]:
                    i = int(t.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) != 3:
                    raise MeshError(f"only triangles are supported, found a {len(idx)}-gon")
                faces.append(idx)
    except ValueError as exc:
        raise MeshError(f"malformed OBJ file: {exc}") from None
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def parse_json(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"malformed mesh JSON: {exc}") from None
    if not isinstance(doc, dict) or not {"vertices", "cells"} <= doc.keys():
        raise MeshError("mesh JSON needs 'vertices' and 'cells'")
    try:
        verts = np.array(doc["vertices"], dtype=float)
        cells = np.array(doc["cells"], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise MeshError(f"mesh JSON arrays are ragged or non-numeric: {exc}") from None
    N = doc.get("ambient_dim")
    if N is not None and (verts.ndim != 2 or verts.shape[1] != N):
        raise MeshError(f"ambient_dim {N} does not match vertex coordinates")
    return verts, cells, N


def read_mesh(path, fmt=None) -> EmbeddedMesh:
    fmt = _format_for(path, fmt)
    text = Path(path).read_text()
    if fmt == "json":
        verts, cells, N = parse_json(text)
        return build_mesh(verts, cells, N)
    verts, cells = parse_off(text) if fmt == "off" else parse_obj(text)
    return build_mesh(verts, cells, 3)


def mesh_to_json(mesh: EmbeddedMesh) -> dict:
    return {"ambient_dim": mesh.ambient_dim, "vertices": mesh.vertices.tolist(), "cells": mesh.cells.tolist()}


def format_mesh(mesh: EmbeddedMesh, fmt: str) -> str:
    fmt = _format_for("", fmt)
    if fmt == "json":
        return json.dumps(mesh_to_json(mesh)) + "\n"
    if mesh.intrinsic_dim != 2 or mesh.ambient_dim != 3:
        raise UnsupportedSpec(f"{fmt.upper()} holds surfaces in R^3 only; use JSON")
    vlines = [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    if fmt == "off":
        flines = [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
        return "\n".join(["OFF", f"{mesh.n_vertices} {mesh.n_cells} 0", *vlines, *flines]) + "\n"
    flines = [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.cells]
    return "\n".join([*("v " + v for v in vlines), *flines]) + "\n"


def write_mesh(mesh: EmbeddedMesh, path, fmt=None) -> None:
    Path(path).write_text(format_mesh(mesh, _format_for(path, fmt)))


__all__ = ["FORMATS", "format_mesh", "mesh_to_json", "parse_json", "parse_obj", "parse_off", "read_mesh",
           "write_mesh"]
