import json

import numpy as np
import pytest

from logsob.errors import BoundaryDetected, MeshError, UnsupportedSpec
from logsob.mesh import circle, clifford_torus4, sphere2
from logsob.mesh_io import format_mesh, parse_obj, parse_off, read_mesh, write_mesh


@pytest.mark.parametrize("fmt", ["off", "obj", "json"])
def test_surface_round_trip(tmp_path, fmt):
    m = sphere2(1.0, 162)
    path = tmp_path / f"s.{fmt}"
    write_mesh(m, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.cells, m.cells)


@pytest.mark.parametrize("mesh", [circle(1.0, 32), clifford_torus4(resolution=(8, 8))])
def test_json_round_trip_any_codimension(tmp_path, mesh):
    path = tmp_path / "m.json"
    write_mesh(mesh, path)
    doc = json.loads(path.read_text())
    assert doc["ambient_dim"] == mesh.ambient_dim
    back = read_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_curve_cannot_be_off():
    with pytest.raises(UnsupportedSpec):
        format_mesh(circle(1.0, 32), "off")


def test_off_with_boundary(tmp_path):
    path = tmp_path / "bad.off"
    path.write_text("OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n")
    with pytest.raises(BoundaryDetected):
        read_mesh(path)


def test_off_parsing_details():
    v, f = parse_off("OFF 3 1 0\n# comment\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert v.shape == (3, 3) and f.tolist() == [[0, 1, 2]]
    with pytest.raises(MeshError):
        parse_off("OFF\n3 1 0\n0 0 0\n")
    with pytest.raises(MeshError):
        parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n4 0 1 2 3\n")


def test_obj_slash_and_negative_indices():
    v, f = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n")
    assert f.tolist() == [[0, 1, 2]]


def test_json_schema_checks(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"ambient_dim": 3, "vertices": [[0, 0], [1, 0], [0, 1]], "cells": [[0, 1]]}))
    with pytest.raises(MeshError):
        read_mesh(path)
    path.write_text("{not json")
    with pytest.raises(MeshError):
        read_mesh(path)


def test_unknown_extension(tmp_path):
    with pytest.raises(UnsupportedSpec):
        read_mesh(tmp_path / "mesh.stl")
