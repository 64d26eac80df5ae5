"""Discrete audit toolkit for the sharp log-Sobolev inequality on closed submanifolds."""

__version__ = "0.1.0"

from .abp import audit_summary, lemma1_probe, lemma2_check, prepare_abp, reconstruct_constant, sample_A
from .functionals import (DeficitReport, combine_components, deficit_corollary2, deficit_theorem1,
                          gaussian_density, to_density, to_gaussian_form)
from .geometry import GeometryCache, build_geometry_cache
from .mesh import EmbeddedMesh, ShapeSpec, build_mesh, generate_shape, total_measure
from .mesh_io import read_mesh, write_mesh
from .optimizer import OptimizerConfig, minimize_deficit, minimize_restarts

__all__ = [
    "DeficitReport", "EmbeddedMesh", "GeometryCache", "OptimizerConfig", "ShapeSpec", "audit_summary",
    "build_geometry_cache", "build_mesh", "combine_components", "deficit_corollary2", "deficit_theorem1",
    "gaussian_density", "generate_shape", "lemma1_probe", "lemma2_check", "minimize_deficit",
    "minimize_restarts", "prepare_abp", "read_mesh", "reconstruct_constant", "sample_A", "to_density",
    "to_gaussian_form", "total_measure", "write_mesh",
]
