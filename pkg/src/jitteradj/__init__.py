"""Jitter-aware geostatistical inference for prevalence data."""

from .geometry import Polygon
from .mesh import TriangulationMesh, build_mesh, fem_matrices, project

__version__ = "0.1.0"
