"""Multiresolution 3D compliance topology optimization.

SIMP material model, trust-region sequential linear programming, geometric
multigrid preconditioned CG, density thresholding and adaptive element degree.
"""
from .elements import Material, element_kit, element_node_count, subelement_stiffness
from .estimator import DensityProjector, RunReport, TopologyOptimizer
from .exceptions import (
    ConfigurationError,
    DomainError,
    InvalidStateError,
    LPFailure,
    ResourceError,
    SolverError,
    TopOptError,
)
from .mesh import MeshSpec, apply_problem, build_mesh

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DensityProjector",
    "DomainError",
    "InvalidStateError",
    "LPFailure",
    "Material",
    "MeshSpec",
    "ResourceError",
    "RunReport",
    "SolverError",
    "TopOptError",
    "TopologyOptimizer",
    "apply_problem",
    "build_mesh",
    "element_kit",
    "element_node_count",
    "subelement_stiffness",
]
