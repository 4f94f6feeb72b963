"""Unfitted finite element spaces, assembly, solve and error norms."""
from .basis import Lagrange1D, QuadBasis, TriBasis, quad_basis, tri_basis
from .norms import dg_error, evaluate, locate_elements
from .space import AssemblyError, DofMap, build_space
from .system import DiscreteSystem, SolverError, assemble, face_quadrature, lift, local_block, solve

__all__ = [
    "Lagrange1D", "QuadBasis", "TriBasis", "quad_basis", "tri_basis",
    "DofMap", "build_space", "AssemblyError",
    "DiscreteSystem", "SolverError", "assemble", "solve", "lift", "local_block", "face_quadrature",
    "dg_error", "evaluate", "locate_elements",
]
