"""Free-space fast multipole solver for the Coulomb potential."""

from .operators import (
    FmmConfig,
    LocalExpansion,
    MultipoleExpansion,
    evaluate_local,
    l2l,
    m2l,
    m2m,
    particle_to_multipole,
)
from .solver import FmmSolveResult, fmm_solve, near_field_direct
from .tree import FmmTree, build_tree

__all__ = [
    "FmmConfig",
    "FmmTree",
    "FmmSolveResult",
    "LocalExpansion",
    "MultipoleExpansion",
    "build_tree",
    "evaluate_local",
    "fmm_solve",
    "l2l",
    "m2l",
    "m2m",
    "near_field_direct",
    "particle_to_multipole",
]
