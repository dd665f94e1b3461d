"""Multilevel incomplete LDU preconditioning with deferring, plus flexible GMRES."""

from .crout import DropParams, LevelCollapse, LevelFactor, factorize_level
from .krylov import DivergenceError, SolveStats, fgmres
from .multilevel import (
    BuildError, DenseLU, Preconditioner, SolverOptions, apply_precond, build_preconditioner,
    dense_factorize, next_level_params, params_for_level,
)
from .preprocess import StructuralSingularityError, equilibrate, preprocess_level
from .schur import SchurResult, compute_schur
from .sparse import (
    Permutation, PermScale, UnsupportedFormatError, apply_perm_scale, build_from_triplets,
    read_matrix_market, spmv, write_matrix_market,
)

__all__ = [
    "BuildError", "DenseLU", "DivergenceError", "DropParams", "LevelCollapse", "LevelFactor",
    "PermScale", "Permutation", "Preconditioner", "SchurResult", "SolveStats", "SolverOptions",
    "StructuralSingularityError", "UnsupportedFormatError", "apply_perm_scale", "apply_precond",
    "build_from_triplets", "build_preconditioner", "compute_schur", "dense_factorize",
    "equilibrate", "factorize_level", "fgmres", "next_level_params", "params_for_level",
    "preprocess_level", "read_matrix_market", "spmv", "write_matrix_market",
]
