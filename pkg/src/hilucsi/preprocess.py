"""Per-level preprocessing: equilibration, static deferring, fill-reducing ordering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .matching import StructuralSingularityError, max_product_matching
from .ordering import amd_order, rcm_order
from .sparse import Permutation, PermScale, apply_perm_scale, symmetrized_pattern

__all__ = [
    "PreprocessReport", "StructuralSingularityError", "amd_order", "equilibrate",
    "is_nearly_symmetric", "preprocess_level", "rcm_order", "static_defer",
    "symmetrize_equilibration",
]


@dataclass(frozen=True)
class PreprocessReport:
    perm_scale: PermScale            # composite transform producing the level matrix
    statically_deferred: np.ndarray  # in the equilibrated numbering
    leading: np.ndarray              # kept indices, equilibrated numbering
    fill_order: Permutation          # ordering of ``leading``
    symmetric_mode: bool
    unmatched: np.ndarray            # rows left unmatched (coarse-level fallback only)

    @property
    def n_static(self) -> int:
        return self.statically_deferred.size


def equilibrate(A) -> PermScale:
    """Max-product matching and scaling: matched entries land on the diagonal with
    magnitude 1, every other entry has magnitude at most 1."""
    match_col, row_scale, col_scale = max_product_matching(A)
    n = A.shape[0]
    return PermScale(Permutation.from_forward(match_col), Permutation.identity(n),
                     row_scale, col_scale)


def symmetrize_equilibration(ps: PermScale) -> PermScale:
    """Geometric-mean scaling for both sides, row permutation applied symmetrically."""
    s = np.sqrt(ps.row_scale * ps.col_scale)
    return PermScale(ps.row_perm, ps.row_perm, s, s.copy())


def static_defer(A_scaled, kappa_d: float) -> np.ndarray:
    """Indices whose diagonal magnitude is below ``1/kappa_d``; zero (or missing)
    diagonals are always included."""
    diag = np.abs(sp.csr_matrix(A_scaled).diagonal())
    return np.flatnonzero((diag < 1.0 / kappa_d) | (diag == 0)).astype(np.int64)


def is_nearly_symmetric(A, rtol: float = 1e-8, filter_rtol: float = 1e-15) -> bool:
    """``||A - A^T||_F <= rtol ||A||_F`` after removing entries below ``filter_rtol * max|A|``."""
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        return False
    if A.nnz == 0:
        return True
    A = A.copy()
    A.data[np.abs(A.data) <= filter_rtol * np.abs(A.data).max()] = 0.0
    A.eliminate_zeros()
    return spla.norm(A - A.T) <= rtol * spla.norm(A)


def preprocess_level(A, kappa_d: float, symmetric: bool, reorder: str,
                     allow_singular: bool = False) -> tuple[PreprocessReport, sp.csr_matrix]:
    """Equilibrate, defer tiny diagonals, then reorder the leading block.

    ``reorder`` is ``"rcm"`` or ``"amd"``.  With ``allow_singular`` a
    structurally singular matrix falls back to identity scaling and defers
    the unmatched rows instead of raising.
    """
    n = A.shape[0]
    unmatched = np.zeros(0, dtype=np.int64)
    try:
        ps = equilibrate(A)
        if symmetric:
            ps = symmetrize_equilibration(ps)
    except StructuralSingularityError as exc:
        if not allow_singular:
            raise
        ps = PermScale.identity(n)
        unmatched = exc.unmatched_rows
    B = apply_perm_scale(A, ps)
    deferred = np.union1d(static_defer(B, kappa_d), unmatched).astype(np.int64)
    keep = np.ones(n, dtype=bool)
    keep[deferred] = False
    leading = np.flatnonzero(keep).astype(np.int64)
    pattern = symmetrized_pattern(B[leading][:, leading])
    if reorder == "rcm":
        fill = rcm_order(pattern)
    elif reorder == "amd":
        fill = amd_order(pattern)
    else:
        raise ValueError(f"unknown reordering {reorder!r}")
    order = np.concatenate([leading[fill.forward], deferred])
    final = ps.reorder(order)
    report = PreprocessReport(final, deferred, leading, fill, bool(symmetric), unmatched)
    return report, B[order][:, order]
