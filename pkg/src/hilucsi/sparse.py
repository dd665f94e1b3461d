"""Sparse matrix plumbing: construction, permutation/scaling, Matrix Market I/O.

Matrices are ``scipy.sparse.csr_matrix`` objects kept in canonical form:
sorted column indices, no duplicates, no stored zeros, 64-bit indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

INDEX = np.int64


class UnsupportedFormatError(ValueError):
    """Matrix Market file that is malformed or uses an unsupported field."""


def canonical(A) -> sp.csr_matrix:
    """Return ``A`` as a canonical CSR matrix (copying only when needed)."""
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix contains NaN or Inf entries")
    A.indptr = A.indptr.astype(INDEX, copy=False)
    A.indices = A.indices.astype(INDEX, copy=False)
    return A


def build_from_triplets(entries, n_rows: int, n_cols: int) -> sp.csr_matrix:
    """Assemble a CSR matrix from ``(row, col, value)`` triplets.

    Duplicate entries are summed; entries that end up exactly zero are dropped.
    """
    entries = list(entries)
    if entries:
        rows, cols, vals = (np.asarray(c) for c in zip(*entries))
    else:
        rows = cols = np.zeros(0, dtype=INDEX)
        vals = np.zeros(0)
    rows = rows.astype(INDEX)
    cols = cols.astype(INDEX)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
        raise IndexError("row index out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("column index out of range")
    A = sp.coo_matrix((vals.astype(np.float64), (rows, cols)), shape=(n_rows, n_cols))
    return canonical(A)


def read_matrix_market(path) -> tuple[sp.csr_matrix, str]:
    """Read a real coordinate Matrix Market file.

    Returns the matrix in full storage and the declared symmetry
    (``"general"`` or ``"symmetric"``).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        _, _, _, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except (ValueError, IndexError) as exc:
        raise UnsupportedFormatError(f"{path}: malformed Matrix Market header") from exc
    if fmt != "coordinate":
        raise UnsupportedFormatError(f"{path}: only coordinate format is supported")
    if field not in ("real", "integer"):
        raise UnsupportedFormatError(f"{path}: unsupported field {field!r}")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedFormatError(f"{path}: unsupported symmetry {symmetry!r}")
    try:
        A = scipy.io.mmread(str(path))
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    return canonical(A), symmetry


def write_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, field="real",
                     precision=17, symmetry="general")


def symmetrized_pattern(A) -> sp.csr_matrix:
    """0/1 pattern of ``A + A^T`` (structurally symmetric)."""
    if A.shape[0] != A.shape[1]:
        raise ValueError("symmetrized_pattern needs a square matrix")
    P = sp.csr_matrix(A, copy=True)
    P.data = np.ones_like(P.data)
    P = P + P.T
    P.data = np.ones_like(P.data)
    return canonical(P)


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"spmv: vector length {x.shape[0]} != {A.shape[1]} columns")
    return A @ x


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``[0, n)``; ``forward[k]`` is the old index placed at ``k``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward) -> "Permutation":
        forward = np.asarray(forward, dtype=INDEX)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.size, dtype=INDEX)
        perm = cls(forward, inverse)
        perm.check()
        return perm

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        ident = np.arange(n, dtype=INDEX)
        return cls(ident, ident.copy())

    def __len__(self) -> int:
        return self.forward.size

    def check(self) -> None:
        n = self.forward.size
        if self.inverse.size != n:
            raise ValueError("permutation arrays differ in length")
        if n and (np.sort(self.forward) != np.arange(n)).any():
            raise ValueError("not a permutation")
        if (self.inverse[self.forward] != np.arange(n)).any():
            raise ValueError("forward and inverse disagree")

    def compose(self, inner) -> "Permutation":
        """Apply ``inner`` (an index sequence on the permuted order) after ``self``."""
        return Permutation.from_forward(self.forward[np.asarray(inner, dtype=INDEX)])


@dataclass(frozen=True)
class PermScale:
    """Row/column permutations plus positive diagonal scalings.

    The transformed matrix is ``B[k, l] = row_scale[r[k]] * A[r[k], c[l]] * col_scale[c[l]]``
    with ``r = row_perm.forward`` and ``c = col_perm.forward``; the scale
    vectors are indexed by the *original* row/column numbers.
    """

    row_perm: Permutation
    col_perm: Permutation
    row_scale: np.ndarray
    col_scale: np.ndarray

    def __post_init__(self):
        for s in (self.row_scale, self.col_scale):
            if not (np.all(np.isfinite(s)) and np.all(s > 0)):
                raise ValueError("scalings must be positive and finite")

    @classmethod
    def identity(cls, n: int) -> "PermScale":
        return cls(Permutation.identity(n), Permutation.identity(n), np.ones(n), np.ones(n))

    @property
    def n(self) -> int:
        return len(self.row_perm)

    @property
    def is_symmetric(self) -> bool:
        return (np.array_equal(self.row_perm.forward, self.col_perm.forward)
                and np.array_equal(self.row_scale, self.col_scale))

    def reorder(self, order) -> "PermScale":
        """Apply a further symmetric reordering ``order`` to the transformed matrix."""
        return PermScale(self.row_perm.compose(order), self.col_perm.compose(order),
                         self.row_scale, self.col_scale)


def apply_perm_scale(A, ps: PermScale) -> sp.csr_matrix:
    """Return ``D_r P_r^T A P_c D_c`` as described on :class:`PermScale`."""
    if A.shape != (ps.n, ps.n):
        raise ValueError(f"dimension mismatch: {A.shape} vs PermScale of size {ps.n}")
    A = sp.csr_matrix(A)
    D = sp.diags(ps.row_scale) @ A @ sp.diags(ps.col_scale)
    D = sp.csr_matrix(D)[ps.row_perm.forward][:, ps.col_perm.forward]
    return canonical(D)
