"""Approximate Schur complement ``S = C - L_E D_B U_F``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import canonical


@dataclass(frozen=True)
class SchurResult:
    sc: sp.csr_matrix
    nnz_work: int  # scalar products formed by the sparse product


def compute_schur(c_hat, le, db, uf) -> SchurResult:
    """Row-oriented sparse product; exact cancellations are pruned, nothing else.

    ``le`` is ``nd x m`` (rows of the E-block factor), ``uf`` is ``m x nd``.
    """
    c_hat = sp.csr_matrix(c_hat)
    le = sp.csr_matrix(le)
    uf = sp.csr_matrix(uf)
    nd, m = le.shape
    if c_hat.shape != (nd, nd) or uf.shape != (m, nd) or np.shape(db) != (m,):
        raise ValueError(f"Schur dimension mismatch: C {c_hat.shape}, L_E {le.shape}, "
                         f"D {np.shape(db)}, U_F {uf.shape}")
    # every stored entry (i, k) of L_E meets the whole of row k of U_F
    uf_row_nnz = np.diff(uf.indptr)
    work = int(uf_row_nnz[le.indices].sum()) if le.nnz else 0
    if work == 0:
        return SchurResult(canonical(c_hat), 0)
    prod = (le @ sp.diags(np.asarray(db, dtype=np.float64))) @ uf
    return SchurResult(canonical(c_hat - prod), work)
