"""Multilevel driver: preprocess, factor, form the Schur complement, recurse.

The hierarchy ends in a dense LU once the remaining system is small.  The
preconditioner solve walks the levels: forward elimination with ``L_B``,
diagonal solve, recursion on the Schur block, then back substitution with
``U_B`` corrected through ``U_F``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .crout import DropParams, LevelCollapse, LevelFactor, factorize_level
from .preprocess import StructuralSingularityError, is_nearly_symmetric, preprocess_level
from .schur import compute_schur
from .sparse import canonical

MAX_LEVELS = 64
PIVOT_FLOOR = 1e-14


class BuildError(RuntimeError):
    """The hierarchy could not be built (singular structure, collapse, runaway levels)."""


@dataclass(frozen=True)
class SolverOptions:
    tau0: float = 1e-4
    alpha0: float = 10.0
    kappa0: float = 3.0
    symm_pre_levels: int | None = None   # None: decide from the matrix
    dense_cutoff: int = 500
    restart: int = 30
    rtol: float = 1e-6
    maxit: int = 500

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.dense_cutoff < 1:
            raise ValueError("dense_cutoff must be >= 1")
        if self.maxit < 0:
            raise ValueError("maxit must be >= 0")
        if self.symm_pre_levels is not None and self.symm_pre_levels < 0:
            raise ValueError("symm_pre_levels must be >= 0")
        self.base_params()  # validates tau0/alpha0/kappa0

    def base_params(self) -> DropParams:
        return DropParams.uniform(self.alpha0, self.tau0, self.kappa0)


def params_for_level(base: DropParams, level: int) -> DropParams:
    """Thresholds used at ``level`` (1-based) given the first-level ones."""
    if level < 1:
        raise ValueError("levels are numbered from 1")
    if level == 1:
        return base
    alpha = 2 * base.alpha if level == 2 else base.alpha
    return DropParams(
        alpha=alpha, tau=base.tau / 10,
        kappa_d=max(base.kappa_d / 2, 2.0),
        kappa_l=max(base.kappa_l / 2, 2.0),
        kappa_u=max(base.kappa_u / 2, 2.0))


def next_level_params(base: DropParams, level: int) -> DropParams:
    """Thresholds for ``level + 1``: alpha doubles once, tau drops tenfold, kappa halves (>= 2).

    ``base`` holds the first-level values; from the third level on alpha
    returns to its base value while the refined tau and kappa are kept.
    """
    return params_for_level(base, level + 1)


def dense_cutoff_size(n: int, C: int = 500) -> float:
    return max(n ** (1.0 / 3.0), C)


# --------------------------------------------------------------------------
# dense terminal


@dataclass
class DenseLU:
    lu: np.ndarray       # packed unit-lower L and U
    piv: np.ndarray      # row k was swapped with row piv[k]
    n_replaced: int = 0  # pivots lifted to the floor

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    @property
    def nnz(self) -> int:
        """Nonzeros of the packed ``L`` and ``U`` factors (diagonal of ``L`` implicit)."""
        return int(np.count_nonzero(self.lu))

    def solve(self, b) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return sla.lu_solve((self.lu, self.piv), np.asarray(b, dtype=np.float64),
                            check_finite=False)

    def factors(self):
        """Explicit ``(P, L, U)`` with ``P @ S == L @ U``."""
        n = self.n
        L = np.tril(self.lu, -1) + np.eye(n)
        U = np.triu(self.lu)
        rows = np.arange(n)
        for k, p in enumerate(self.piv):
            rows[[k, p]] = rows[[p, k]]
        return np.eye(n)[rows], L, U


def dense_factorize(S) -> DenseLU:
    """LU with partial pivoting; pivots below ``1e-14 * max|S|`` are replaced
    by that floor, keeping their sign."""
    a = np.array(S, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("dense_factorize needs a square matrix")
    n = a.shape[0]
    piv = np.arange(n, dtype=np.int32)
    scale = np.abs(a).max() if n else 0.0
    floor = PIVOT_FLOOR * scale if scale > 0 else PIVOT_FLOOR
    replaced = 0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        piv[k] = p
        if p != k:
            a[[k, p]] = a[[p, k]]
        if abs(a[k, k]) < floor:
            a[k, k] = math.copysign(floor, a[k, k]) if a[k, k] != 0 else floor
            replaced += 1
        if k + 1 < n:
            a[k + 1:, k] /= a[k, k]
            a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return DenseLU(a, piv, replaced)


# --------------------------------------------------------------------------
# triangular solves


@numba.njit(cache=True)
def _unit_lower_solve(indptr, indices, data, x):
    for i in range(x.size):
        s = x[i]
        for q in range(indptr[i], indptr[i + 1]):
            s -= data[q] * x[indices[q]]
        x[i] = s


@numba.njit(cache=True)
def _unit_upper_solve(indptr, indices, data, x):
    for i in range(x.size - 1, -1, -1):
        s = x[i]
        for q in range(indptr[i], indptr[i + 1]):
            s -= data[q] * x[indices[q]]
        x[i] = s


def _csr_arrays(M):
    return (M.indptr.astype(np.int64), M.indices.astype(np.int64),
            M.data.astype(np.float64))


@dataclass
class _LevelApply:
    rp: np.ndarray
    rs: np.ndarray
    cp: np.ndarray
    cs: np.ndarray
    m: int
    lb: tuple
    ub: tuple
    le: sp.csr_matrix
    uf: sp.csr_matrix
    db: np.ndarray


def _level_apply(f: LevelFactor) -> _LevelApply:
    ps = f.perm_scale
    rp, cp = ps.row_perm.forward, ps.col_perm.forward
    return _LevelApply(rp, ps.row_scale[rp], cp, ps.col_scale[cp], f.m,
                       _csr_arrays(f.lb), _csr_arrays(f.ub), f.le, f.uf, f.db)


# --------------------------------------------------------------------------
# preconditioner


@dataclass
class Preconditioner:
    levels: list
    terminal: DenseLU | None
    original_n: int
    build_stats: list = field(default_factory=list)
    options: SolverOptions | None = None
    symmetric_hint: bool = False
    factor_seconds: float = 0.0

    def __post_init__(self):
        self._apply = [_level_apply(f) for f in self.levels]

    @property
    def n_levels(self) -> int:
        """Sparse levels plus the dense terminal (when present)."""
        return len(self.levels) + (1 if self.terminal is not None else 0)

    @property
    def nnz(self) -> int:
        return sum(f.nnz for f in self.levels) + (self.terminal.nnz if self.terminal else 0)

    def nnz_ratio(self, nnz_input: int) -> float:
        return self.nnz / nnz_input if nnz_input else math.inf

    def _solve(self, k: int, r: np.ndarray) -> np.ndarray:
        if k == len(self._apply):
            return self.terminal.solve(r) if self.terminal is not None else r.copy()
        a = self._apply[k]
        b = a.rs * r[a.rp]
        w1 = b[:a.m].copy()
        _unit_lower_solve(*a.lb, w1)
        y2 = self._solve(k + 1, b[a.m:] - a.le @ w1)
        y1 = w1 / a.db - a.uf @ y2
        _unit_upper_solve(*a.ub, y1)
        x = np.empty_like(r)
        x[a.cp] = a.cs * np.concatenate([y1, y2])
        return x

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.original_n,):
            raise ValueError(f"expected a vector of length {self.original_n}, got shape {u.shape}")
        return self._solve(0, u)

    __call__ = apply

    def as_dense(self) -> np.ndarray:
        """The operator ``M^{-1}`` assembled column by column (small problems only)."""
        return np.column_stack([self.apply(e) for e in np.eye(self.original_n)])


def apply_precond(M: Preconditioner, u) -> np.ndarray:
    """Apply the multilevel preconditioner ``M^{-1}`` to ``u``."""
    return M.apply(u)


def _factor_one(cur, params, sym, level, nnz_row, nnz_col, row_orig, col_orig, mean):
    reorder = "rcm" if (sym and level == 1) else "amd"
    try:
        report, B = preprocess_level(cur, params.kappa_d, sym, reorder, allow_singular=level > 1)
    except StructuralSingularityError as exc:
        raise BuildError(f"level {level}: {exc}") from exc
    ps = report.perm_scale
    f = factorize_level(B, params, nnz_row[row_orig[ps.row_perm.forward]],
                        nnz_col[col_orig[ps.col_perm.forward]], symmetric=sym,
                        n_static=report.n_static, nnz_mean=(mean, mean))
    return report, B, f


def build_preconditioner(A, opts: SolverOptions | None = None,
                         symmetric_hint: bool | None = None) -> Preconditioner:
    """Build the multilevel ILDU hierarchy for square ``A``."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    A = canonical(A)
    n0 = A.shape[0]
    if A.shape[1] != n0 or n0 < 1:
        raise ValueError(f"need a square matrix with n >= 1, got shape {A.shape}")
    if symmetric_hint is None:
        symmetric_hint = is_nearly_symmetric(A)
    auto = opts.symm_pre_levels is None
    symm_levels = (1 if symmetric_hint else 0) if auto else opts.symm_pre_levels
    base = opts.base_params()
    cutoff = dense_cutoff_size(n0, opts.dense_cutoff)

    nnz_row = np.diff(A.indptr)
    nnz_col = np.bincount(A.indices, minlength=n0)
    mean = A.nnz / n0
    row_orig = np.arange(n0)
    col_orig = np.arange(n0)

    levels: list[LevelFactor] = []
    stats: list[dict] = []
    terminal = None
    cur = A
    level = 1
    while True:
        nc = cur.shape[0]
        if nc == 0:
            break
        if nc <= cutoff:
            ts = time.perf_counter()
            terminal = dense_factorize(cur.toarray())
            stats.append(dict(level=level, size=nc, kind="dense", m=nc, static=0, dynamic=0,
                              nnz=terminal.nnz, replaced_pivots=terminal.n_replaced,
                              seconds=time.perf_counter() - ts))
            break
        if level > MAX_LEVELS:
            raise BuildError(f"more than {MAX_LEVELS} levels; remaining size {nc}")
        ts = time.perf_counter()
        params = params_for_level(base, level)
        sym = bool(symmetric_hint and level <= symm_levels)
        args = (params, level, nnz_row, nnz_col, row_orig, col_orig, mean)
        try:
            report, B, f = _factor_one(cur, args[0], sym, *args[1:])
        except LevelCollapse as exc:
            if not sym:
                raise BuildError(f"level {level} collapsed: {exc}") from exc
            sym = False
            try:
                report, B, f = _factor_one(cur, args[0], sym, *args[1:])
            except LevelCollapse as exc2:
                raise BuildError(f"level {level} collapsed twice: {exc2}") from exc2
        if auto and sym and level == 1 and report.n_static > 0 and symm_levels < 2:
            symm_levels = 2
        f.perm_scale = report.perm_scale.reorder(f.order)
        tail = f.order[f.m:]
        res = compute_schur(B[tail][:, tail], f.le, f.db, f.uf)
        m = f.m
        row_orig = row_orig[f.perm_scale.row_perm.forward[m:]]
        col_orig = col_orig[f.perm_scale.col_perm.forward[m:]]
        levels.append(f)
        stats.append(dict(level=level, size=nc, kind="sparse", m=m, static=f.n_static,
                          dynamic=f.n_dynamic, nnz=f.nnz, symmetric=sym,
                          alpha=params.alpha, tau=params.tau, kappa=params.kappa_d,
                          flops=f.flops, schur_work=res.nnz_work,
                          seconds=time.perf_counter() - ts))
        cur = res.sc
        level += 1

    return Preconditioner(levels, terminal, n0, stats, opts, bool(symmetric_hint),
                          time.perf_counter() - t0)
