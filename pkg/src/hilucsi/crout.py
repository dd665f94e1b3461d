"""Single-level Crout incomplete LDU with deferring and dual dropping.

At step ``k`` the Crout update forms row ``k`` of ``U`` and column ``k`` of
``L`` from the already finished factors.  A step is deferred (its row and
column pushed past the leading block) when the pivot is smaller than
``1/kappa_d`` or when the incremental estimates of ``||L^{-1}||_inf`` or
``||U^{-1}||_1`` exceed their bounds.  Accepted vectors are dropped twice:
by magnitude scaled with ``kappa_d`` times the running inverse-norm estimate,
then down to a fixed count derived from the input matrix's nonzeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

NNZ_MEAN_FRACTION = 0.85


class LevelCollapse(RuntimeError):
    """Every candidate step of a level was deferred (empty leading block)."""


@dataclass(frozen=True)
class DropParams:
    alpha: float = 10.0
    tau: float = 1e-4
    kappa_d: float = 3.0
    kappa_l: float = 3.0
    kappa_u: float = 3.0

    def __post_init__(self):
        vals = (self.alpha, self.tau, self.kappa_d, self.kappa_l, self.kappa_u)
        if not all(math.isfinite(v) or v == math.inf for v in vals):
            raise ValueError("drop parameters must not be NaN")
        if self.alpha < 1 or self.tau < 0:
            raise ValueError("need alpha >= 1 and tau >= 0")
        if min(self.kappa_d, self.kappa_l, self.kappa_u) < 1:
            raise ValueError("kappa bounds must be >= 1")

    @classmethod
    def uniform(cls, alpha: float, tau: float, kappa: float) -> "DropParams":
        return cls(alpha, tau, kappa, kappa, kappa)

    @classmethod
    def exact(cls, kappa: float = math.inf) -> "DropParams":
        """No dropping at all; deferring still governed by ``kappa``."""
        return cls(math.inf, 0.0, kappa, kappa, kappa)


def nnz_limits(nnz_ref, alpha: float, mean: float | None = None) -> np.ndarray:
    """Per-vector nonzero budget ``ceil(alpha * max(nnz_ref, 0.85 * mean))`` (at least 1)."""
    nnz_ref = np.asarray(nnz_ref, dtype=np.float64)
    if mean is None:
        mean = nnz_ref.mean() if nnz_ref.size else 0.0
    if alpha == math.inf:
        return np.full(nnz_ref.size, np.iinfo(np.int64).max // 4, dtype=np.int64)
    lim = np.ceil(alpha * np.maximum(nnz_ref, NNZ_MEAN_FRACTION * mean))
    return np.maximum(lim, 1).astype(np.int64)


# --------------------------------------------------------------------------
# dropping


@numba.njit(cache=True)
def _better(mag, idx, a, b):
    return mag[a] > mag[b] or (mag[a] == mag[b] and idx[a] < idx[b])


@numba.njit(cache=True)
def _select_top(mag, idx, perm, count, kth):
    """Partially order ``perm[:count]`` so its first ``kth`` slots are the largest."""
    lo, hi = 0, count
    while lo < kth < hi:
        mid = (lo + hi) // 2
        a, b, c = perm[lo], perm[mid], perm[hi - 1]
        # median of three as pivot, moved to the end
        if _better(mag, idx, a, b):
            if _better(mag, idx, b, c):
                piv = mid
            elif _better(mag, idx, a, c):
                piv = hi - 1
            else:
                piv = lo
        else:
            if _better(mag, idx, a, c):
                piv = lo
            elif _better(mag, idx, b, c):
                piv = hi - 1
            else:
                piv = mid
        perm[piv], perm[hi - 1] = perm[hi - 1], perm[piv]
        pv = perm[hi - 1]
        i = lo
        for j in range(lo, hi - 1):
            if _better(mag, idx, perm[j], pv):
                perm[i], perm[j] = perm[j], perm[i]
                i += 1
        perm[i], perm[hi - 1] = perm[hi - 1], perm[i]
        if i < kth:
            lo = i + 1
        else:
            hi = i


@numba.njit(cache=True)
def _drop(idx, val, count, limit, scale, tau, mag, perm, sort_result):
    """Drop ``scale*|v| <= tau``, keep the ``limit`` largest (in place).

    Survivors keep their relative input order unless ``sort_result`` asks
    for them sorted by index.
    """
    k = 0
    for t in range(count):
        if scale * abs(val[t]) > tau:
            idx[k] = idx[t]
            val[k] = val[t]
            k += 1
    if k > limit:
        for t in range(k):
            mag[t] = abs(val[t])
            perm[t] = t
        _select_top(mag, idx, perm, k, limit)
        keep = np.sort(perm[:limit])
        for t in range(limit):
            idx[t] = idx[keep[t]]
            val[t] = val[keep[t]]
        k = limit
    if sort_result and k > 1:
        order = np.argsort(idx[:k])
        si = idx[:k][order]
        sv = val[:k][order]
        idx[:k] = si
        val[:k] = sv
    return k


def drop_vector(indices, values, limit: int, scale: float, tau: float):
    """Dual dropping of one sparse vector; returns ``(indices, values)`` sorted by index.

    Entries with ``scale*|v| <= tau`` go first, then only the ``limit`` largest
    magnitudes survive (ties favour the lower index).
    """
    idx = np.array(indices, dtype=np.int64)
    val = np.array(values, dtype=np.float64)
    k = _drop(idx, val, idx.size, int(limit), float(scale), float(tau),
              np.empty(idx.size), np.empty(idx.size, dtype=np.int64), True)
    return idx[:k], val[:k]


# --------------------------------------------------------------------------
# incremental inverse-norm estimate


@numba.njit(cache=True)
def _estimate_entry(dot, diag):
    """Choose ``b = +-1`` maximizing ``|b - dot|``; return ``(b - dot) / diag``."""
    b = -1.0 if dot > 0 else 1.0
    return (b - dot) / diag


@dataclass
class InverseNormEstimator:
    """Lower-bound estimate of ``||T^{-1}||_inf`` for a growing unit lower triangle.

    Solves ``T x = b`` one row at a time with each ``b_k = +-1`` picked to
    maximize ``|x_k|``; since ``||b||_inf = 1``, ``max |x_k|`` never exceeds
    the true norm.  For ``||U^{-1}||_1`` feed the columns of ``U``.
    """

    x: list = field(default_factory=list)
    kappa_tilde: float = 0.0


def update_inverse_norm(est: InverseNormEstimator, indices, values, diag: float = 1.0) -> float:
    """Extend the triangle by one row (entries at earlier ``indices``) and update the bound."""
    x = np.asarray(est.x, dtype=np.float64)
    dot = float(np.dot(np.asarray(values, dtype=np.float64), x[np.asarray(indices, dtype=np.int64)])) \
        if len(indices) else 0.0
    xk = _estimate_entry(dot, float(diag))
    est.x.append(xk)
    est.kappa_tilde = max(est.kappa_tilde, abs(xk))
    return est.kappa_tilde


# --------------------------------------------------------------------------
# bi-index storage with deferral gap


PENDING, ACCEPTED, DEFERRED = 0, 1, 2


class AugmentedCroutStore:
    """Incrementally grown ``L`` (by column) and ``U`` (by row) for one level.

    Each stored entry is also threaded onto a linked list so that row ``p`` of
    ``L`` and column ``p`` of ``U`` can be walked at step ``p``.  Deferred
    indices are relabelled past the end of the level (the gap); the gap is
    closed by :meth:`final_order`.
    """

    def __init__(self, n: int, n_static: int = 0, cap_l: int = 0, cap_u: int = 0):
        self.n = n
        self.m0 = n - n_static
        self.status = np.zeros(n, dtype=np.int8)
        self.status[self.m0:] = DEFERRED
        self.deferred = np.empty(n, dtype=np.int64)
        self.n_deferred = 0
        self.accepted = np.empty(self.m0, dtype=np.int64)
        self.m = 0
        self.d = np.empty(self.m0)
        self.x_l = np.empty(self.m0)
        self.x_u = np.empty(self.m0)
        self.l_ptr = np.zeros(self.m0 + 1, dtype=np.int64)
        self.l_idx = np.empty(cap_l, dtype=np.int64)
        self.l_val = np.empty(cap_l)
        self.l_next = np.empty(cap_l, dtype=np.int64)
        self.l_step = np.empty(cap_l, dtype=np.int64)
        self.l_row_head = np.full(n, -1, dtype=np.int64)
        self.u_ptr = np.zeros(self.m0 + 1, dtype=np.int64)
        self.u_idx = np.empty(cap_u, dtype=np.int64)
        self.u_val = np.empty(cap_u)
        self.u_next = np.empty(cap_u, dtype=np.int64)
        self.u_step = np.empty(cap_u, dtype=np.int64)
        self.u_col_head = np.full(n, -1, dtype=np.int64)

    @property
    def gap(self) -> int:
        """Number of dynamically deferred indices (width of the relabelling gap)."""
        return self.n_deferred

    def final_order(self) -> np.ndarray:
        """Accepted indices in step order, then static deferrals, then dynamic ones."""
        return np.concatenate([self.accepted[:self.m], np.arange(self.m0, self.n),
                               self.deferred[:self.n_deferred]]).astype(np.int64)


def defer_step(store: AugmentedCroutStore, k: int) -> None:
    """Push candidate ``k`` to the tail of the level (next gap slot)."""
    if store.status[k] != PENDING:
        raise ValueError(f"index {k} is not a pending step")
    store.status[k] = DEFERRED
    store.deferred[store.n_deferred] = k
    store.n_deferred += 1


def accept_step(store: AugmentedCroutStore, k: int) -> None:
    """Bookkeeping-only acceptance (no numerical work); used by tests and simulations."""
    if store.status[k] != PENDING:
        raise ValueError(f"index {k} is not a pending step")
    store.status[k] = ACCEPTED
    store.accepted[store.m] = k
    store.m += 1


@numba.njit(cache=True)
def _crout_kernel(n, m0, rp, ci, rv, cp, ri, cv, row_limit, col_limit,
                  tau, kappa_d, kappa_l, kappa_u, symmetric,
                  status, deferred, accepted, d, x_l, x_u,
                  l_ptr, l_idx, l_val, l_next, l_step, l_row_head,
                  u_ptr, u_idx, u_val, u_next, u_step, u_col_head):
    wv = np.zeros(n)
    wm = np.full(n, -1, dtype=np.int64)
    wi = np.empty(n, dtype=np.int64)
    cand_i = np.empty(n, dtype=np.int64)
    cand_v = np.empty(n)
    mag = np.empty(n)
    perm = np.empty(n, dtype=np.int64)
    n_def = 0
    step = 0
    run_l = 0.0
    run_u = 0.0
    flops = 0
    pivot_min = 1.0 / kappa_d
    for p in range(m0):
        # row p of U, diagonal included: a[p, :] - sum_j L[p, j] d_j U[j, :]
        nw = 0
        for q in range(rp[p], rp[p + 1]):
            c = ci[q]
            if status[c] == 1:
                continue
            wv[c] = rv[q]
            wm[c] = p
            wi[nw] = c
            nw += 1
        if wm[p] != p:
            wv[p] = 0.0
            wm[p] = p
            wi[nw] = p
            nw += 1
        dot_l = 0.0
        e = l_row_head[p]
        while e >= 0:
            j = l_step[e]
            lv = l_val[e]
            dot_l += lv * x_l[j]
            coef = lv * d[j]
            for q in range(u_ptr[j], u_ptr[j + 1]):
                c = u_idx[q]
                if status[c] == 1:
                    continue
                if wm[c] != p:
                    wm[c] = p
                    wv[c] = 0.0
                    wi[nw] = c
                    nw += 1
                wv[c] -= coef * u_val[q]
                flops += 1
            e = l_next[e]
        dk = wv[p]
        if symmetric:
            dot_u = dot_l
        else:
            dot_u = 0.0
            e = u_col_head[p]
            while e >= 0:
                dot_u += u_val[e] * x_u[u_step[e]]
                e = u_next[e]
        xl = _estimate_entry(dot_l, 1.0)
        xu = _estimate_entry(dot_u, 1.0)
        if not (abs(dk) >= pivot_min) or dk == 0.0 or abs(xl) > kappa_l or abs(xu) > kappa_u:
            status[p] = 2
            deferred[n_def] = p
            n_def += 1
            continue

        j = step
        accepted[j] = p
        d[j] = dk
        x_l[j] = xl
        x_u[j] = xu
        run_l = max(run_l, abs(xl))
        run_u = max(run_u, abs(xu))
        status[p] = 1

        k = 0
        for t in range(nw):
            c = wi[t]
            if c == p:
                continue
            val = wv[c] / dk
            if val != 0.0:
                cand_i[k] = c
                cand_v[k] = val
                k += 1
        lim = row_limit[p]
        if symmetric:
            lim = min(lim, col_limit[p])
        k = _drop(cand_i, cand_v, k, lim, kappa_d * run_u, tau, mag, perm, False)
        base = u_ptr[j]
        for t in range(k):
            e = base + t
            c = cand_i[t]
            u_idx[e] = c
            u_val[e] = cand_v[t]
            u_step[e] = j
            u_next[e] = u_col_head[c]
            u_col_head[c] = e
        u_ptr[j + 1] = base + k

        if not symmetric:
            # column p of L: a[:, p] - sum_j L[:, j] d_j U[j, p]
            nw = 0
            for q in range(cp[p], cp[p + 1]):
                r = ri[q]
                if status[r] == 1:
                    continue
                wv[r] = cv[q]
                wm[r] = n + p
                wi[nw] = r
                nw += 1
            e = u_col_head[p]
            while e >= 0:
                jj = u_step[e]
                coef = u_val[e] * d[jj]
                for q in range(l_ptr[jj], l_ptr[jj + 1]):
                    r = l_idx[q]
                    if status[r] == 1:
                        continue
                    if wm[r] != n + p:
                        wm[r] = n + p
                        wv[r] = 0.0
                        wi[nw] = r
                        nw += 1
                    wv[r] -= coef * l_val[q]
                    flops += 1
                e = u_next[e]
            k = 0
            for t in range(nw):
                r = wi[t]
                val = wv[r] / dk
                if val != 0.0:
                    cand_i[k] = r
                    cand_v[k] = val
                    k += 1
            k = _drop(cand_i, cand_v, k, col_limit[p], kappa_d * run_l, tau, mag, perm, False)
        base = l_ptr[j]
        for t in range(k):
            e = base + t
            r = cand_i[t]
            l_idx[e] = r
            l_val[e] = cand_v[t]
            l_step[e] = j
            l_next[e] = l_row_head[r]
            l_row_head[r] = e
        l_ptr[j + 1] = base + k
        step += 1
    return step, n_def, flops


# --------------------------------------------------------------------------
# level factor


@dataclass
class LevelFactor:
    """Factors of one level: ``[[L_B, 0], [L_E, I]] diag(D_B, S) [[U_B, U_F], [0, I]]``.

    ``order`` maps the level's final ordering to the input ordering of
    :func:`factorize_level`; the first ``m`` entries form the leading block.
    """

    lb: sp.csr_matrix
    db: np.ndarray
    ub: sp.csr_matrix
    le: sp.csr_matrix
    uf: sp.csr_matrix
    order: np.ndarray
    m: int
    n_static: int
    n_dynamic: int
    params: DropParams
    symmetric: bool
    kappa_l: np.ndarray          # running estimate after each accepted step
    kappa_u: np.ndarray
    row_limit: np.ndarray        # Eq. (5) budgets in final order
    col_limit: np.ndarray
    flops: int
    perm_scale: object = None    # composite PermScale, filled in by the driver

    @property
    def n(self) -> int:
        return self.order.size

    @property
    def deferred(self) -> np.ndarray:
        return self.order[self.m:]

    @property
    def nnz(self) -> int:
        """Stored entries of all five factors (mirrored symmetric factors counted twice)."""
        return self.lb.nnz + self.le.nnz + self.ub.nnz + self.uf.nnz + self.m


@numba.njit(cache=True)
def _split_compressed(ptr, idx, val, newpos, m, n):
    # relabel the minor indices of m compressed vectors and split them at m;
    # both parts come back compressed with sorted minor indices (bucket pass
    # over labels, so vectors fill in increasing label order)
    nnz = ptr[m]
    bp = np.zeros(m + 1, dtype=np.int64)
    fp = np.zeros(m + 1, dtype=np.int64)
    lptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(m):
        for q in range(ptr[k], ptr[k + 1]):
            j = newpos[idx[q]]
            lptr[j + 1] += 1
            if j < m:
                bp[k + 1] += 1
            else:
                fp[k + 1] += 1
    for j in range(n):
        lptr[j + 1] += lptr[j]
    for k in range(m):
        bp[k + 1] += bp[k]
        fp[k + 1] += fp[k]
    owner = np.empty(nnz, dtype=np.int64)
    bval = np.empty(nnz)
    fill = lptr[:n].copy()
    for k in range(m):
        for q in range(ptr[k], ptr[k + 1]):
            j = newpos[idx[q]]
            owner[fill[j]] = k
            bval[fill[j]] = val[q]
            fill[j] += 1
    bi = np.empty(bp[m], dtype=np.int64)
    bv = np.empty(bp[m])
    fi = np.empty(fp[m], dtype=np.int64)
    fv = np.empty(fp[m])
    nb = bp[:m].copy()
    nf = fp[:m].copy()
    for j in range(n):
        for t in range(lptr[j], lptr[j + 1]):
            k = owner[t]
            if j < m:
                bi[nb[k]] = j
                bv[nb[k]] = bval[t]
                nb[k] += 1
            else:
                fi[nf[k]] = j - m
                fv[nf[k]] = bval[t]
                nf[k] += 1
    return bp, bi, bv, fp, fi, fv


@numba.njit(cache=True)
def _limit_rows_mask(indptr, indices, data, limits):
    keep = np.ones(data.size, dtype=np.bool_)
    width = 0
    for i in range(indptr.size - 1):
        width = max(width, indptr[i + 1] - indptr[i])
    mag = np.empty(width)
    perm = np.empty(width, dtype=np.int64)
    for i in range(indptr.size - 1):
        s, e = indptr[i], indptr[i + 1]
        cnt = e - s
        lim = limits[i]
        if cnt <= lim:
            continue
        idx = indices[s:e]
        for t in range(cnt):
            mag[t] = abs(data[s + t])
            perm[t] = t
        _select_top(mag, idx, perm, cnt, lim)
        for t in range(lim, cnt):
            keep[s + perm[t]] = False
    return keep


def _limit_rows(M: sp.csr_matrix, limits) -> sp.csr_matrix:
    """Keep the ``limits[i]`` largest-magnitude entries of each row (ties: lower column)."""
    M = sp.csr_matrix(M)
    M.sort_indices()
    counts = np.diff(M.indptr)
    limits = np.asarray(limits, dtype=np.int64)
    if not counts.size or (counts <= limits).all():
        return M
    keep = _limit_rows_mask(M.indptr.astype(np.int64), M.indices.astype(np.int64),
                            M.data, limits)
    rows = np.repeat(np.arange(M.shape[0]), counts)
    return sp.csr_matrix((M.data[keep], M.indices[keep], np.concatenate(
        [[0], np.cumsum(np.bincount(rows[keep], minlength=M.shape[0]))])), shape=M.shape)


def factorize_level(A, params: DropParams, nnz_ref_row, nnz_ref_col, symmetric: bool = False,
                    n_static: int = 0, nnz_mean=None) -> LevelFactor:
    """Crout ILDU of the leading block of a preprocessed level matrix.

    ``A`` is already equilibrated and ordered; its last ``n_static`` indices
    were deferred statically.  ``nnz_ref_row``/``nnz_ref_col`` are the nonzero
    counts of the user's original matrix, aligned with ``A``'s rows/columns;
    ``nnz_mean`` optionally gives the original per-row/column averages.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("factorize_level needs a square matrix")
    A.sort_indices()
    C = A.tocsc()
    C.sort_indices()
    mean_r, mean_c = nnz_mean if nnz_mean is not None else (None, None)
    row_limit = nnz_limits(nnz_ref_row, params.alpha, mean_r)
    col_limit = nnz_limits(nnz_ref_col, params.alpha, mean_c)
    m0 = n - n_static
    cap = max(n - 1, 0)
    cap_u = int(np.minimum(row_limit[:m0], cap).sum())
    cap_l = int(np.minimum(col_limit[:m0], cap).sum())
    store = AugmentedCroutStore(n, n_static, cap_l, cap_u)

    i64 = np.int64
    m, n_dyn, flops = _crout_kernel(
        n, m0, A.indptr.astype(i64), A.indices.astype(i64), A.data.astype(np.float64),
        C.indptr.astype(i64), C.indices.astype(i64), C.data.astype(np.float64),
        row_limit, col_limit, float(params.tau), float(params.kappa_d),
        float(params.kappa_l), float(params.kappa_u), bool(symmetric),
        store.status, store.deferred, store.accepted, store.d, store.x_l, store.x_u,
        store.l_ptr, store.l_idx, store.l_val, store.l_next, store.l_step, store.l_row_head,
        store.u_ptr, store.u_idx, store.u_val, store.u_next, store.u_step, store.u_col_head)
    store.m = m
    store.n_deferred = n_dyn
    if m == 0 and n > 0:
        raise LevelCollapse(f"all {m0} candidate steps of a level of size {n} were deferred")

    order = store.final_order()
    newpos = np.empty(n, dtype=i64)
    newpos[order] = np.arange(n, dtype=i64)
    nd = n - m

    bp, bi, bv, fp, fi, fv = _split_compressed(store.u_ptr, store.u_idx, store.u_val, newpos, m, n)
    ub = sp.csr_matrix((bv, bi, bp), shape=(m, m))
    uf = sp.csr_matrix((fv, fi, fp), shape=(m, nd)).tocsc()

    row_limit_f = row_limit[order]
    col_limit_f = col_limit[order]
    if symmetric:
        lim = np.minimum(row_limit_f, col_limit_f)[m:]
        uf = _limit_rows(uf.T.tocsr(), lim).T.tocsr()
        lb = ub.T.tocsr()
        le = uf.T.tocsr()
    else:
        uf = _limit_rows(uf.T.tocsr(), col_limit_f[m:]).T.tocsr()
        bp, bi, bv, fp, fi, fv = _split_compressed(store.l_ptr, store.l_idx, store.l_val, newpos, m, n)
        lb = sp.csc_matrix((bv, bi, bp), shape=(m, m)).tocsr()
        le = sp.csc_matrix((fv, fi, fp), shape=(nd, m)).tocsr()
        le = _limit_rows(le, row_limit_f[m:])
    for M in (lb, ub, le, uf):
        M.sort_indices()

    return LevelFactor(
        lb=lb, db=store.d[:m].copy(), ub=ub, le=le, uf=uf, order=order, m=m,
        n_static=n_static, n_dynamic=n_dyn, params=params, symmetric=bool(symmetric),
        kappa_l=np.maximum.accumulate(np.abs(store.x_l[:m])),
        kappa_u=np.maximum.accumulate(np.abs(store.x_u[:m])),
        row_limit=row_limit_f, col_limit=col_limit_f, flops=int(flops))
