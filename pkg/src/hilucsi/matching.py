"""Maximum-product bipartite matching with dual potentials (MC64, product objective).

Costs are ``c_ij = log(max_k |a_kj|) - log|a_ij|``; a minimum-cost perfect
matching on these costs maximizes the product of the matched magnitudes.  The
solver is a successive-shortest-path (Hungarian) method with Dijkstra on
reduced costs ``c_ij - u_i - v_j >= 0``.  The duals give the scalings
``exp(u_i)`` and ``exp(v_j) / max_k |a_kj|``.
"""

from __future__ import annotations

import heapq

import numba
import numpy as np
import scipy.sparse as sp


class StructuralSingularityError(ValueError):
    """No perfect matching exists for the sparsity pattern."""

    def __init__(self, unmatched_rows):
        self.unmatched_rows = np.asarray(unmatched_rows, dtype=np.int64)
        shown = ", ".join(str(i) for i in self.unmatched_rows[:10])
        more = "" if self.unmatched_rows.size <= 10 else ", ..."
        super().__init__(f"structurally singular matrix; {self.unmatched_rows.size} "
                         f"unmatched row(s): [{shown}{more}]")


@numba.njit(cache=True)
def _shortest_augmenting_paths(n, colptr, rowind, cost, match_row, match_col, u, v):
    inf = np.inf
    dist = np.full(n, inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    touched = np.empty(n, dtype=np.int64)
    finalized = np.empty(n, dtype=np.int64)
    n_fail = 0
    for j0 in range(n):
        if match_col[j0] >= 0:
            continue
        heap = [(0.0, np.int64(0))]
        heap.pop()
        ntouch = 0
        nfin = 0
        for q in range(colptr[j0], colptr[j0 + 1]):
            i = rowind[q]
            r = max(cost[q] - u[i] - v[j0], 0.0)
            if r < dist[i]:
                if dist[i] == inf:
                    touched[ntouch] = i
                    ntouch += 1
                dist[i] = r
                pred[i] = j0
                heapq.heappush(heap, (r, i))
        sink = -1
        dsink = inf
        while len(heap) > 0:
            d, i = heapq.heappop(heap)
            if done[i] or d > dist[i]:
                continue
            done[i] = True
            finalized[nfin] = i
            nfin += 1
            if match_row[i] < 0:
                sink = i
                dsink = d
                break
            j = match_row[i]
            for q in range(colptr[j], colptr[j + 1]):
                i2 = rowind[q]
                if done[i2]:
                    continue
                nd = d + max(cost[q] - u[i2] - v[j], 0.0)
                if nd < dist[i2]:
                    if dist[i2] == inf:
                        touched[ntouch] = i2
                        ntouch += 1
                    dist[i2] = nd
                    pred[i2] = j
                    heapq.heappush(heap, (nd, i2))
        if sink >= 0:
            # dual update over the shortest-path tree, then flip the path
            v[j0] += dsink
            for t in range(nfin):
                i = finalized[t]
                if i == sink:
                    continue
                delta = dsink - dist[i]
                u[i] -= delta
                v[match_row[i]] += delta
            i = sink
            while True:
                j = pred[i]
                nxt = match_col[j]
                match_col[j] = i
                match_row[i] = j
                if j == j0:
                    break
                i = nxt
        else:
            n_fail += 1
        for t in range(ntouch):
            i = touched[t]
            dist[i] = inf
            pred[i] = -1
            done[i] = False
    return n_fail


def max_product_matching(A):
    """Maximum-product perfect matching of a square sparse matrix.

    Returns ``(match_col, row_scale, col_scale)`` where ``match_col[j]`` is the
    row matched to column ``j``.  Raises :class:`StructuralSingularityError`
    if the pattern admits no perfect matching.
    """
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("matching needs a square matrix")
    C = sp.csc_matrix(A)
    C.sort_indices()
    colptr = C.indptr.astype(np.int64)
    rowind = C.indices.astype(np.int64)
    mag = np.abs(C.data)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.ones(0), np.ones(0)
    col_len = np.diff(colptr)
    colmax = np.zeros(n)
    nz_cols = col_len > 0
    colmax[nz_cols] = np.maximum.reduceat(mag, colptr[:-1][nz_cols])
    cols_of = np.repeat(np.arange(n), col_len)
    with np.errstate(divide="ignore"):
        cost = np.log(colmax[cols_of]) - np.log(mag)

    # initial duals: v = column minima (zero by construction), u = row minima
    v = np.zeros(n)
    u = np.full(n, np.inf)
    np.minimum.at(u, rowind, cost)
    u[~np.isfinite(u)] = 0.0

    match_row = np.full(n, -1, dtype=np.int64)
    match_col = np.full(n, -1, dtype=np.int64)
    tight = cost - u[rowind] - v[cols_of] <= 0.0
    for q in np.flatnonzero(tight):
        i, j = rowind[q], cols_of[q]
        if match_row[i] < 0 and match_col[j] < 0:
            match_row[i] = j
            match_col[j] = i

    _shortest_augmenting_paths(n, colptr, rowind, cost, match_row, match_col, u, v)
    if (match_row < 0).any():
        raise StructuralSingularityError(np.flatnonzero(match_row < 0))
    row_scale = np.exp(u)
    col_scale = np.exp(v) / colmax
    return match_col, row_scale, col_scale
