"""Fill-reducing orderings on structurally symmetric patterns: RCM and AMD."""

from __future__ import annotations

import heapq

import numba
import numpy as np
import scipy.sparse as sp

from .sparse import Permutation


def _neighbors(pattern):
    indptr, indices = pattern.indptr, pattern.indices
    nbrs = [indices[indptr[i]:indptr[i + 1]] for i in range(pattern.shape[0])]
    return [nb[nb != i] for i, nb in enumerate(nbrs)]


def _offdiag_graph(pattern):
    """CSR arrays of the pattern with the diagonal removed."""
    P = sp.csr_matrix(pattern)
    P.sort_indices()
    n = P.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(P.indptr))
    cols = P.indices.astype(np.int64)
    off = rows != cols
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows[off], minlength=n), out=ptr[1:])
    return n, ptr, cols[off]


@numba.njit(cache=True)
def _bfs(start, ptr, adj, degree, mask, level, order, buf):
    """Cuthill-McKee BFS from ``start`` over ``mask``; neighbours by (degree, index).

    Fills ``order`` and returns ``(count, depth)``; ``level`` is reset afterwards
    except for the visited vertices, which the caller clears.
    """
    n = degree.size
    order[0] = start
    level[start] = 0
    head, tail = 0, 1
    while head < tail:
        v = order[head]
        head += 1
        k = 0
        for q in range(ptr[v], ptr[v + 1]):
            w = adj[q]
            if mask[w] and level[w] < 0:
                level[w] = level[v] + 1
                buf[k] = degree[w] * n + w
                k += 1
        if k:
            keys = np.sort(buf[:k])
            for t in range(k):
                order[tail] = keys[t] % n
                tail += 1
    return tail, level[order[tail - 1]]


@numba.njit(cache=True)
def _rcm_kernel(n, ptr, adj):
    degree = np.empty(n, dtype=np.int64)
    for i in range(n):
        degree[i] = ptr[i + 1] - ptr[i]
    mask = np.ones(n, dtype=np.bool_)
    level = np.full(n, -1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    trial = np.empty(n, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    pos = 0
    for seed in range(n):
        if not mask[seed]:
            continue
        # pseudo-peripheral start: restart from the lowest-degree vertex of the last level
        root = seed
        cnt, depth = _bfs(root, ptr, adj, degree, mask, level, trial, buf)
        while True:
            cand = -1
            for t in range(cnt):
                v = trial[t]
                if level[v] == depth and (cand < 0 or degree[v] < degree[cand]
                                          or (degree[v] == degree[cand] and v < cand)):
                    cand = v
            for t in range(cnt):
                level[trial[t]] = -1
            cnt2, depth2 = _bfs(cand, ptr, adj, degree, mask, level, trial, buf)
            if depth2 <= depth:
                for t in range(cnt2):
                    level[trial[t]] = -1
                cnt, depth = _bfs(root, ptr, adj, degree, mask, level, trial, buf)
                break
            root, cnt, depth = cand, cnt2, depth2
        for t in range(cnt):
            v = trial[t]
            level[v] = -1
            mask[v] = False
            order[pos] = v
            pos += 1
    return order[::-1].copy()


def rcm_order(pattern) -> Permutation:
    """Reverse Cuthill-McKee ordering, one pseudo-peripheral start per component."""
    n, ptr, adj = _offdiag_graph(pattern)
    return Permutation.from_forward(_rcm_kernel(n, ptr, adj))


@numba.njit(cache=True)
def _amd_kernel(n, ptr, adj):
    # each live variable owns a segment [element ids..., variable ids...] in iw;
    # each element owns an immutable segment of member variables.  Variables
    # with identical element and variable lists are merged into supervariables
    # (weight nv), and degrees are counted in original variables.
    cap = 2 * (ptr[n] + n) + 16
    iw = np.empty(cap, dtype=np.int64)
    pe = np.empty(n, dtype=np.int64)
    nel = np.zeros(n, dtype=np.int64)
    nadj = np.empty(n, dtype=np.int64)
    epe = np.zeros(n, dtype=np.int64)
    elen = np.zeros(n, dtype=np.int64)
    esize = np.zeros(n, dtype=np.int64)
    for i in range(n):
        pe[i] = ptr[i]
        nadj[i] = ptr[i + 1] - ptr[i]
        iw[ptr[i]:ptr[i + 1]] = adj[ptr[i]:ptr[i + 1]]
    pfree = ptr[n]
    # 0 variable, 1 live element, 2 dead element, 3 merged into a supervariable
    status = np.zeros(n, dtype=np.int8)
    nv = np.ones(n, dtype=np.int64)
    chain_next = np.full(n, -1, dtype=np.int64)
    chain_tail = np.arange(n)
    degree = nadj.copy()
    lpmark = np.full(n, -1, dtype=np.int64)
    wmark = np.full(n, -1, dtype=np.int64)
    w = np.zeros(n, dtype=np.int64)
    smark = np.full(n, -1, dtype=np.int64)
    hhead = np.full(n, -1, dtype=np.int64)
    hnext = np.full(n, -1, dtype=np.int64)
    hval = np.zeros(n, dtype=np.int64)
    heap = [(np.int64(0), np.int64(0))]
    heap.pop()
    for i in range(n):
        heap.append((degree[i], np.int64(i)))
    heapq.heapify(heap)
    order = np.empty(n, dtype=np.int64)
    lp = np.empty(n, dtype=np.int64)
    tmp = np.empty(n, dtype=np.int64)
    remaining = n
    pos = 0
    while len(heap) > 0:
        d, p = heapq.heappop(heap)
        if status[p] != 0 or d != degree[p]:
            continue
        # L_p: variable neighbours plus the members of every adjacent element
        size = 0
        lpw = 0
        lpmark[p] = p
        s = pe[p]
        for q in range(s + nel[p], s + nel[p] + nadj[p]):
            v = iw[q]
            if status[v] == 0 and lpmark[v] != p:
                lpmark[v] = p
                lp[size] = v
                size += 1
                lpw += nv[v]
        for q in range(s, s + nel[p]):
            e = iw[q]
            for r in range(epe[e], epe[e] + elen[e]):
                v = iw[r]
                if status[v] == 0 and lpmark[v] != p:
                    lpmark[v] = p
                    lp[size] = v
                    size += 1
                    lpw += nv[v]
            status[e] = 2
        status[p] = 1
        v = p
        while v != -1:
            order[pos] = v
            pos += 1
            v = chain_next[v]
        remaining -= nv[p]

        # room for the new element; compact (and grow) when full
        if pfree + size > cap:
            live = 0
            for v in range(n):
                if status[v] == 0:
                    live += nel[v] + nadj[v]
                elif status[v] == 1 and v != p:
                    live += elen[v]
            ncap = max(cap, 2 * (live + size) + 16)
            niw = np.empty(ncap, dtype=np.int64)
            t = 0
            for v in range(n):
                if status[v] == 0:
                    k = nel[v] + nadj[v]
                    niw[t:t + k] = iw[pe[v]:pe[v] + k]
                    pe[v] = t
                    t += k
                elif status[v] == 1 and v != p:
                    niw[t:t + elen[v]] = iw[epe[v]:epe[v] + elen[v]]
                    epe[v] = t
                    t += elen[v]
            iw = niw
            cap = ncap
            pfree = t
        epe[p] = pfree
        elen[p] = size
        esize[p] = lpw
        iw[pfree:pfree + size] = lp[:size]
        pfree += size
        nel[p] = 0
        nadj[p] = 0

        # |L_e \ L_p| (weighted) for the other elements touching L_p
        for t in range(size):
            i = lp[t]
            for q in range(pe[i], pe[i] + nel[i]):
                e = iw[q]
                if status[e] != 1 or e == p:
                    continue
                if wmark[e] != p:
                    wmark[e] = p
                    w[e] = esize[e]
                w[e] -= nv[i]
        for t in range(size):
            i = lp[t]
            for q in range(pe[i], pe[i] + nel[i]):
                e = iw[q]
                if status[e] == 1 and e != p and wmark[e] == p and w[e] == 0:
                    status[e] = 2  # swallowed by the new element

        for t in range(size):
            i = lp[t]
            s = pe[i]
            k = 0
            ext = 0
            h = 0
            for q in range(s, s + nel[i]):
                e = iw[q]
                if status[e] == 1 and e != p:
                    iw[s + k] = e
                    k += 1
                    ext += w[e]
                    h += e
            na = 0
            aw = 0
            for q in range(s + nel[i], s + nel[i] + nadj[i]):
                v = iw[q]
                if status[v] == 0 and lpmark[v] != p:
                    tmp[na] = v
                    na += 1
                    aw += nv[v]
                    h += v
            # i lost p as a neighbour or at least one absorbed element, so p fits
            iw[s + k] = p
            k += 1
            h += p
            iw[s + k:s + k + na] = tmp[:na]
            nel[i] = k
            nadj[i] = na
            degree[i] = min(remaining - nv[i], degree[i] + lpw - nv[i], aw + lpw - nv[i] + ext)
            h = h % n
            hval[i] = h
            hnext[i] = hhead[h]
            hhead[h] = i

        # merge indistinguishable variables of L_p
        for t in range(size):
            i = lp[t]
            h = hval[i]
            if hhead[h] == -1:
                continue
            a = hhead[h]
            hhead[h] = -1
            while a != -1:
                if status[a] == 0:
                    sa = pe[a]
                    for q in range(sa, sa + nel[a] + nadj[a]):
                        smark[iw[q]] = a
                    prev = a
                    b = hnext[a]
                    while b != -1:
                        same = nel[b] == nel[a] and nadj[b] == nadj[a] and status[b] == 0
                        if same:
                            sb = pe[b]
                            for q in range(sb, sb + nel[b] + nadj[b]):
                                if smark[iw[q]] != a:
                                    same = False
                                    break
                        nb = hnext[b]
                        if same:
                            nv[a] += nv[b]
                            degree[a] = max(degree[a] - nv[b], 0)
                            nv[b] = 0
                            status[b] = 3
                            chain_next[chain_tail[a]] = b
                            chain_tail[a] = chain_tail[b]
                            hnext[prev] = nb
                        else:
                            prev = b
                        b = nb
                a = hnext[a]
        for t in range(size):
            i = lp[t]
            if status[i] == 0:
                heapq.heappush(heap, (degree[i], i))
    return order


def amd_order(pattern) -> Permutation:
    """Approximate minimum degree ordering on a quotient graph.

    Eliminated variables become elements; each variable keeps its remaining
    variable neighbours and the list of elements it touches.  Degrees are the
    Amestoy-Davis-Duff upper bounds, with element absorption (including
    aggressive absorption of elements swallowed by the new one).
    """
    n, ptr, adj = _offdiag_graph(pattern)
    return Permutation.from_forward(_amd_kernel(n, ptr, adj))


def symbolic_fill(pattern, order) -> int:
    """Number of fill edges created by eliminating ``pattern`` in ``order``."""
    n = pattern.shape[0]
    adj = [set(nb.tolist()) for nb in _neighbors(pattern)]
    done = np.zeros(n, dtype=bool)
    fill = 0
    for p in np.asarray(order.forward if isinstance(order, Permutation) else order):
        nb = [v for v in adj[p] if not done[v]]
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                x, y = nb[a], nb[b]
                if y not in adj[x]:
                    adj[x].add(y)
                    adj[y].add(x)
                    fill += 1
        done[p] = True
    return fill


def bandwidth(pattern, perm: Permutation | None = None) -> int:
    P = pattern.tocoo()
    r, c = P.row, P.col
    if perm is not None:
        r, c = perm.inverse[r], perm.inverse[c]
    return int(np.abs(r - c).max()) if r.size else 0
