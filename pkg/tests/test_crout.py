import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from checks import level_violations, nnz_per_col, nnz_per_row, reconstruct
from hilucsi.crout import (
    _split_compressed,
    ACCEPTED, AugmentedCroutStore, DEFERRED, DropParams, InverseNormEstimator, LevelCollapse,
    accept_step, defer_step, drop_vector, factorize_level, nnz_limits, update_inverse_norm,
)
from hilucsi.gallery import laplacian_2d, random_sparse
from hilucsi.preprocess import preprocess_level
from hilucsi.sparse import canonical

EXACT = DropParams.exact(1e15)


def refs(A):
    A = canonical(A)
    return np.diff(A.indptr), np.bincount(A.indices, minlength=A.shape[0])


def factor(A, params=EXACT, symmetric=False, n_static=0):
    r, c = refs(A)
    return factorize_level(canonical(A), params, r, c, symmetric=symmetric, n_static=n_static)


class TestDropParams:
    def test_defaults(self):
        p = DropParams()
        assert (p.alpha, p.tau, p.kappa_d, p.kappa_l, p.kappa_u) == (10, 1e-4, 3, 3, 3)

    @pytest.mark.parametrize("kw", [dict(alpha=0.5), dict(tau=-1.0), dict(kappa_d=0.9),
                                    dict(kappa_u=0.0), dict(tau=math.nan)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DropParams(**kw)

    def test_exact(self):
        p = DropParams.exact()
        assert p.alpha == math.inf and p.tau == 0 and p.kappa_d == math.inf


class TestLimits:
    def test_formula(self):
        lim = nnz_limits([1, 5, 10], alpha=2.0, mean=5.0)
        # ceil(2 * max(nnz, 4.25))
        assert np.array_equal(lim, [9, 10, 20])

    def test_at_least_one(self):
        assert np.array_equal(nnz_limits([0, 0], 1.0, 0.0), [1, 1])

    def test_infinite_alpha(self):
        assert (nnz_limits([3], math.inf) > 10**15).all()


class TestDropVector:
    def test_threshold(self):
        idx, val = drop_vector([0, 1, 2], [1, 1e-9, 0.5], limit=3, scale=10, tau=1e-4)
        assert np.array_equal(idx, [0, 2]) and np.array_equal(val, [1, 0.5])

    def test_ties_deterministic(self):
        idx, val = drop_vector(np.arange(10)[::-1], np.ones(10), limit=4, scale=1, tau=0)
        assert np.array_equal(idx, [0, 1, 2, 3])
        assert np.array_equal(val, np.ones(4))

    def test_top_two(self):
        idx, val = drop_vector([0, 1, 2, 3], [0.9, 0.5, 0.3, 0.1], limit=2, scale=1, tau=0)
        assert np.array_equal(val, [0.9, 0.5])

    def test_equality_drops(self):
        idx, _ = drop_vector([0, 1], [1.0, 2.0], limit=5, scale=1.0, tau=1.0)
        assert np.array_equal(idx, [1])

    def test_empty_and_zero_limit(self):
        idx, val = drop_vector([], [], 3, 1.0, 0.0)
        assert idx.size == 0
        idx, val = drop_vector([1, 2], [1.0, 2.0], 0, 1.0, 0.0)
        assert idx.size == 0

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.integers(0, 60), st.sampled_from([0.1, 0.5, 1.0, -1.0, 2.0, 1e-6, -3e-5])),
                    unique_by=lambda t: t[0], max_size=40),
           st.integers(0, 45), st.floats(0.1, 100), st.sampled_from([0.0, 1e-4, 1e-2]))
    def test_matches_sort_oracle(self, entries, limit, scale, tau):
        idx = [e[0] for e in entries]
        val = [e[1] for e in entries]
        got_i, got_v = drop_vector(idx, val, limit, scale, tau)
        surv = [(i, v) for i, v in entries if scale * abs(v) > tau]
        surv.sort(key=lambda t: (-abs(t[1]), t[0]))
        ref = sorted(surv[:limit])
        assert got_i.tolist() == [i for i, _ in ref]
        assert got_v.tolist() == [v for _, v in ref]


def estimate_rows(L):
    est = InverseNormEstimator()
    out = []
    for k in range(L.shape[0]):
        j = np.flatnonzero(L[k, :k])
        out.append(update_inverse_norm(est, j, L[k, j]))
    return out


class TestInverseNormEstimator:
    def test_identity(self):
        assert estimate_rows(np.eye(5)) == [1.0] * 5

    def test_bidiagonal(self):
        L = np.eye(4) - np.eye(4, k=-1)
        true = np.abs(np.linalg.inv(L)).sum(axis=1).max()
        assert true == 4.0
        assert estimate_rows(L)[-1] == 4.0

    def test_full_strict_lower_doubles(self):
        L = np.eye(4) - np.tril(np.ones((4, 4)), -1)
        assert np.abs(np.linalg.inv(L)).sum(axis=1).max() == 8.0
        assert estimate_rows(L) == [1.0, 2.0, 4.0, 8.0]

    def test_random_lower_bound(self, rng):
        for _ in range(20):
            L = np.eye(10) + np.tril(rng.standard_normal((10, 10)), -1)
            ests = estimate_rows(L)
            assert all(b >= a for a, b in zip(ests, ests[1:]))
            for k in range(1, 11):
                true_k = np.abs(np.linalg.inv(L[:k, :k])).sum(axis=1).max()
                assert ests[k - 1] <= true_k * (1 + 1e-12)

    def test_diagonal_scaling(self):
        est = InverseNormEstimator()
        assert update_inverse_norm(est, [], [], diag=0.5) == 2.0


class TestStore:
    def test_defer_first_of_three(self):
        s = AugmentedCroutStore(3)
        defer_step(s, 0)
        accept_step(s, 1)
        accept_step(s, 2)
        assert s.gap == 1
        assert np.array_equal(s.final_order(), [1, 2, 0])

    def test_defer_all(self):
        s = AugmentedCroutStore(4)
        for k in range(4):
            defer_step(s, k)
        assert s.m == 0 and s.gap == 4
        assert np.array_equal(s.final_order(), [0, 1, 2, 3])

    def test_interleaved_matches_simulation(self):
        s = AugmentedCroutStore(6)
        defers = {4, 1}
        for k in range(6):
            (defer_step if k in defers else accept_step)(s, k)
        # reference: permute a dense identity step by step, moving deferred rows to the tail
        order = list(range(6))
        for k in (1, 4):
            order.remove(k)
            order.append(k)
        assert s.final_order().tolist() == order
        assert s.status[1] == DEFERRED and s.status[0] == ACCEPTED

    def test_static_tail(self):
        s = AugmentedCroutStore(5, n_static=2)
        defer_step(s, 0)
        accept_step(s, 1)
        accept_step(s, 2)
        assert np.array_equal(s.final_order(), [1, 2, 3, 4, 0])

    def test_double_processing_rejected(self):
        s = AugmentedCroutStore(2)
        accept_step(s, 0)
        with pytest.raises(ValueError):
            defer_step(s, 0)


class TestFactorizeLevel:
    def test_identity(self):
        f = factor(sp.identity(6, format="csr"), DropParams())
        assert f.m == 6 and f.n_dynamic == 0
        assert f.lb.nnz == f.ub.nnz == f.le.nnz == f.uf.nnz == 0
        assert np.array_equal(f.db, np.ones(6))

    @pytest.mark.parametrize("symmetric", [False, True])
    def test_two_by_two(self, symmetric):
        f = factor(sp.csr_matrix([[4.0, 2.0], [2.0, 3.0]]), symmetric=symmetric)
        assert np.allclose(f.lb.toarray() + np.eye(2), [[1, 0], [0.5, 1]])
        assert np.allclose(f.db, [4, 2])
        assert np.allclose(f.ub.toarray() + np.eye(2), [[1, 0.5], [0, 1]])

    def test_collapse(self):
        with pytest.raises(LevelCollapse):
            factor(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]), DropParams.uniform(10, 1e-4, 3))

    def test_exact_reconstruction(self, rng):
        A = random_sparse(30, 0.15, rng).toarray()
        A += np.diag(np.abs(A).sum(axis=1) + 1)
        f = factor(sp.csr_matrix(A), DropParams.exact(1e15))
        assert f.m == 30
        err = np.linalg.norm(reconstruct(f) - A) / np.linalg.norm(A)
        assert err <= 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 100), st.integers(0, 2**31))
    def test_exact_blocks_with_deferrals(self, n, seed):
        """With no dropping the stored blocks reproduce B, E, F exactly even when steps defer."""
        rng = np.random.default_rng(seed)
        A = random_sparse(n, min(1.0, 5 / n), rng)
        report, B = preprocess_level(A, 3.0, False, "amd")
        f = factor(B, DropParams(math.inf, 0.0, 3.0, 3.0, 3.0), n_static=report.n_static)
        Bd = B.toarray()[np.ix_(f.order, f.order)]
        R = reconstruct(f)
        m = f.m
        scale = np.linalg.norm(Bd)
        assert np.linalg.norm((R - Bd)[:m, :]) <= 1e-12 * scale
        assert np.linalg.norm((R - Bd)[:, :m]) <= 1e-12 * scale
        assert not level_violations(f)

    def test_symmetric_mode_mirrors(self, rng):
        A = laplacian_2d(6)
        f = factor(A, DropParams(), symmetric=True)
        assert (f.ub != f.lb.T).nnz == 0
        assert (f.le != f.uf.T).nnz == 0

    @pytest.mark.parametrize("symmetric", [False, True])
    def test_invariants_with_dropping(self, rng, symmetric):
        A = laplacian_2d(7)
        A = canonical(A + sp.diags(rng.uniform(-0.5, 0.5, A.shape[0])))
        if not symmetric:
            A = canonical(A + 0.3 * sp.random(49, 49, density=0.05, random_state=rng))
        report, B = preprocess_level(A, 3.0, symmetric, "rcm" if symmetric else "amd")
        r, c = refs(A)
        ps = report.perm_scale
        f = factorize_level(B, DropParams(alpha=1.0, tau=1e-2), r[ps.row_perm.forward],
                            c[ps.col_perm.forward], symmetric=symmetric, n_static=report.n_static)
        assert not level_violations(f)

    def test_budget_binds(self, rng):
        # dense-ish input with a tight budget: every vector is cut to its limit
        A = random_sparse(40, 0.5, rng, diag_shift=20.0)
        r = np.ones(40, dtype=np.int64)
        f = factorize_level(A, DropParams(alpha=2.0, tau=0.0, kappa_d=1e15, kappa_l=1e15, kappa_u=1e15),
                            r, r, nnz_mean=(1.0, 1.0))
        assert nnz_per_col(f.lb).max() <= 2 and nnz_per_row(f.ub).max() <= 2
        assert not level_violations(f)

    def test_pivot_and_estimate_bounds(self, rng):
        for _ in range(5):
            A = random_sparse(45, 0.1, rng)
            report, B = preprocess_level(A, 3.0, False, "amd")
            f = factor(B, DropParams(), n_static=report.n_static)
            assert np.abs(f.db).min() >= 1 / 3
            assert f.kappa_l[-1] <= 3 and f.kappa_u[-1] <= 3
            assert not level_violations(f)

    def test_flop_bound(self, rng):
        for A in (laplacian_2d(12), random_sparse(150, 0.03, rng)):
            report, B = preprocess_level(A, 3.0, False, "amd")
            f = factor(B, DropParams(), n_static=report.n_static)
            nnz_lu = f.lb.nnz + f.ub.nnz + f.le.nnz + f.uf.nnz
            width = nnz_per_row(B).max() + nnz_per_col(B).max()
            assert f.flops <= 2 * f.params.alpha * nnz_lu * width

    def test_n_equals_one(self):
        f = factor(sp.csr_matrix([[2.0]]), DropParams())
        assert f.m == 1 and f.db[0] == 2.0
        with pytest.raises(LevelCollapse):
            factor(sp.csr_matrix([[0.1]]), DropParams())

    def test_all_static(self):
        with pytest.raises(LevelCollapse):
            factor(sp.identity(3, format="csr"), DropParams(), n_static=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 30), st.integers(0, 2**31))
def test_split_compressed_matches_dense(m, extra, seed):
    rng = np.random.default_rng(seed)
    n = m + extra
    M = sp.random(m, n, density=0.3, random_state=rng, format="csr")
    newpos = rng.permutation(n).astype(np.int64)
    bp, bi, bv, fp, fi, fv = _split_compressed(
        M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, newpos, m, n)
    want = np.zeros((m, n))
    want[:, newpos] = M.toarray()
    B = sp.csr_matrix((bv, bi, bp), shape=(m, m))
    F = sp.csr_matrix((fv, fi, fp), shape=(m, n - m))
    assert B.has_sorted_indices and F.has_sorted_indices
    assert all(np.all(np.diff(bi[bp[k]:bp[k + 1]]) > 0) for k in range(m))
    assert all(np.all(np.diff(fi[fp[k]:fp[k + 1]]) > 0) for k in range(m))
    assert np.array_equal(B.toarray(), want[:, :m])
    assert np.array_equal(F.toarray(), want[:, m:])
