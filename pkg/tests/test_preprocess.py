import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hilucsi.gallery import laplacian_2d, random_saddle_point
from hilucsi.matching import max_product_matching
from hilucsi.ordering import amd_order, bandwidth, rcm_order, symbolic_fill
from hilucsi.preprocess import (
    StructuralSingularityError, equilibrate, is_nearly_symmetric, preprocess_level, static_defer,
    symmetrize_equilibration,
)
from hilucsi.sparse import Permutation, PermScale, apply_perm_scale, canonical, symmetrized_pattern


def brute_force_max_product(D):
    n = D.shape[0]
    best = 0.0
    for p in itertools.permutations(range(n)):
        best = max(best, np.prod(np.abs(D[list(p), range(n)])))
    return best


def random_nonsingular_pattern(n, density, rng):
    """Random sparse matrix guaranteed a perfect matching (hidden permuted diagonal)."""
    A = sp.random(n, n, density=density, random_state=rng, data_rvs=lambda k: rng.standard_normal(k))
    P = sp.csr_matrix((rng.uniform(0.1, 2, n) * rng.choice([-1, 1], n),
                       (rng.permutation(n), np.arange(n))), shape=(n, n))
    return canonical(A + P)


def check_equilibrated(A, ps, tol=1e-12):
    B = apply_perm_scale(A, ps)
    mag = np.abs(B.toarray())
    assert np.allclose(np.abs(B.diagonal()), 1.0, atol=tol, rtol=0)
    assert mag.max() <= 1 + tol
    return B


class TestEquilibrate:
    def test_diagonal(self):
        ps = equilibrate(sp.diags([4.0, 0.25]).tocsr())
        assert np.array_equal(ps.row_perm.forward, [0, 1])
        assert np.allclose(ps.row_scale * ps.col_scale, [0.25, 4.0])
        B = apply_perm_scale(sp.diags([4.0, 0.25]).tocsr(), symmetrize_equilibration(ps))
        assert np.allclose(B.toarray(), np.eye(2))
        assert np.allclose(symmetrize_equilibration(ps).row_scale, [0.5, 2.0])

    def test_antidiagonal_swaps_rows(self):
        A = sp.csr_matrix([[0.0, 2.0], [3.0, 0.0]])
        ps = equilibrate(A)
        assert np.array_equal(ps.row_perm.forward, [1, 0])
        B = check_equilibrated(A, ps)
        assert np.allclose(B.diagonal(), [1.0, 1.0])

    def test_six_by_six_brute_force(self, rng):
        A = random_nonsingular_pattern(6, 0.4, rng)
        match_col, _, _ = max_product_matching(A)
        D = A.toarray()
        got = np.prod(np.abs(D[match_col, np.arange(6)]))
        assert got == pytest.approx(brute_force_max_product(D), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.floats(0.1, 0.8), st.integers(0, 2**31))
    def test_optimal_and_scaled(self, n, d, seed):
        rng = np.random.default_rng(seed)
        A = random_nonsingular_pattern(n, d, rng)
        ps = equilibrate(A)
        ps.row_perm.check()
        check_equilibrated(A, ps)
        match_col = ps.row_perm.forward
        D = A.toarray()
        got = np.prod(np.abs(D[match_col, np.arange(n)]))
        assert got == pytest.approx(brute_force_max_product(D), rel=1e-10)

    def test_row_and_column_maxima_are_one(self, rng):
        A = random_nonsingular_pattern(40, 0.1, rng)
        mag = np.abs(apply_perm_scale(A, equilibrate(A)).toarray())
        assert np.allclose(mag.max(axis=0), 1, atol=1e-12)
        assert np.allclose(mag.max(axis=1), 1, atol=1e-12)

    def test_structurally_singular(self):
        A = sp.csr_matrix([[1.0, 1.0, 0], [1.0, 1.0, 0], [1.0, 1.0, 0]])
        with pytest.raises(StructuralSingularityError) as info:
            equilibrate(A)
        assert info.value.unmatched_rows.size == 1
        assert "unmatched" in str(info.value)


class TestSymmetrize:
    def test_sqrt_of_products(self):
        ps = PermScale(Permutation.identity(2), Permutation.identity(2),
                       np.array([4.0, 1.0]), np.array([1.0, 4.0]))
        out = symmetrize_equilibration(ps)
        assert np.allclose(out.row_scale, [2, 2]) and np.allclose(out.col_scale, [2, 2])
        assert out.is_symmetric

    def test_fixed_point(self):
        s = np.array([0.5, 3.0, 1.0])
        p = Permutation.from_forward([2, 0, 1])
        ps = PermScale(p, p, s, s.copy())
        out = symmetrize_equilibration(ps)
        assert np.array_equal(out.row_perm.forward, ps.row_perm.forward)
        assert np.allclose(out.row_scale, s, rtol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 2**31))
    def test_symmetric_input_stays_symmetric(self, n, seed):
        rng = np.random.default_rng(seed)
        R = random_nonsingular_pattern(n, 0.2, rng)
        A = canonical(R + R.T + sp.diags(rng.uniform(1, 2, n)))
        B = apply_perm_scale(A, symmetrize_equilibration(equilibrate(A))).toarray()
        assert np.allclose(B, B.T, rtol=0, atol=1e-14 * np.abs(B).max())


class TestStaticDefer:
    def test_saddle_point_zero_block(self, rng):
        A = random_saddle_point(8, 3, rng)
        K = A.toarray()[:8, :8]
        s = 1 / np.sqrt(np.diag(K))
        ps = PermScale(Permutation.identity(11), Permutation.identity(11),
                       np.r_[s, np.ones(3)], np.r_[s, np.ones(3)])
        B = apply_perm_scale(A, ps)
        assert np.array_equal(static_defer(B, 3.0), [8, 9, 10])

    def test_identity(self):
        assert static_defer(sp.identity(5, format="csr"), 1.0).size == 0
        assert static_defer(sp.identity(5, format="csr"), 1e8).size == 0

    def test_tiny_diagonal(self):
        assert np.array_equal(static_defer(sp.diags([1.0, 0.1, 1.0]).tocsr(), 5.0), [1])

    def test_zero_always_deferred(self):
        A = sp.csr_matrix([[1.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(static_defer(A, np.inf), [1])


class TestOrderings:
    def test_rcm_tridiagonal(self):
        P = symmetrized_pattern(sp.diags([np.ones(4), np.ones(5), np.ones(4)], [-1, 0, 1]))
        perm = rcm_order(P)
        perm.check()
        assert bandwidth(P, perm) == 1

    def test_rcm_star(self):
        n = 5
        A = sp.lil_matrix((n, n))
        A[0, 1:] = 1
        A[1:, 0] = 1
        P = canonical(A + sp.identity(n))
        perm = rcm_order(P)
        perm.check()
        assert bandwidth(P, perm) <= bandwidth(P)
        # start at leaf 1 (pseudo-peripheral), visit hub 0, then leaves 2, 3, 4; reversed
        assert np.array_equal(perm.forward, [4, 3, 2, 0, 1])

    def test_rcm_arrowhead(self):
        n = 50
        A = sp.lil_matrix((n, n))
        A[0, :] = 1
        A[:, 0] = 1
        A.setdiag(1)
        P = canonical(A)
        assert bandwidth(P) == 49
        assert bandwidth(P, rcm_order(P)) < 49

    def test_rcm_grid_bandwidth(self):
        P = symmetrized_pattern(laplacian_2d(8))
        assert bandwidth(P, rcm_order(P)) <= 8

    def test_rcm_disconnected(self):
        P = symmetrized_pattern(sp.block_diag([laplacian_2d(3), sp.identity(2), laplacian_2d(2)]).tocsr())
        rcm_order(P).check()

    def test_amd_diagonal(self):
        P = sp.identity(6, format="csr")
        perm = amd_order(P)
        perm.check()
        assert symbolic_fill(P, perm) == 0

    def test_amd_tridiagonal_no_fill(self):
        P = symmetrized_pattern(sp.diags([np.ones(4), np.ones(5), np.ones(4)], [-1, 0, 1]))
        assert symbolic_fill(P, amd_order(P)) == 0

    def test_amd_grid_within_twice_min_degree(self):
        P = symmetrized_pattern(laplacian_2d(8))
        fill = symbolic_fill(P, amd_order(P))
        assert fill <= 2 * greedy_min_degree_fill(P)
        assert fill < symbolic_fill(P, np.arange(64))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 60), st.floats(0.0, 0.3), st.integers(0, 2**31))
    def test_valid_permutations(self, n, d, seed):
        A = sp.random(n, n, density=d, random_state=np.random.default_rng(seed))
        P = symmetrized_pattern(A + sp.identity(n))
        rcm_order(P).check()
        amd_order(P).check()
        assert len(amd_order(P)) == n

    def test_amd_dense_block_stress(self, rng):
        # enough fill to force the workspace to be compacted and regrown
        A = sp.random(200, 200, density=0.3, random_state=rng)
        P = symmetrized_pattern(A + sp.identity(200))
        amd_order(P).check()

    def test_amd_merges_indistinguishable_variables(self):
        # a clique plus a path: clique members become indistinguishable and
        # the result must still be a valid, fill-competitive ordering
        A = sp.lil_matrix((30, 30))
        A[:10, :10] = 1
        for i in range(9, 29):
            A[i, i + 1] = A[i + 1, i] = 1
        P = symmetrized_pattern(A.tocsr() + sp.identity(30))
        perm = amd_order(P)
        perm.check()
        assert symbolic_fill(P, perm) <= greedy_min_degree_fill(P)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 50), st.floats(0.05, 0.6), st.integers(0, 2**31))
    def test_amd_fill_close_to_min_degree(self, n, d, seed):
        A = sp.random(n, n, density=d, random_state=np.random.default_rng(seed))
        P = symmetrized_pattern(A + sp.identity(n))
        assert symbolic_fill(P, amd_order(P)) <= 2 * greedy_min_degree_fill(P) + n


def greedy_min_degree_fill(P):
    """Exact minimum-degree elimination on the explicit graph (lowest index on ties)."""
    n = P.shape[0]
    adj = [set(P.indices[P.indptr[i]:P.indptr[i + 1]].tolist()) - {i} for i in range(n)]
    alive = set(range(n))
    fill = 0
    while alive:
        p = min(alive, key=lambda v: (len(adj[v]), v))
        nb = list(adj[p])
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                if nb[b] not in adj[nb[a]]:
                    adj[nb[a]].add(nb[b])
                    adj[nb[b]].add(nb[a])
                    fill += 1
        for v in nb:
            adj[v].discard(p)
        alive.remove(p)
    return fill


class TestPreprocessLevel:
    def test_partition_and_report(self, rng):
        A = random_saddle_point(30, 10, rng)
        report, B = preprocess_level(A, 3.0, symmetric=True, reorder="rcm")
        n = A.shape[0]
        kept = report.leading[report.fill_order.forward]
        assert np.intersect1d(kept, report.statically_deferred).size == 0
        assert np.array_equal(np.sort(np.r_[kept, report.statically_deferred]), np.arange(n))
        assert report.n_static >= 10
        assert report.perm_scale.is_symmetric
        # the returned matrix is the composite transform of the input
        assert np.allclose(B.toarray(), apply_perm_scale(A, report.perm_scale).toarray(), rtol=1e-15)
        # deferred indices sit at the end with tiny diagonals
        d = np.abs(B.diagonal())
        assert np.all(d[n - report.n_static:] < 1 / 3.0)
        assert np.all(d[:n - report.n_static] >= 1 / 3.0)

    def test_unsymmetric_amd(self, rng):
        A = random_nonsingular_pattern(40, 0.1, rng)
        report, B = preprocess_level(A, 3.0, symmetric=False, reorder="amd")
        assert not report.symmetric_mode
        assert np.allclose(np.abs(B.diagonal()), 1.0)

    def test_singular_top_level_raises(self):
        A = sp.csr_matrix([[1.0, 1.0, 0], [1.0, 1.0, 0], [1.0, 1.0, 0]])
        with pytest.raises(StructuralSingularityError):
            preprocess_level(A, 3.0, False, "amd")

    def test_singular_fallback(self):
        A = sp.csr_matrix([[1.0, 1.0, 0], [1.0, 1.0, 0], [1.0, 1.0, 0]])
        report, B = preprocess_level(A, 3.0, False, "amd", allow_singular=True)
        assert report.unmatched.size == 1
        assert np.allclose(report.perm_scale.row_scale, 1)
        assert 2 in report.statically_deferred

    def test_unknown_reorder(self):
        with pytest.raises(ValueError):
            preprocess_level(sp.identity(3, format="csr"), 3.0, False, "nd")


def test_near_symmetry_detection(rng):
    A = laplacian_2d(5)
    assert is_nearly_symmetric(A)
    B = A.tolil()
    B[0, 1] += 1e-6
    assert not is_nearly_symmetric(B.tocsr())
    C = A.tolil()
    C[0, 24] = 1e-20  # below the filtering threshold
    assert is_nearly_symmetric(C.tocsr())
    assert not is_nearly_symmetric(sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]]))
