"""Test problems: finite-difference Laplacians, a Taylor-Hood Stokes system, random matrices."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .sparse import canonical


def laplacian_2d(k: int) -> sp.csr_matrix:
    """5-point Laplacian on a ``k x k`` interior grid with Dirichlet boundary (n = k^2)."""
    T = sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1])
    I = sp.identity(k)
    return canonical(sp.kron(I, T) + sp.kron(T, I))


def _p2_basis_grads(lam_grad):
    """Gradients of the six quadratic shape functions in barycentric form.

    Vertices 0..2, then edge midpoints (1,2), (0,2), (0,1).
    """
    def grads(l):
        g = lam_grad
        return np.array([
            (4 * l[0] - 1) * g[0],
            (4 * l[1] - 1) * g[1],
            (4 * l[2] - 1) * g[2],
            4 * (l[1] * g[2] + l[2] * g[1]),
            4 * (l[0] * g[2] + l[2] * g[0]),
            4 * (l[0] * g[1] + l[1] * g[0]),
        ])
    return grads


def _p2_values(l):
    return np.array([
        l[0] * (2 * l[0] - 1), l[1] * (2 * l[1] - 1), l[2] * (2 * l[2] - 1),
        4 * l[1] * l[2], 4 * l[0] * l[2], 4 * l[0] * l[1],
    ])


# degree-2 exact rule on the reference triangle (edge midpoints), barycentric
_QUAD = [np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.5, 0.5]), np.array([0.5, 0.0, 0.5])]


def stokes_taylor_hood(N: int = 19) -> sp.csr_matrix:
    """P2-P1 Stokes matrix ``[[K, B^T], [B, 0]]`` on the unit square.

    The square is split into ``N x N`` cells, each cut into two triangles.
    Velocity (both components) uses quadratic elements, pressure linear ones.
    Velocity is zero on the whole boundary and one pressure value is pinned
    to remove the constant null space, so the system is nonsingular.  The
    pressure block is identically zero.
    """
    h = 1.0 / N
    nv = N + 1
    vid = lambda i, j: j * nv + i
    coords = np.array([(i * h, j * h) for j in range(nv) for i in range(nv)])
    tris = []
    for j in range(N):
        for i in range(N):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    edges = {}
    tri_edges = []
    for t in tris:
        te = []
        for u, w in ((t[1], t[2]), (t[0], t[2]), (t[0], t[1])):
            key = (min(u, w), max(u, w))
            if key not in edges:
                edges[key] = len(edges)
            te.append(edges[key])
        tri_edges.append(te)
    n_vert = coords.shape[0]
    n_p2 = n_vert + len(edges)

    # boundary P2 nodes
    on_bnd = lambda p: p[0] < 1e-12 or p[0] > 1 - 1e-12 or p[1] < 1e-12 or p[1] > 1 - 1e-12
    bnd = np.zeros(n_p2, dtype=bool)
    for v in range(n_vert):
        bnd[v] = on_bnd(coords[v])
    for (u, w), e in edges.items():
        bnd[n_vert + e] = on_bnd(0.5 * (coords[u] + coords[w]))

    rows_k, cols_k, vals_k = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    for t, te in zip(tris, tri_edges):
        P = coords[list(t)]
        J = np.array([P[1] - P[0], P[2] - P[0]]).T
        area = 0.5 * abs(np.linalg.det(J))
        Jinv = np.linalg.inv(J)
        # barycentric gradients
        g1, g2 = Jinv[0], Jinv[1]
        lam_grad = np.array([-g1 - g2, g1, g2])
        grads = _p2_basis_grads(lam_grad)
        dofs = list(t) + [n_vert + e for e in te]
        Ke = np.zeros((6, 6))
        Be = np.zeros((3, 6, 2))  # pressure basis x velocity basis x component
        for l in _QUAD:
            G = grads(l)
            Ke += (area / 3) * G @ G.T
            for a in range(3):
                Be[a] -= (area / 3) * l[a] * G
        for a in range(6):
            for c in range(6):
                rows_k.append(dofs[a])
                cols_k.append(dofs[c])
                vals_k.append(Ke[a, c])
        for a in range(3):
            for c in range(6):
                for comp in range(2):
                    rows_b.append(t[a])
                    cols_b.append(comp * n_p2 + dofs[c])
                    vals_b.append(Be[a, c, comp])

    K1 = sp.csr_matrix((vals_k, (rows_k, cols_k)), shape=(n_p2, n_p2))
    K = sp.block_diag([K1, K1], format="csr")
    Bm = sp.csr_matrix((vals_b, (rows_b, cols_b)), shape=(n_vert, 2 * n_p2))
    free_u = np.flatnonzero(~np.concatenate([bnd, bnd]))
    free_p = np.arange(1, n_vert)  # pin pressure at vertex 0
    K = K[free_u][:, free_u]
    Bm = Bm[free_p][:, free_u]
    A = sp.bmat([[K, Bm.T], [Bm, None]], format="csr")
    A.data[np.abs(A.data) < 1e-14 * np.abs(A.data).max()] = 0.0
    return canonical(A)


def random_sparse(n: int, density: float, rng, diag_shift: float = 0.0) -> sp.csr_matrix:
    """Random sparse matrix with a nonzero diagonal (structurally nonsingular)."""
    A = sp.random(n, n, density=density, random_state=rng, data_rvs=lambda k: rng.standard_normal(k))
    d = rng.standard_normal(n)
    d += np.sign(d) * (0.1 + diag_shift)
    return canonical(A + sp.diags(d))


def random_saddle_point(n_u: int, n_p: int, rng, density: float = 0.3) -> sp.csr_matrix:
    """Nonsingular ``[[K, B^T], [B, 0]]`` with SPD ``K`` and full-rank ``B``."""
    G = rng.standard_normal((n_u, n_u)) * (rng.random((n_u, n_u)) < density)
    K = G @ G.T + n_u * np.eye(n_u) * 0.1 + np.eye(n_u)
    while True:
        B = rng.standard_normal((n_p, n_u)) * (rng.random((n_p, n_u)) < max(density, 2.0 / n_u))
        if np.linalg.matrix_rank(B) == n_p:
            break
    Z = np.zeros((n_p, n_p))
    return canonical(sp.csr_matrix(np.block([[K, B.T], [B, Z]])))
