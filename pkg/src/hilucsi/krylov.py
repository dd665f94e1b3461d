"""Restarted flexible GMRES with right preconditioning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class DivergenceError(ArithmeticError):
    """Non-finite values appeared in the Krylov iteration."""


@dataclass
class SolveStats:
    iterations: int
    relative_residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    matvecs: int = 0
    restarts: int = 0
    cycle_starts: list = field(default_factory=list)  # history index where each cycle begins


def _as_operator(M):
    if M is None:
        return lambda v: v.copy()
    if hasattr(M, "apply"):
        return M.apply
    if hasattr(M, "matvec"):
        return M.matvec
    if callable(M):
        return M
    raise TypeError("preconditioner must be None, callable, or provide apply/matvec")


def fgmres(A, b, M=None, restart: int = 30, rtol: float = 1e-6, maxit: int = 500):
    """Solve ``A x = b`` with FGMRES(restart), right preconditioner ``M``.

    Basis vectors are orthogonalized by modified Gram-Schmidt and every
    preconditioned direction ``z_j`` is kept, so ``M`` may vary between
    iterations.  The products ``A z_j`` are kept as well; at the end of a
    cycle the residual ``r - sum_j y_j A z_j`` is formed from them without
    another product with ``A``.  Convergence is declared on that residual,
    never on the least-squares estimate alone.  ``iterations`` counts inner
    steps over all cycles.
    """
    if restart < 1:
        raise ValueError("restart must be >= 1")
    if not rtol > 0:
        raise ValueError("rtol must be positive")
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match right-hand side length {n}")
    precond = _as_operator(M)
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if not math.isfinite(bnorm):
        raise DivergenceError("right-hand side is not finite")
    if bnorm == 0.0:
        return x, SolveStats(0, 0.0, True, [0.0], 0, 0, [0])

    r = b.copy()
    beta = bnorm
    its = 0
    matvecs = 0
    cycles = 0
    history = []
    starts = []
    m = restart
    while True:
        rel = beta / bnorm
        if rel <= rtol:
            return x, SolveStats(its, rel, True, history or [rel], matvecs, max(cycles - 1, 0), starts)
        if its >= maxit:
            return x, SolveStats(its, rel, False, history, matvecs, max(cycles - 1, 0), starts)
        cycles += 1
        starts.append(len(history))
        history.append(rel)

        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        AZ = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        k = 0
        for j in range(m):
            if its >= maxit:
                break
            z = np.asarray(precond(V[j]), dtype=np.float64)
            w = A @ z
            matvecs += 1
            if not (np.isfinite(z).all() and np.isfinite(w).all()):
                raise DivergenceError(f"non-finite values at iteration {its + 1}")
            Z[j] = z
            AZ[j] = w
            for i in range(j + 1):
                h = float(w @ V[i])
                H[i, j] = h
                w -= h * V[i]
            hn = float(np.linalg.norm(w))
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            den = math.hypot(H[j, j], H[j + 1, j])
            if den == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            its += 1
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if hn == 0.0 or abs(g[j + 1]) <= rtol * bnorm:
                break
            V[j + 1] = w / hn
        if k == 0:
            continue
        R = H[:k, :k]
        if np.all(np.diag(R) != 0.0):
            y = sla.solve_triangular(R, g[:k], check_finite=False)
        else:
            y = np.linalg.lstsq(R, g[:k], rcond=None)[0]
        x += Z[:k].T @ y
        r = r - AZ[:k].T @ y
        beta = float(np.linalg.norm(r))
        if not (math.isfinite(beta) and np.isfinite(x).all()):
            raise DivergenceError("non-finite iterate")
