"""Command line benchmark: load a Matrix Market system, build, solve, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.io

from .krylov import DivergenceError, fgmres
from .multilevel import BuildError, SolverOptions, build_preconditioner
from .sparse import UnsupportedFormatError, read_matrix_market

OPTIMIZED_SADDLE = dict(tau=1e-2, alpha=3.0, kappa=5.0)


@dataclass
class RunReport:
    matrix_name: str
    n: int
    nnz_input: int
    factor_seconds: float
    total_seconds: float
    gmres_iterations: int
    nnz_ratio: float
    levels: int
    converged: bool
    relative_residual: float
    parameters: dict = field(default_factory=dict)
    level_sizes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hilucsi", description="Multilevel ILU preconditioned FGMRES benchmark")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve A x = b for a Matrix Market matrix")
    s.add_argument("matrix", help="Matrix Market coordinate file")
    s.add_argument("--tau", type=float, default=None, help="drop tolerance (default 1e-4)")
    s.add_argument("--alpha", type=float, default=None, help="nnz factor (default 10)")
    s.add_argument("--kappa", type=float, default=None, help="condition bound (default 3)")
    s.add_argument("--symm-levels", default="auto", choices=["0", "1", "2", "auto"],
                   help="levels using symmetric preprocessing")
    s.add_argument("--restart", type=int, default=30)
    s.add_argument("--rtol", type=float, default=1e-6)
    s.add_argument("--maxit", type=int, default=500)
    s.add_argument("--rhs", default=None, help="right-hand side file (Matrix Market array or text)")
    s.add_argument("--csv", default=None, help="append the report as a CSV row")
    s.add_argument("--optimized-saddle", action="store_true",
                   help="tau=1e-2, alpha=3, kappa=5 (explicit flags still win)")
    return p


def _options(args) -> SolverOptions:
    base = dict(tau=1e-4, alpha=10.0, kappa=3.0)
    if args.optimized_saddle:
        base.update(OPTIMIZED_SADDLE)
    for k in base:
        if getattr(args, k) is not None:
            base[k] = getattr(args, k)
    symm = None if args.symm_levels == "auto" else int(args.symm_levels)
    return SolverOptions(tau0=base["tau"], alpha0=base["alpha"], kappa0=base["kappa"],
                         symm_pre_levels=symm, restart=args.restart, rtol=args.rtol,
                         maxit=args.maxit)


def _read_rhs(path, n: int) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("%%MatrixMarket"):
        b = scipy.io.mmread(str(path))
        b = np.asarray(b.toarray() if hasattr(b, "toarray") else b, dtype=np.float64).ravel()
    else:
        b = np.loadtxt(path, dtype=np.float64).ravel()
    if b.size != n:
        raise ValueError(f"right-hand side has length {b.size}, matrix has {n} rows")
    return b


def _append_csv(path, report: RunReport) -> None:
    row = asdict(report)
    row["parameters"] = json.dumps(row["parameters"], sort_keys=True)
    row["level_sizes"] = json.dumps(row["level_sizes"])
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            w.writeheader()
        w.writerow(row)


def run(args) -> tuple[RunReport | None, int]:
    """Execute one ``solve`` command; returns the report and the exit code."""
    try:
        opts = _options(args)
        A, symmetry = read_matrix_market(args.matrix)
        if A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise ValueError(f"need a nonempty square matrix, got shape {A.shape}")
        b = _read_rhs(args.rhs, A.shape[0]) if args.rhs else A @ np.ones(A.shape[0])
    except (OSError, UnsupportedFormatError, ValueError) as exc:
        print(f"hilucsi: input error: {exc}", file=sys.stderr)
        return None, 2

    if opts.symm_pre_levels is None:
        hint = True if symmetry == "symmetric" else None
    else:
        hint = opts.symm_pre_levels > 0
    try:
        t0 = time.perf_counter()
        M = build_preconditioner(A, opts, symmetric_hint=hint)
        t1 = time.perf_counter()
        x, stats = fgmres(A, b, M, restart=opts.restart, rtol=opts.rtol, maxit=opts.maxit)
        t2 = time.perf_counter()
    except (BuildError, DivergenceError) as exc:
        print(f"hilucsi: solver failure: {exc}", file=sys.stderr)
        return None, 1

    report = RunReport(
        matrix_name=Path(args.matrix).stem, n=int(A.shape[0]), nnz_input=int(A.nnz),
        factor_seconds=t1 - t0, total_seconds=t2 - t0,
        gmres_iterations=stats.iterations, nnz_ratio=M.nnz_ratio(A.nnz), levels=M.n_levels,
        converged=stats.converged, relative_residual=stats.relative_residual,
        parameters=dict(tau=opts.tau0, alpha=opts.alpha0, kappa=opts.kappa0,
                        symm_levels=args.symm_levels, symmetric=M.symmetric_hint,
                        restart=opts.restart, rtol=opts.rtol, maxit=opts.maxit),
        level_sizes=[s["size"] for s in M.build_stats])
    return report, 0 if stats.converged else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    report, code = run(args)
    if report is not None:
        print(report.to_json())
        if args.csv:
            _append_csv(args.csv, report)
    return code


if __name__ == "__main__":
    sys.exit(main())
