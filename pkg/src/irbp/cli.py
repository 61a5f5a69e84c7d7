"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import Assembler, build_block_system, read_matrix_market, read_vector, write_matrix_market, \
    write_vector
from .diagnostics import best_k_term_error, mutual_incoherence, recovery_experiment, rip_constant
from .dictionary import Family, RefinementTree, ids_through_level
from .lp import LpStatus, basis_pursuit
from .problems import PROBLEMS, get_problem
from .solver import Fallback, IrbpConfig, IrbpError, irbp_run, support_mask

log = logging.getLogger("irbp")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3
HIGHS_ABOVE_LEVEL = 10


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0 or math.isnan(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _level_range(text):
    try:
        lo, hi = (int(t) for t in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if not 2 <= lo <= hi:
        raise argparse.ArgumentTypeError("levels must satisfy 2 <= A <= B")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irbp", description="Iteratively refined basis pursuit for Poisson problems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the adaptive refinement loop")
    s.add_argument("--problem", default="arctan2", choices=sorted(PROBLEMS))
    s.add_argument("--start-level", type=_positive_int, default=4)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--eps", type=_positive_float, default=1e-6, help="termination tolerance on the coefficient change")
    s.add_argument("--support-tol", type=_positive_float, default=1e-8)
    s.add_argument("--fallback", choices=[f.value for f in Fallback], default=Fallback.FULL_REFINE.value)
    s.add_argument("--solver", choices=["simplex", "highs"], default="simplex")
    s.add_argument("--galerkin", action="store_true", help="also solve the square system on the selected set")
    s.add_argument("--dump-steps", action="store_true", help="write one solution CSV per step")
    s.add_argument("--out-dir", type=Path, default=Path("out"))

    a = sub.add_parser("analyze", help="incoherence / RIP / best k-term diagnostics of a matrix")
    a.add_argument("--matrix", type=Path, required=True, help="MatrixMarket file")
    a.add_argument("--mu", action="store_true")
    a.add_argument("--rip-k", type=_positive_int, action="append", default=[])
    a.add_argument("--sigma", type=int, metavar="K", help="best K-term error of --vector")
    a.add_argument("--vector", type=Path)
    a.add_argument("--p", type=float, default=1.0)
    a.add_argument("--raw", action="store_true", help="skip column normalisation")
    a.add_argument("--budget", type=_positive_int, default=2_000_000)
    a.add_argument("--seed", type=int, default=42)
    a.add_argument("--out", type=Path, help="also write the JSON report here")

    b = sub.add_parser("bench", help="time basis pursuit on the 1D single-level-row matrices")
    b.add_argument("--levels", type=_level_range, default=(7, 12))
    b.add_argument("--problem", default="arctan4", choices=[k for k, v in PROBLEMS.items()
                                                            if v().family is Family.HAT1D])
    b.add_argument("--solver", choices=["auto", "simplex", "highs"], default="auto",
                   help=f"auto uses HiGHS above level {HIGHS_ABOVE_LEVEL}")
    b.add_argument("--out-dir", type=Path, default=Path("out"))

    e = sub.add_parser("export", help="write [A21 A22] and b2 of one level to MatrixMarket / text")
    e.add_argument("--problem", default="arctan4", choices=sorted(PROBLEMS))
    e.add_argument("--level", type=_positive_int, required=True)
    e.add_argument("--out-dir", type=Path, default=Path("out"))

    q = sub.add_parser("bp", help="basis pursuit on a MatrixMarket matrix and a text vector")
    q.add_argument("--matrix", type=Path, required=True)
    q.add_argument("--rhs", type=Path, required=True)
    q.add_argument("--solver", choices=["simplex", "highs"], default="simplex")
    q.add_argument("--out", type=Path, help="solution vector file")

    r = sub.add_parser("recover", help="exact-recovery experiment on Gaussian matrices")
    r.add_argument("--rows", type=_positive_int, default=30)
    r.add_argument("--cols", type=_positive_int, default=60)
    r.add_argument("--k", type=_positive_int, default=3)
    r.add_argument("--trials", type=_positive_int, default=200)
    r.add_argument("--seed", type=int, default=42)
    return p


def _single_level_system(problem, level):
    """Rows: all of ``level``; columns: all levels up to ``level``."""
    family = problem.family
    tree = RefinementTree(family)
    C_prev = ids_through_level(family, level - 1) if level > 1 else None
    if C_prev is None or len(C_prev) == 0:
        raise UsageError("level must be at least 2")
    try:
        return build_block_system(C_prev, tree, problem)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_solve(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    problem = get_problem(args.problem)
    try:
        cfg = IrbpConfig(problem, start_level=args.start_level, max_steps=args.steps, eps_term=args.eps,
                         support_tol=args.support_tol, fallback=args.fallback, lp_solver=args.solver,
                         galerkin_resolve=args.galerkin)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    steps = []

    try:
        state, report = irbp_run(cfg, on_step=steps.append if args.dump_steps else None)
    except IrbpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json(state.history))
    _write_solution(out / "solution.csv", state.z_ids, state.z)
    for st in steps:
        _write_solution(out / f"solution_step{st.step}.csv", st.z_ids, st.z)
    if state.galerkin is not None:
        _write_solution(out / "galerkin.csv", *state.galerkin)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def _write_solution(path, ids, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["basis_id", "coefficient"])
        for bid, v in zip(ids, values):
            w.writerow([str(bid), repr(float(v))])


def cmd_analyze(args) -> int:
    if not args.matrix.exists():
        raise UsageError(f"no such file: {args.matrix}")
    M = read_matrix_market(args.matrix)
    doc = {"matrix": str(args.matrix), "shape": list(M.shape), "normalized": not args.raw, "seed": args.seed}
    try:
        if args.mu or not (args.rip_k or args.sigma is not None):
            rep = mutual_incoherence(M, normalize=not args.raw)
            doc["mutual_incoherence"] = {"mu": rep.mu, "witness": list(rep.witness)}
        for k in args.rip_k:
            est = rip_constant(M, k, budget=args.budget, normalize=not args.raw, seed=args.seed)
            doc.setdefault("rip", []).append({"k": est.k, "delta_k": est.delta_k, "method": est.method,
                                              "witness_support": list(est.witness_support)})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.sigma is not None:
        if args.vector is None:
            raise UsageError("--sigma needs --vector")
        x = read_vector(args.vector)
        if not 0 <= args.sigma <= x.size:
            raise UsageError(f"--sigma must lie in [0, {x.size}]")
        doc["best_k_term"] = {"k": args.sigma, "p": args.p, "error": best_k_term_error(x, args.sigma, args.p)}
    text = json.dumps(doc, indent=2)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


def bench_levels(levels, problem_name="arctan4", solver="auto"):
    """Rows of ``(level, m, n, time_ms, z_l0, solver)``."""
    problem = get_problem(problem_name)
    asm = Assembler(problem)
    rows = []
    for level in range(levels[0], levels[1] + 1):
        system = build_block_system(ids_through_level(problem.family, level - 1), RefinementTree(problem.family),
                                    problem, assembler=asm)
        M, b = system.lower(), system.b2.values
        use = solver if solver != "auto" else ("highs" if level > HIGHS_ABOVE_LEVEL else "simplex")
        t0 = time.perf_counter()
        res = basis_pursuit(M, b, solver=use)
        ms = (time.perf_counter() - t0) * 1e3
        if res.status is not LpStatus.OPTIMAL:
            raise IrbpError(f"basis pursuit returned {res.status.value}", step=level)
        rows.append((level, M.shape[0], M.shape[1], ms, int(support_mask(res.solution).sum()), use))
    return rows


def loglog_slope(ns, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(n)``."""
    if len(ns) < 2:
        return math.nan
    return float(np.polyfit(np.log(ns), np.log(times), 1)[0])


def cmd_bench(args) -> int:
    try:
        rows = bench_levels(args.levels, args.problem, args.solver)
    except IrbpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    args.out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["level,m,n,time_ms,z_l0,solver"] + [f"{l},{m},{n},{t:.3f},{z},{s}" for l, m, n, t, z, s in rows]
    text = "\n".join(lines) + "\n"
    (args.out_dir / "bench.csv").write_text(text)
    sys.stdout.write(text)
    slope = loglog_slope([r[2] for r in rows], [r[3] for r in rows])
    print(f"log-log slope of time vs n: {slope:.3f}")
    return EXIT_OK


def cmd_export(args) -> int:
    problem = get_problem(args.problem)
    system = _single_level_system(problem, args.level)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    mpath = args.out_dir / f"{problem.name}_level{args.level}.mtx"
    vpath = args.out_dir / f"{problem.name}_level{args.level}_b.txt"
    write_matrix_market(mpath, system.lower(), comment=f"[A21 A22] rows level {args.level}")
    write_vector(vpath, system.b2.values)
    print(mpath)
    print(vpath)
    return EXIT_OK


def cmd_bp(args) -> int:
    for path in (args.matrix, args.rhs):
        if not path.exists():
            raise UsageError(f"no such file: {path}")
    A, b = read_matrix_market(args.matrix), read_vector(args.rhs)
    if b.size != A.shape[0]:
        raise UsageError(f"rhs has {b.size} entries, matrix has {A.shape[0]} rows")
    res = basis_pursuit(A, b, solver=args.solver)
    if args.out:
        write_vector(args.out, res.solution)
    print(json.dumps({"status": res.status.value, "objective": res.objective, "iterations": res.iterations,
                      "residual": res.primal_residual, "nonzeros": int(support_mask(res.solution).sum())}))
    return EXIT_OK if res.status is LpStatus.OPTIMAL else EXIT_SOLVER


def cmd_recover(args) -> int:
    if args.k > args.cols or args.rows > args.cols:
        raise UsageError("need k <= cols and rows <= cols")
    rep = recovery_experiment(args.rows, args.cols, args.k, args.trials, seed=args.seed)
    print(json.dumps({"trials": rep.trials, "recovered": rep.recovered, "rate": rep.rate, "seed": args.seed,
                      "failures": rep.failures}, indent=2))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "analyze": cmd_analyze, "bench": cmd_bench, "export": cmd_export,
            "bp": cmd_bp, "recover": cmd_recover}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
