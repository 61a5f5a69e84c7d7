"""Iteratively refined basis pursuit.

Each step refines the current column set, assembles the refined rows
``[A21 A22]`` against all available columns, solves the basis pursuit
problem on them and keeps the new columns that carry nonzero coefficients.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import Assembler, BlockSystem, build_block_system
from .dictionary import (Family, IndexSet, RefinementTree, eval_basis, ids_through_level,
                         level_ids)
from .lp import LpStatus, basis_pursuit
from .problems import ProblemSpec, exact_on_points, relative_l2_error

log = logging.getLogger(__name__)

__all__ = [
    "Fallback",
    "IrbpConfig",
    "IrbpState",
    "StepRecord",
    "RunReport",
    "IrbpError",
    "initial_state",
    "irbp_step",
    "irbp_run",
    "reconstruct",
    "support_mask",
    "fem_solution",
    "coefficient_distance",
]


class IrbpError(RuntimeError):
    """Raised when a step cannot be completed; ``step`` names the failing step."""

    def __init__(self, message, step=None, history=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
        self.history = history or []


class Fallback(str, enum.Enum):
    NONE = "none"
    FULL_REFINE = "full_refine"


@dataclass
class IrbpConfig:
    problem: ProblemSpec
    start_level: int = 4
    max_steps: int = 5
    eps_term: float = 1e-6
    support_tol: float = 1e-8
    fallback: Fallback = Fallback.FULL_REFINE
    galerkin_resolve: bool = False
    lp_solver: str = "simplex"
    max_level: Optional[int] = None
    check_transfer_norm: bool = True

    def __post_init__(self):
        self.fallback = Fallback(self.fallback)
        if self.start_level < 1:
            raise ValueError("start_level must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.eps_term > 0:
            raise ValueError("eps_term must be positive")
        if not self.support_tol > 0:
            raise ValueError("support_tol must be positive")

    def snapshot(self) -> dict:
        return {
            "problem": self.problem.name,
            "start_level": self.start_level,
            "max_steps": self.max_steps,
            "eps_term": self.eps_term,
            "support_tol": self.support_tol,
            "fallback": self.fallback.value,
            "galerkin_resolve": self.galerkin_resolve,
            "lp_solver": self.lp_solver,
            "max_level": self.max_level,
        }


@dataclass
class StepRecord:
    step: int
    level: int
    l1_rows: int
    l1_cols: int
    z_l0: int
    fem_rows: int
    fem_cols: int
    x_l0: int
    ratio: float
    rel_error: float
    wall_ms: float
    objective: float = math.nan
    lp_iterations: int = 0
    new_columns: int = 0
    coarse_columns: int = 0
    fallback_used: bool = False
    transfer_norm: float = math.nan
    step_change: float = math.nan


@dataclass
class IrbpState:
    """Index sets and current coefficients after ``step`` refinement steps."""

    step: int
    C_prev: IndexSet
    R_prev: IndexSet
    C_cur: IndexSet
    R_cur: IndexSet
    z_ids: tuple = ()
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list = field(default_factory=list)
    galerkin: Optional[tuple] = None

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.z_ids, self.z))


def support_mask(z: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """``|z_i| > tol * max(1, ||z||_inf)``."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return np.zeros(0, dtype=bool)
    return np.abs(z) > tol * max(1.0, float(np.max(np.abs(z))))


def coefficient_distance(a: dict, b: dict) -> float:
    """l2 distance of two coefficient maps after zero extension to the union of their keys."""
    keys = set(a) | set(b)
    return math.sqrt(sum((a.get(k, 0.0) - b.get(k, 0.0)) ** 2 for k in keys))


def initial_state(cfg: IrbpConfig) -> IrbpState:
    """All functions on levels below ``start_level`` (the root alone for level 1)."""
    family = cfg.problem.family
    if cfg.start_level <= 2:
        C0 = IndexSet(level_ids(family, 1), "C")
    else:
        C0 = ids_through_level(family, cfg.start_level - 1, "C")
    return IrbpState(step=0, C_prev=IndexSet((), "C"), R_prev=IndexSet((), "R"),
                     C_cur=C0, R_cur=C0.with_role("R"))


def reconstruct(state_or_coeffs, points, family: Family | None = None) -> np.ndarray:
    """Evaluate ``sum_j z_j phi_j`` at ``points``."""
    coeffs = state_or_coeffs.coefficients if isinstance(state_or_coeffs, IrbpState) else dict(state_or_coeffs)
    pts = np.asarray(points, dtype=float)
    if family is None:
        family = next(iter(coeffs)).family if coeffs else (Family.HAT2D if pts.shape[-1:] == (2,) and pts.ndim > 1 else Family.HAT1D)
    shape = pts.shape if family is Family.HAT1D else pts.shape[:-1]
    out = np.zeros(shape)
    for bid, c in coeffs.items():
        if c != 0.0:
            out += c * eval_basis(bid, pts)
    return out


def _fem_level_ids(family: Family, level: int) -> IndexSet:
    return IndexSet(level_ids(family, level), "S")


def fem_solution(assembler: Assembler, level: int):
    """Single-level Galerkin solution ``(ids, x)`` on ``level``."""
    ids = _fem_level_ids(assembler.family, level)
    K = assembler.stiffness(ids, ids).tocsr().tocsc()
    b = assembler.load(ids).values
    x = spla.spsolve(K, b)
    return ids, np.atleast_1d(x)


def _transfer_norm(system: BlockSystem, z: np.ndarray, tol: float) -> float:
    """``||A22^{-1} A21||_1`` when ``z`` uses old columns and ``A22`` is invertible, else NaN."""
    n1 = len(system.C_prev)
    if n1 == 0 or not support_mask(z, tol)[:n1].any():
        return math.nan
    A22 = system.A22.toarray()
    if A22.shape[0] != A22.shape[1] or A22.size == 0:
        return math.nan
    if np.linalg.cond(A22) > 1e12:
        return math.nan
    M = np.linalg.solve(A22, system.A21.toarray())
    return float(np.max(np.sum(np.abs(M), axis=0)))


class _Context:
    def __init__(self, cfg: IrbpConfig):
        self.cfg = cfg
        self.tree = RefinementTree(cfg.problem.family, cfg.max_level)
        self.assembler = Assembler(cfg.problem)
        self.fem_cache = {}

    def fem_nnz(self, level):
        if level not in self.fem_cache:
            ids, x = fem_solution(self.assembler, level)
            self.fem_cache[level] = (len(ids), int(support_mask(x, self.cfg.support_tol).sum()))
        return self.fem_cache[level]

    def error(self, coeffs):
        problem = self.cfg.problem
        if problem.exact is None:
            return math.nan
        return relative_l2_error(lambda p: reconstruct(coeffs, p, problem.family), exact_on_points(problem),
                                 problem.family)


def irbp_step(state: IrbpState, cfg: IrbpConfig, ctx: _Context | None = None,
              force_full: bool = False) -> IrbpState:
    """One refine / assemble / basis-pursuit / select step."""
    ctx = ctx or _Context(cfg)
    k = state.step + 1
    t0 = time.perf_counter()
    try:
        system = build_block_system(state.C_cur, ctx.tree, cfg.problem, R_prev=state.R_cur,
                                    assembler=ctx.assembler)
    except Exception as exc:  # capacity or integration failures
        raise IrbpError(str(exc), step=k, history=state.history) from exc
    if len(system.Rhat) == 0:
        raise IrbpError("refinement produced no new rows", step=k, history=state.history)

    M = system.lower()
    res = basis_pursuit(M, system.b2.values, solver=cfg.lp_solver)
    if res.status is not LpStatus.OPTIMAL:
        raise IrbpError(f"basis pursuit returned {res.status.value} on a {M.shape[0]}x{M.shape[1]} matrix",
                        step=k, history=state.history)
    z = res.solution
    cols = system.columns
    mask = support_mask(z, cfg.support_tol)
    selected = IndexSet((cols[i] for i in np.flatnonzero(mask)), "C")
    if force_full:
        C_new = state.C_cur.union(system.Chat, role="C")
    else:
        C_new = state.C_cur.union(selected.intersection(system.Chat), role="C")

    coeffs = dict(zip(cols, z))
    level = max(b.level for b in system.Rhat)
    fem_size, x_l0 = ctx.fem_nnz(level)
    wall = (time.perf_counter() - t0) * 1e3
    z_l0 = int(mask.sum())
    record = StepRecord(
        step=k, level=level, l1_rows=M.shape[0], l1_cols=M.shape[1], z_l0=z_l0,
        fem_rows=fem_size, fem_cols=fem_size, x_l0=x_l0,
        ratio=z_l0 / x_l0 if x_l0 else math.nan,
        rel_error=ctx.error(coeffs), wall_ms=wall, objective=res.objective,
        lp_iterations=res.iterations, new_columns=len(C_new) - len(state.C_cur),
        coarse_columns=len(system.C_prev), fallback_used=force_full,
        transfer_norm=_transfer_norm(system, z, cfg.support_tol) if cfg.check_transfer_norm else math.nan,
        step_change=coefficient_distance(coeffs, state.coefficients),
    )
    galerkin = None
    if cfg.galerkin_resolve:
        A = ctx.assembler.stiffness(C_new, C_new).toarray()
        b = ctx.assembler.load(C_new).values
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        galerkin = (C_new.ids, x)
    return IrbpState(step=k, C_prev=state.C_cur, R_prev=state.R_cur, C_cur=C_new,
                     R_cur=C_new.with_role("R"), z_ids=tuple(cols), z=z,
                     history=state.history + [record], galerkin=galerkin)


@dataclass
class RunReport:
    config: dict
    rows: list
    totals: dict = field(default_factory=dict)

    CSV_COLUMNS = ("step", "l1_matrix", "z_l0", "fem_matrix", "x_l0", "ratio", "rel_error", "wall_ms")

    @classmethod
    def from_history(cls, cfg: IrbpConfig, history, terminated: str) -> "RunReport":
        rows = []
        for r in history:
            rows.append({
                "step": r.step,
                "l1_matrix": f"{r.l1_rows}x{r.l1_cols}",
                "z_l0": r.z_l0,
                "fem_matrix": f"{r.fem_rows}x{r.fem_cols}",
                "x_l0": r.x_l0,
                "ratio": r.z_l0 / r.x_l0 if r.x_l0 else math.nan,
                "rel_error": r.rel_error,
                "wall_ms": r.wall_ms,
            })
        totals = {"steps": len(rows), "terminated": terminated,
                  "wall_ms": float(sum(r.wall_ms for r in history))}
        return cls(cfg.snapshot(), rows, totals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    @staticmethod
    def rows_from_csv(text: str) -> list:
        out = []
        for row in csv.DictReader(io.StringIO(text)):
            out.append({
                "step": int(row["step"]), "l1_matrix": row["l1_matrix"], "z_l0": int(row["z_l0"]),
                "fem_matrix": row["fem_matrix"], "x_l0": int(row["x_l0"]), "ratio": float(row["ratio"]),
                "rel_error": float(row["rel_error"]), "wall_ms": float(row["wall_ms"]),
            })
        return out

    def to_json(self, history=None) -> str:
        doc = {"config": self.config, "rows": self.rows, "totals": self.totals}
        if history is not None:
            doc["steps"] = [asdict(h) for h in history]
        return json.dumps(doc, indent=2, default=_json_default, allow_nan=True)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(type(o))


def irbp_run(cfg: IrbpConfig, state: IrbpState | None = None, on_step=None):
    """Iterate :func:`irbp_step` until the coefficient change drops below ``eps_term``.

    Returns ``(state, report)``. When the error against the exact solution
    fails to decrease, the step's selection is replaced by the full
    refinement (``Fallback.FULL_REFINE``) or the run aborts
    (``Fallback.NONE``). ``on_step`` is called with every accepted state.
    """
    ctx = _Context(cfg)
    state = state or initial_state(cfg)
    terminated = "max_steps"
    for _ in range(cfg.max_steps):
        new = irbp_step(state, cfg, ctx)
        rec = new.history[-1]
        prev_err = state.history[-1].rel_error if state.history else math.nan
        if not math.isnan(prev_err) and not math.isnan(rec.rel_error) and rec.rel_error >= prev_err:
            if cfg.fallback is Fallback.NONE:
                raise IrbpError(f"error did not decrease ({prev_err:.4g} -> {rec.rel_error:.4g})",
                                step=rec.step, history=new.history)
            log.info("step %d: error %.4g >= %.4g, falling back to full refinement", rec.step,
                     rec.rel_error, prev_err)
            new = irbp_step(state, cfg, ctx, force_full=True)
            rec = new.history[-1]
        state = new
        if on_step is not None:
            on_step(state)
        if rec.step_change <= cfg.eps_term:
            terminated = "converged"
            break
    return state, RunReport.from_history(cfg, state.history, terminated)
