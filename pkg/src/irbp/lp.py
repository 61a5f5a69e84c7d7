"""l1 minimisation through a revised primal simplex method.

``simplex`` solves ``min c^T x  s.t.  A x = b, x >= 0``. The basis is held
as a sparse LU factorisation followed by a product-form eta file and is
refactorised periodically. Pricing is Dantzig's rule; after a run of degenerate pivots it
switches to Bland's rule until the objective moves again, which rules out
cycling. On small problems linearly dependent rows are removed beforehand
with a column-pivoted QR factorisation of ``A^T``; on large ones they show
up as artificials that phase one cannot drive out and stay pinned at zero.

``basis_pursuit`` and ``l1_regression`` build the usual split-variable
linear programs on top of it and return :class:`LpSolution`.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

__all__ = [
    "LpStatus",
    "LpSolution",
    "LpError",
    "simplex",
    "basis_pursuit",
    "l1_regression",
    "least_squares",
    "reduce_rows",
]

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIV_TOL = 1e-9
DEGENERATE_STREAK = 50
REFACTOR_EVERY = 64
REDUCE_MAX_ROWS = 1000


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass
class LpSolution:
    solution: np.ndarray
    objective: float
    status: LpStatus
    iterations: int
    primal_residual: float
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class LpError(RuntimeError):
    def __init__(self, message, result: LpSolution | None = None):
        super().__init__(message)
        self.result = result


def reduce_rows(A, b, tol: float = 1e-9):
    """Drop linearly dependent rows of ``A x = b``.

    Returns ``(keep, consistent)`` where ``keep`` are the retained row indices
    (sorted) and ``consistent`` tells whether the dropped rows are implied by
    the kept ones.
    """
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    m = Ad.shape[0]
    if m == 0:
        return np.arange(0), True
    _, R, piv = scipy.linalg.qr(Ad.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.arange(0), bool(np.all(np.abs(b) <= tol))
    rank = int(np.sum(diag > tol * diag[0]))
    keep = np.sort(piv[:rank])
    if rank == m:
        return keep, True
    # dropped rows must be combinations of kept rows with the same right-hand side
    coef, *_ = scipy.linalg.lstsq(Ad[keep].T, Ad.T)
    resid = b - coef.T @ b[keep]
    scale = 1.0 + np.max(np.abs(b))
    return keep, bool(np.max(np.abs(resid)) <= 1e-7 * scale)


class _Basis:
    """Sparse LU of the basis matrix plus a product-form eta file."""

    def __init__(self, A: sp.csc_matrix, basis):
        self.A = A
        self.m = A.shape[0]
        self.factor(basis)

    def factor(self, basis):
        B = self.A[:, basis].tocsc()
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD", diag_pivot_thresh=0.1)
        except RuntimeError as exc:
            raise LpError(f"singular basis matrix: {exc}") from exc
        self.etas = []

    def ftran(self, a):
        """``B^{-1} a``."""
        x = self.lu.solve(a)
        for r, w in self.etas:
            xr = x[r] / w[r]
            x -= xr * w
            x[r] = xr
        return x

    def btran(self, c):
        """``B^{-T} c``."""
        y = np.array(c, dtype=float)
        for r, w in reversed(self.etas):
            y[r] = (y[r] - (w @ y - w[r] * y[r])) / w[r]
        return self.lu.solve(y, trans="T")

    def update(self, r, w):
        self.etas.append((r, w))


class _Simplex:
    """Revised simplex on ``[A | I] x = b`` with ``b >= 0``; columns ``>= n`` are artificial."""

    def __init__(self, A: sp.csc_matrix, b: np.ndarray, basis, *, feas_tol, opt_tol, max_iter,
                 refactor_every):
        self.m, self.n = A.shape
        self.A = sp.hstack([A, sp.identity(self.m, format="csc")], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = b
        self.basis = np.array(basis, dtype=int)
        self.feas_tol, self.opt_tol = feas_tol, opt_tol
        self.max_iter = max_iter
        self.refactor_every = refactor_every
        self.iterations = 0
        self.bland_steps = 0
        self.B = _Basis(self.A, self.basis)
        self._refactor()

    def column(self, j):
        A = self.A
        col = np.zeros(self.m)
        lo, hi = A.indptr[j], A.indptr[j + 1]
        col[A.indices[lo:hi]] = A.data[lo:hi]
        return col

    def _refactor(self):
        if self.m:
            self.B.factor(self.basis)
            self.xB = self.B.ftran(self.b)
        else:
            self.xB = np.zeros(0)
        self.xB[np.abs(self.xB) < 1e-14] = 0.0
        self.since_refactor = 0

    def _pivot(self, r, q, col, theta):
        self.xB -= theta * col
        self.xB[r] = theta
        self.xB[np.abs(self.xB) < 1e-14] = 0.0
        self.B.update(r, col)
        self.basis[r] = q
        self.iterations += 1
        self.since_refactor += 1

    def run(self, cost: np.ndarray, eligible: np.ndarray):
        """Iterate until optimal for ``cost``. Returns a status string."""
        m = self.m
        degenerate = 0
        bland = False
        pin = not eligible[self.n:].any()
        while True:
            if self.iterations >= self.max_iter:
                return LpStatus.ITER_LIMIT
            if self.since_refactor >= self.refactor_every:
                self._refactor()
            y = self.B.btran(cost[self.basis]) if m else np.zeros(0)
            d = cost - self.AT @ y
            cand = eligible.copy()
            cand[self.basis] = False
            neg = cand & (d < -self.opt_tol)
            if not neg.any():
                return LpStatus.OPTIMAL
            if bland:
                q = int(np.flatnonzero(neg)[0])
            else:
                q = int(np.argmin(np.where(neg, d, np.inf)))
            col = self.B.ftran(self.column(q))

            pos = col > PIV_TOL
            # in phase two basic artificials are pinned at zero: any nonzero entry blocks
            if pin:
                art_block = (self.basis >= self.n) & (np.abs(col) > PIV_TOL)
            else:
                art_block = np.zeros(m, dtype=bool)
            if not pos.any() and not art_block.any():
                return LpStatus.UNBOUNDED
            ratios = np.full(m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / col[pos]
            ratios[art_block] = 0.0
            if bland:
                tmin = ratios.min()
                ties = np.flatnonzero(ratios <= tmin + 1e-12)
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Harris two-pass: loosen by the feasibility tolerance, then take the largest pivot
                relaxed = np.full(m, np.inf)
                relaxed[pos] = (np.maximum(self.xB[pos], 0.0) + self.feas_tol) / col[pos]
                relaxed[art_block] = 0.0
                tmax = relaxed.min()
                ties = np.flatnonzero(ratios <= tmax)
                r = int(ties[np.argmax(np.abs(col[ties]))])
            theta = 0.0 if art_block[r] else ratios[r]
            self._pivot(r, q, col, theta)

            if theta * abs(d[q]) <= 1e-14:
                degenerate += 1
                if degenerate >= DEGENERATE_STREAK and not bland:
                    bland = True
            else:
                degenerate = 0
                bland = False
            if bland:
                self.bland_steps += 1

    def drive_out_artificials(self):
        """Pivot zero-level artificials out of the basis where a structural column allows it.

        Artificials that stay basic mark redundant rows; phase two keeps them at zero.
        """
        for r in range(self.m):
            if self.basis[r] < self.n:
                continue
            e = np.zeros(self.m)
            e[r] = 1.0
            row = self.AT[: self.n] @ self.B.btran(e)
            row[self.basis[self.basis < self.n]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) <= 1e-7:
                continue
            col = self.B.ftran(self.column(j))
            self._pivot(r, j, col, self.xB[r] / col[r])
            if self.since_refactor >= self.refactor_every:
                self._refactor()
        self._refactor()

    def primal(self):
        x = np.zeros(self.n + self.m)
        x[self.basis] = self.xB
        return x


def simplex(c, A, b, *, feas_tol: float = FEAS_TOL, opt_tol: float = OPT_TOL, max_iter: int | None = None,
            basis=None, reduce: bool | None = None, refactor_every: int | None = None) -> LpSolution:
    """Solve ``min c^T x`` subject to ``A x = b``, ``x >= 0``.

    Parameters
    ----------
    c, A, b
        Problem data; ``A`` may be dense or scipy sparse.
    basis
        Optional primal feasible starting basis (column indices). When given,
        phase one is skipped.
    reduce
        Remove dependent rows by QR first (ignored when ``basis`` is given).
        Defaults to ``m <= REDUCE_MAX_ROWS``.

    Returns
    -------
    LpSolution
        ``solution`` is the full vector ``x``.
    """
    t0 = time.perf_counter()
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    A = sp.csc_matrix(A, dtype=float)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n)
    if refactor_every is None:
        refactor_every = REFACTOR_EVERY
    if reduce is None:
        reduce = m <= REDUCE_MAX_ROWS
    A_full, b_full = A, b.copy()
    info = {"rows": m, "cols": n, "dropped_rows": 0}

    def finish(x, status, iters, extra=None):
        resid = float(np.max(np.abs(A_full @ x - b_full))) if m else 0.0
        obj = float(c @ x)
        out = LpSolution(x, obj, status, iters, resid, info)
        info["seconds"] = time.perf_counter() - t0
        if extra:
            info.update(extra)
        return out

    if basis is None and reduce and m:
        keep, consistent = reduce_rows(A, b)
        if not consistent:
            return finish(np.zeros(n), LpStatus.INFEASIBLE, 0)
        if len(keep) < m:
            log.info("removed %d dependent rows of %d", m - len(keep), m)
            info["dropped_rows"] = m - len(keep)
            A, b = A[keep], b[keep]
            m = A.shape[0]

    if basis is not None:
        solver = _Simplex(A, b, basis, feas_tol=feas_tol, opt_tol=opt_tol, max_iter=max_iter,
                          refactor_every=refactor_every)
        if np.any(solver.xB < -feas_tol):
            raise ValueError("starting basis is not primal feasible")
    else:
        sign = np.where(b < 0, -1.0, 1.0)
        A = sp.diags(sign) @ A
        b = sign * b
        solver = _Simplex(sp.csc_matrix(A), b, np.arange(n, n + m), feas_tol=feas_tol, opt_tol=opt_tol,
                          max_iter=max_iter, refactor_every=refactor_every)
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        status = solver.run(cost1, np.ones(n + m, dtype=bool))
        phase1 = float(solver.xB[solver.basis >= n].sum())
        if status is LpStatus.ITER_LIMIT:
            return finish(solver.primal()[:n], status, solver.iterations)
        if phase1 > feas_tol * (1.0 + np.max(np.abs(b), initial=0.0)):
            return finish(solver.primal()[:n], LpStatus.INFEASIBLE, solver.iterations)
        solver.drive_out_artificials()

    cost2 = np.concatenate([c, np.zeros(m)])
    eligible = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
    status = solver.run(cost2, eligible)
    if status is LpStatus.OPTIMAL:
        solver._refactor()
    x = solver.primal()[:n]
    x[x < 0.0] = 0.0
    return finish(x, status, solver.iterations, {"bland_steps": solver.bland_steps})


# --------------------------------------------------------------------------
# l1 problems


def _highs(c, A_eq, b_eq, bounds):
    from scipy.optimize import linprog

    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    status = {0: LpStatus.OPTIMAL, 1: LpStatus.ITER_LIMIT, 2: LpStatus.INFEASIBLE,
              3: LpStatus.UNBOUNDED}.get(res.status, LpStatus.INFEASIBLE)
    x = res.x if res.x is not None else np.zeros(len(c))
    return x, status, int(getattr(res, "nit", 0) or 0)


def basis_pursuit(A, b, *, feas_tol: float = FEAS_TOL, max_iter: int | None = None,
                  solver: str = "simplex") -> LpSolution:
    """``min ||z||_1`` subject to ``A z = b``.

    Solved as ``min 1^T (u + v)`` with ``A (u - v) = b``, ``u, v >= 0``. The
    returned vertex is whatever the deterministic pivot rule reaches when the
    optimum is not unique. ``solver="highs"`` hands the same LP to SciPy's
    HiGHS instead (used as a cross-check and for the largest instances).
    """
    A = sp.csr_matrix(A, dtype=float) if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    m, n = A.shape
    if b.shape != (m,):
        raise ValueError(f"b has shape {b.shape}, expected ({m},)")
    if not np.all(np.isfinite(b)):
        raise ValueError("b must be finite")
    split = sp.hstack([sp.csr_matrix(A), -sp.csr_matrix(A)], format="csc")
    cost = np.ones(2 * n)
    t0 = time.perf_counter()
    if solver == "simplex":
        res = simplex(cost, split, b, feas_tol=feas_tol, max_iter=max_iter)
        x, status, iters, info = res.solution, res.status, res.iterations, dict(res.info)
    elif solver == "highs":
        x, status, iters = _highs(cost, split, b, (0, None))
        info = {"rows": m, "cols": 2 * n}
    else:
        raise ValueError(f"unknown solver {solver!r}")
    z = x[:n] - x[n:]
    resid = A @ z - b
    info.update(solver=solver, seconds=time.perf_counter() - t0)
    r2 = float(np.linalg.norm(resid))
    if status is LpStatus.OPTIMAL and r2 > max(feas_tol, 1e-7) * (1.0 + np.linalg.norm(b)):
        log.warning("basis pursuit residual %.3e exceeds tolerance", r2)
    return LpSolution(z, float(np.abs(z).sum()), status, iters, r2, info)


def l1_regression(Bt, b, *, max_iter: int | None = None, solver: str = "simplex") -> LpSolution:
    """``min_y ||b - Bt y||_1``.

    Variables ``y = y+ - y-`` and residual ``r+ - r-`` with
    ``Bt y + r+ - r- = b``; the residual slacks give a feasible start.
    """
    Bt = np.asarray(Bt.toarray() if sp.issparse(Bt) else Bt, dtype=float)
    if Bt.ndim == 1:
        Bt = Bt[:, None]
    b = np.asarray(b, dtype=float).ravel()
    n, m = Bt.shape
    I = np.eye(n)
    M = np.hstack([Bt, -Bt, I, -I])
    cost = np.concatenate([np.zeros(2 * m), np.ones(2 * n)])
    t0 = time.perf_counter()
    if solver == "simplex":
        start = np.where(b >= 0, 2 * m + np.arange(n), 2 * m + n + np.arange(n))
        res = simplex(cost, M, b, basis=start, max_iter=max_iter)
        x, status, iters = res.solution, res.status, res.iterations
    elif solver == "highs":
        x, status, iters = _highs(cost, M, b, (0, None))
    else:
        raise ValueError(f"unknown solver {solver!r}")
    y = x[:m] - x[m:2 * m]
    resid = b - Bt @ y
    return LpSolution(y, float(np.abs(resid).sum()), status, iters, 0.0,
                      {"solver": solver, "seconds": time.perf_counter() - t0,
                       "residual": resid})


def least_squares(A, b, rcond: float = 1e-12) -> np.ndarray:
    """Minimum-norm least-squares solution (SVD based)."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    x, *_ = scipy.linalg.lstsq(A, np.asarray(b, dtype=float), cond=rcond, lapack_driver="gelsd")
    return x
