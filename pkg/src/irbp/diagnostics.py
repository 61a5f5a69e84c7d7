"""Compressed-sensing diagnostics for stiffness dictionaries.

Mutual incoherence, restricted isometry constants, best k-term errors,
numerical checks of the inequalities used in the error analysis, an exact
recovery experiment and the two-stage (decode, then basis pursuit) solver.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .lp import LpError, LpStatus, basis_pursuit, l1_regression, least_squares

log = logging.getLogger(__name__)

__all__ = [
    "IncoherenceReport",
    "RipEstimate",
    "mutual_incoherence",
    "rip_constant",
    "best_k_term_error",
    "check_lemma_mutual_bound",
    "check_rip_mu_bound",
    "check_lemma_energy_identity",
    "energy_identities",
    "check_support_split",
    "recovery_experiment",
    "full_rank_factor",
    "two_stage_decode",
]

RIP_BUDGET = 2_000_000
_BATCH = 20_000


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def _normalized(Phi: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Phi, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} is zero")
    return Phi / norms


@dataclass
class IncoherenceReport:
    mu: float
    witness: tuple
    normalized: bool = True


def mutual_incoherence(Phi, normalize: bool = True) -> IncoherenceReport:
    """Largest absolute inner product between two distinct columns.

    Columns are scaled to unit length first unless ``normalize`` is false.
    """
    Phi = _dense(Phi)
    if Phi.shape[1] < 2:
        return IncoherenceReport(0.0, (), normalize)
    P = _normalized(Phi) if normalize else Phi
    G = np.abs(P.T @ P)
    np.fill_diagonal(G, -np.inf)
    i, j = np.unravel_index(int(np.argmax(G)), G.shape)
    i, j = sorted((int(i), int(j)))
    return IncoherenceReport(float(G[i, j]), (i, j), normalize)


@dataclass
class RipEstimate:
    k: int
    delta_k: float
    witness_support: tuple
    method: str  # "exhaustive" or "sampled" (a lower bound)

    @property
    def is_lower_bound(self) -> bool:
        return self.method == "sampled"


def _support_deltas(G: np.ndarray, supports: np.ndarray) -> np.ndarray:
    sub = G[supports[:, :, None], supports[:, None, :]]
    ev = np.linalg.eigvalsh(sub)
    return np.maximum(ev[:, -1] - 1.0, 1.0 - ev[:, 0])


def rip_constant(Phi, k: int, budget: int = RIP_BUDGET, method: str = "auto", normalize: bool = True,
                 seed: int = 42) -> RipEstimate:
    """Restricted isometry constant ``delta_k``.

    Eigenvalues of principal submatrices interlace, so the extremes over all
    supports of size at most ``k`` are attained on supports of size exactly
    ``k``. ``method="exhaustive"`` enumerates all of them and fails when there
    are more than ``budget``; ``"sampled"`` draws ``budget`` random supports
    and returns a lower bound; ``"auto"`` picks the former when it fits.
    """
    Phi = _dense(Phi)
    n = Phi.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    P = _normalized(Phi) if normalize else Phi
    G = P.T @ P
    total = math.comb(n, k)
    if method == "auto":
        method = "exhaustive" if total <= budget else "sampled"
    if method == "exhaustive" and total > budget:
        raise ValueError(f"C({n},{k}) = {total} supports exceed the budget {budget}; use method='sampled'")
    if method not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown method {method!r}")

    best, witness = -np.inf, ()
    if method == "exhaustive":
        combos = itertools.combinations(range(n), k)
        while True:
            chunk = np.array(list(itertools.islice(combos, _BATCH)), dtype=int).reshape(-1, k)
            if chunk.size == 0:
                break
            d = _support_deltas(G, chunk)
            i = int(np.argmax(d))
            if d[i] > best:
                best, witness = float(d[i]), tuple(int(c) for c in chunk[i])
    else:
        rng = np.random.default_rng(seed)
        left = budget
        while left > 0:
            m = min(left, _BATCH)
            chunk = np.sort(np.argsort(rng.random((m, n)), axis=1)[:, :k], axis=1)
            d = _support_deltas(G, chunk)
            i = int(np.argmax(d))
            if d[i] > best:
                best, witness = float(d[i]), tuple(int(c) for c in chunk[i])
            left -= m
    return RipEstimate(k, max(best, 0.0), witness, method)


def best_k_term_error(x, k: int, p: float = 1.0) -> float:
    """``min ||x - z||_p`` over ``k``-sparse ``z``.

    Keeping the ``k`` largest magnitudes is optimal for every ``p > 0``; ties
    go to the lower index. ``p`` may be ``np.inf`` and may lie in ``(0, 1)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not 0 <= k <= x.size:
        raise ValueError(f"k must be in [0, {x.size}]")
    if not p > 0:
        raise ValueError("p must be positive")
    order = np.argsort(-np.abs(x), kind="stable")
    rest = np.abs(x[order[k:]])
    if rest.size == 0:
        return 0.0
    if np.isinf(p):
        return float(rest.max())
    return float(np.sum(rest ** p) ** (1.0 / p))


@dataclass
class BoundReport:
    holds: bool
    trials: int = 0
    violations: int = 0
    max_violation: float = 0.0
    details: dict = field(default_factory=dict)


def check_lemma_mutual_bound(Phi, trials: int = 1000, seed: int = 42, slack: float = 1e-10) -> BoundReport:
    """``||Phi x||^2 <= (1 - mu) ||x||_2^2 + mu ||x||_1^2`` on random ``x``, unit columns."""
    P = _normalized(_dense(Phi))
    mu = mutual_incoherence(P).mu
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((P.shape[1], trials))
    # sparse and sign-structured draws as well as dense ones
    X[:, ::3] *= rng.random((P.shape[1], X[:, ::3].shape[1])) < 0.2
    lhs = np.sum((P @ X) ** 2, axis=0)
    rhs = (1.0 - mu) * np.sum(X ** 2, axis=0) + mu * np.sum(np.abs(X), axis=0) ** 2
    excess = (lhs - rhs) / np.maximum(1.0, rhs)
    bad = excess > slack
    return BoundReport(not bad.any(), trials, int(bad.sum()), float(max(excess.max(), 0.0)), {"mu": mu})


def check_rip_mu_bound(Phi, k: int, budget: int = RIP_BUDGET) -> BoundReport:
    """``delta_k <= (k - 1) mu`` with ``delta_k`` computed exhaustively."""
    mu = mutual_incoherence(Phi).mu
    est = rip_constant(Phi, k, budget=budget, method="exhaustive")
    bound = (k - 1) * mu
    excess = est.delta_k - bound
    return BoundReport(excess <= 1e-12, 1, int(excess > 1e-12), max(excess, 0.0),
                       {"delta_k": est.delta_k, "bound": bound, "mu": mu, "witness": est.witness_support})


def _rel_gap(lhs: float, rhs: float, scale: float) -> float:
    denom = max(abs(lhs), abs(rhs), scale)
    return 0.0 if denom == 0.0 else abs(lhs - rhs) / denom


def energy_identities(A, b, n: int, N: int, z=None) -> dict:
    """Both identities of the three-block energy splitting for one system.

    ``A`` (``L x L``, symmetric positive semidefinite) and ``b`` are
    partitioned at ``n`` and ``N``. ``x^L`` and ``x^N`` solve the full and
    leading ``N x N`` systems (minimum norm when singular). ``z`` defaults to
    basis pursuit on rows ``n:N``, columns ``:N``. Returned relative gaps are
    scaled by ``||A|| ||d||^2`` for the difference ``d`` in each quadratic form.
    """
    A = _dense(A)
    b = np.asarray(b, dtype=float).ravel()
    L = A.shape[0]
    if not 0 <= n <= N <= L:
        raise ValueError("need 0 <= n <= N <= L")
    xL = least_squares(A, b)
    xN = least_squares(A[:N, :N], b[:N])
    if z is None:
        if N > n:
            res = basis_pursuit(A[n:N, :N], b[n:N])
            if res.status is not LpStatus.OPTIMAL:
                raise LpError(f"basis pursuit failed: {res.status.value}", res)
            z = res.solution
        else:
            z = xN.copy()  # no refined rows, nothing to minimise
    z = np.asarray(z, dtype=float)
    normA = float(np.linalg.norm(A, 2)) if L else 0.0

    xhat = np.concatenate([xN, np.zeros(L - N)])
    zhat = np.concatenate([z, np.zeros(L - N)])
    d_x = xhat - xL
    lhs_x = float(d_x @ A @ d_x)
    rhs_x = float(xL[N:] @ (b[N:] - A[N:, :N] @ xN))
    d_z = zhat - xhat
    lhs_z = float(d_z @ A @ d_z)
    rhs_z = float((xN[:n] - z[:n]) @ (b[:n] - A[:n, :N] @ z))
    return {
        "x_lhs": lhs_x, "x_rhs": rhs_x, "x_gap": _rel_gap(lhs_x, rhs_x, normA * float(d_x @ d_x)),
        "z_lhs": lhs_z, "z_rhs": rhs_z, "z_gap": _rel_gap(lhs_z, rhs_z, normA * float(d_z @ d_z)),
    }


def check_lemma_energy_identity(levels=(3, 4, 8), problem=None, tol: float = 1e-8) -> BoundReport:
    """Energy identities on the 1D hierarchy truncated at levels ``(n, N, L)``."""
    from .assembly import Assembler
    from .dictionary import Family, ids_through_level
    from .problems import get_problem

    n_lvl, N_lvl, L_lvl = levels
    if not 1 <= n_lvl <= N_lvl <= L_lvl:
        raise ValueError("levels must satisfy 1 <= n <= N <= L")
    problem = problem or get_problem("arctan2")
    if problem.family is not Family.HAT1D:
        raise ValueError("the level check uses the 1D hierarchy")
    asm = Assembler(problem)
    ids = ids_through_level(Family.HAT1D, L_lvl)
    A = asm.stiffness(ids, ids).toarray()
    b = asm.load(ids).values
    n = len(ids_through_level(Family.HAT1D, n_lvl))
    N = len(ids_through_level(Family.HAT1D, N_lvl))
    out = energy_identities(A, b, n, N)
    worst = max(out["x_gap"], out["z_gap"])
    return BoundReport(worst <= tol, 1, int(worst > tol), worst, out)


def check_support_split(A, b, x, z=None, slack: float = 1e-9) -> BoundReport:
    """``||(z - x)_S||_1 >= ||z - x||_1 / 2`` with ``S = supp(x)``, ``z`` the l1 minimiser."""
    A = _dense(A)
    x = np.asarray(x, dtype=float)
    if z is None:
        res = basis_pursuit(A, b)
        if res.status is not LpStatus.OPTIMAL:
            raise LpError(f"basis pursuit failed: {res.status.value}", res)
        z = res.solution
    delta = z - x
    on = np.abs(delta[x != 0.0]).sum()
    total = np.abs(delta).sum()
    excess = 0.5 * total - on
    return BoundReport(excess <= slack, 1, int(excess > slack), max(float(excess), 0.0),
                       {"on_support": float(on), "total": float(total)})


@dataclass
class RecoveryReport:
    trials: int
    recovered: int
    failures: list

    @property
    def rate(self) -> float:
        return self.recovered / self.trials if self.trials else math.nan


def recovery_experiment(m: int = 30, n: int = 60, k: int = 3, trials: int = 200, seed: int = 42,
                        tol: float = 1e-6) -> RecoveryReport:
    """Plant ``k``-sparse vectors under unit-column Gaussian matrices and try to recover them."""
    rng = np.random.default_rng(seed)
    ok, failures = 0, []
    for t in range(trials):
        Phi = _normalized(rng.standard_normal((m, n)))
        x0 = np.zeros(n)
        S = rng.choice(n, size=k, replace=False)
        x0[S] = rng.standard_normal(k)
        res = basis_pursuit(Phi, Phi @ x0)
        err = float(np.max(np.abs(res.solution - x0)))
        if res.status is LpStatus.OPTIMAL and err <= tol:
            ok += 1
        else:
            delta = rip_constant(Phi, min(2 * k, n), budget=2000, method="sampled", seed=seed + t)
            failures.append({"trial": t, "error": err, "status": res.status.value,
                             "delta_2k_lower": delta.delta_k})
            log.info("trial %d not recovered: error %.3e, delta_2k >= %.3f", t, err, delta.delta_k)
    return RecoveryReport(trials, ok, failures)


def full_rank_factor(A, rtol: float = 1e-12):
    """``B`` with full row rank and ``B^T B = A`` from pivoted Cholesky.

    Elimination stops once the largest remaining pivot is at most
    ``rtol * trace(A)``.
    """
    A = _dense(A)
    A = 0.5 * (A + A.T)
    N = A.shape[0]
    if N == 0:
        return np.zeros((0, 0))
    tol = rtol * max(float(np.trace(A)), 0.0)
    c, piv, rank, info = scipy.linalg.lapack.dpstrf(A, tol=tol, lower=0)
    if info < 0:
        raise ValueError(f"dpstrf argument {-info} invalid")
    U = np.triu(c)[:rank]
    B = np.zeros((rank, N))
    B[:, piv - 1] = U
    return B


@dataclass
class DecodeReport:
    x: np.ndarray
    y: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    norm_B2: float
    energy_error: float = math.nan
    relative_energy_error: float = math.nan


def two_stage_decode(A, b, split=None, x_ref=None) -> DecodeReport:
    """Solve ``A x = b`` through ``y = argmin ||b - B1^T y||_1`` and ``x = argmin {||x||_1 : B1 x = y}``.

    ``split`` is either a pair ``(B1, B2)`` with ``A = B1^T B1 + B2^T B2``, an
    integer ``r`` taking the first ``r`` rows of the pivoted Cholesky factor
    as ``B1``, or ``None`` for ``B1`` equal to the whole factor.
    """
    A = _dense(A)
    b = np.asarray(b, dtype=float).ravel()
    if isinstance(split, tuple):
        B1, B2 = (_dense(B) for B in split)
        if B2.size == 0:
            B2 = np.zeros((0, A.shape[1]))
        recon = B1.T @ B1 + B2.T @ B2
        if not np.allclose(recon, A, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(A).max())):
            raise ValueError("B1^T B1 + B2^T B2 does not reproduce A")
    else:
        B = full_rank_factor(A)
        r = B.shape[0] if split is None else int(split)
        B1, B2 = B[:r], B[r:]
    stage1 = l1_regression(B1.T, b)
    if stage1.status is not LpStatus.OPTIMAL:
        raise LpError(f"l1 regression failed: {stage1.status.value}", stage1)
    stage2 = basis_pursuit(B1, stage1.solution)
    if stage2.status is not LpStatus.OPTIMAL:
        raise LpError(f"basis pursuit failed: {stage2.status.value}", stage2)
    x = stage2.solution
    norm_B2 = float(np.linalg.norm(B2, 2)) if B2.size else 0.0
    report = DecodeReport(x, stage1.solution, B1, B2, norm_B2)
    if x_ref is not None:
        d = np.asarray(x_ref, dtype=float) - x
        report.energy_error = float(d @ A @ d)
        ref = float(np.asarray(x_ref) @ A @ np.asarray(x_ref))
        report.relative_energy_error = report.energy_error / ref if ref > 0 else report.energy_error
    return report
