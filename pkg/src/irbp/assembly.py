"""Stiffness and load assembly for the hierarchical Poisson dictionaries.

1D entries use the kink identity ``int u' v' = -sum_x [u'](x) v(x)`` over the
kinks ``x`` of the coarser hat, which is exact for piecewise linear ``u``.
2D entries are summed triangle by triangle over the six fine triangles of the
finer hat; the coarser hat is linear on each of them because the meshes are
nested. Both are translation invariant, so values are cached by
``(level difference, offset)``.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dictionary import BasisId, Family, IndexSet, RefinementTree, refine
from .problems import ProblemSpec
from .quadrature import ORDER, RTOL, IntegrationError, gauss_legendre, integrate_triangle

log = logging.getLogger(__name__)

__all__ = [
    "StiffnessBlock",
    "LoadVector",
    "BlockSystem",
    "Assembler",
    "stiffness_entry",
    "load_entry",
    "build_block_system",
    "write_matrix_market",
    "read_matrix_market",
    "write_vector",
    "read_vector",
]


@dataclass
class StiffnessBlock:
    """``A[row_ids, col_ids]`` in coordinate form.

    Every pair of overlapping supports is stored, including pairs whose
    stiffness value happens to vanish (a coarse hat that is linear across a
    fine support).
    """

    row_ids: IndexSet
    col_ids: IndexSet
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @property
    def shape(self):
        return (len(self.row_ids), len(self.col_ids))

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()


@dataclass
class LoadVector:
    ids: IndexSet
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass
class BlockSystem:
    """One refinement step's partitioned system.

    Rows: ``R_prev`` then ``Rhat``; columns: ``C_prev`` then ``Chat``.
    """

    A11: StiffnessBlock
    A12: StiffnessBlock
    A21: StiffnessBlock
    A22: StiffnessBlock
    b1: LoadVector
    b2: LoadVector
    C_prev: IndexSet
    Chat: IndexSet
    R_prev: IndexSet
    Rhat: IndexSet
    dims: dict = field(default_factory=dict)

    @property
    def columns(self) -> list:
        """Column ids of ``[A21 A22]`` in matrix order."""
        return list(self.C_prev) + list(self.Chat)

    def lower(self) -> sp.csr_matrix:
        """``[A21 A22]`` as one sparse matrix."""
        return sp.hstack([self.A21.tocsr(), self.A22.tocsr()], format="csr")

    def full(self) -> sp.csr_matrix:
        """``[[A11 A12], [A21 A22]]``."""
        return sp.bmat([[self.A11.tocsr(), self.A12.tocsr()],
                        [self.A21.tocsr(), self.A22.tocsr()]], format="csr")


# --------------------------------------------------------------------------
# single entries


def _entry_1d(coarse: BasisId, fine: BasisId) -> float:
    d = fine.level - coarse.level
    off = fine.position - coarse.position * 2 ** d
    scale = 2.0 ** (-d / 2)
    if off == 0:
        return scale
    if abs(off) == 2 ** d:
        return -0.5 * scale
    return 0.0


def _overlap_1d(coarse: BasisId, fine: BasisId) -> bool:
    d = fine.level - coarse.level
    return abs(fine.position - coarse.position * 2 ** d) < 2 ** d + 1


# six triangles of a 2D hat in units of its own mesh width, listed in a fixed order
_HEX = np.array([[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]], dtype=float)
_TRIS = [(np.zeros(2), _HEX[i], _HEX[(i + 1) % 6]) for i in range(6)]


def _hat2d_unit(s, t):
    return 0.5 * max(0.0, 1.0 - max(abs(s), abs(t), abs(s - t)))


def _gradient(p0, p1, p2, v0, v1, v2):
    M = np.array([p1 - p0, p2 - p0])
    return np.linalg.solve(M, np.array([v1 - v0, v2 - v0]))


@lru_cache(maxsize=None)
def _entry_2d_offset(d: int, u: int, v: int):
    """Stiffness of a hat and one ``d`` levels finer, offset ``(u, v)`` fine cells.

    Returns ``(value, overlaps)``.
    """
    scale = 2.0 ** d
    total = 0.0
    overlaps = False
    for p0, p1, p2 in _TRIS:
        vals_c = [_hat2d_unit((u + P[0]) / scale, (v + P[1]) / scale) for P in (p0, p1, p2)]
        if max(vals_c) > 0.0:
            overlaps = True
        g_c = _gradient(p0, p1, p2, *vals_c)
        g_f = _gradient(p0, p1, p2, 0.5, 0.0, 0.0)
        total += 0.5 * float(g_c @ g_f)
    return total, overlaps


def _entry_2d(coarse: BasisId, fine: BasisId):
    d = fine.level - coarse.level
    (p, q), (P, Q) = coarse.position, fine.position
    return _entry_2d_offset(d, P - p * 2 ** d, Q - q * 2 ** d)


def _ordered(i: BasisId, j: BasisId):
    return (i, j) if (i.level, i.position) <= (j.level, j.position) else (j, i)


def stiffness_entry(i: BasisId, j: BasisId) -> float:
    """``a(phi_i, phi_j) = int grad phi_i . grad phi_j`` computed exactly."""
    if i.family is not j.family:
        raise TypeError(f"cannot pair {i.family.value} with {j.family.value}")
    c, f = _ordered(i, j)
    if i.family is Family.HAT1D:
        return _entry_1d(c, f)
    return _entry_2d(c, f)[0]


def supports_overlap(i: BasisId, j: BasisId) -> bool:
    c, f = _ordered(i, j)
    if i.family is Family.HAT1D:
        return _overlap_1d(c, f)
    return _entry_2d(c, f)[1]


# --------------------------------------------------------------------------
# load integrals


def _hat_triangles(bid: BasisId):
    h = bid.mesh_width
    c = np.array(bid.center)
    return [np.array([c + h * P for P in tri]) for tri in _TRIS]


def load_entry(problem: ProblemSpec, j: BasisId) -> float:
    """``int f phi_j`` over the support of ``phi_j``."""
    if problem.family is not j.family:
        raise TypeError(f"problem {problem.name} is {problem.family.value}, id is {j.family.value}")
    if j.family is Family.HAT1D:
        return float(_load_1d(problem, j.level, np.array([j.position]))[0])
    total = 0.0
    p, q = j.position
    for tri in _hat_triangles(j):
        total += integrate_triangle(
            lambda x, y: problem.rhs(x, y) * _hat2d_vals(j.level, p, q, x, y), tri)
    return total


def _hat2d_vals(level, p, q, x, y):
    n = 2.0 ** level
    s, t = n * x - p, n * y - q
    return 0.5 * np.maximum(0.0, 1.0 - np.maximum(np.maximum(np.abs(s), np.abs(t)), np.abs(s - t)))


def _load_1d(problem: ProblemSpec, level: int, positions: np.ndarray, *, rtol=RTOL, order=ORDER,
             max_depth=22) -> np.ndarray:
    """Batched load integrals for hats on one level.

    Each half of every support is split into ``2^d`` equal cells; ``d`` grows
    until successive composite estimates agree for every hat.
    """
    h = 2.0 ** (1 - level)
    centers = -1.0 + positions * h
    scale = 2.0 ** (-level / 2)
    t, w = gauss_legendre(order)

    def estimate(idx, depth):
        n = 2 ** depth
        cell = h / n
        starts = np.concatenate([np.arange(n) * cell - h, np.arange(n) * cell])  # relative to centre
        x = centers[idx, None, None] + starts[None, :, None] + cell * t[None, None, :]
        rel = np.abs(x - centers[idx, None, None]) / h
        vals = problem.rhs(x) * scale * np.maximum(0.0, 1.0 - rel)
        return cell * np.sum(vals * w, axis=(1, 2))

    out = np.empty(len(positions))
    todo = np.arange(len(positions))
    prev = estimate(todo, 0)
    for depth in range(1, max_depth + 1):
        cur = estimate(todo, depth)
        gap = np.abs(cur - prev) / (1.0 + np.abs(cur))
        done = gap <= rtol
        out[todo[done]] = cur[done]
        todo, prev = todo[~done], cur[~done]
        if len(todo) == 0:
            return out
    err = float(np.max(gap))
    raise IntegrationError(f"load integral on level {level} did not converge", err)


# --------------------------------------------------------------------------
# assembler with caches


class Assembler:
    """Assembles stiffness blocks and load vectors, caching load integrals."""

    def __init__(self, problem: ProblemSpec):
        self.problem = problem
        self.family = problem.family
        self._load = {}

    # -- load
    def load(self, ids) -> LoadVector:
        ids = ids if isinstance(ids, IndexSet) else IndexSet(ids)
        missing = [b for b in ids if b not in self._load]
        if missing:
            if self.family is Family.HAT1D:
                by_level = defaultdict(list)
                for b in missing:
                    by_level[b.level].append(b)
                for level, group in by_level.items():
                    vals = _load_1d(self.problem, level, np.array([b.position for b in group]))
                    self._load.update(zip(group, vals))
            else:
                for b in missing:
                    self._load[b] = load_entry(self.problem, b)
        return LoadVector(ids, np.array([self._load[b] for b in ids], dtype=float))

    # -- stiffness
    def stiffness(self, row_ids, col_ids) -> StiffnessBlock:
        row_ids = row_ids if isinstance(row_ids, IndexSet) else IndexSet(row_ids)
        col_ids = col_ids if isinstance(col_ids, IndexSet) else IndexSet(col_ids)
        if self.family is Family.HAT1D:
            r, c, v = _pairs_1d(row_ids, col_ids)
        else:
            r, c, v = _pairs_2d(row_ids, col_ids)
        return StiffnessBlock(row_ids, col_ids, r, c, v)


def _group_positions(ids: IndexSet):
    groups = defaultdict(lambda: ([], []))
    for k, b in enumerate(ids):
        pos, idx = groups[b.level]
        pos.append(b.position)
        idx.append(k)
    return {lvl: (np.array(p), np.array(i)) for lvl, (p, i) in groups.items()}


def _pairs_1d(row_ids: IndexSet, col_ids: IndexSet):
    rg, cg = _group_positions(row_ids), _group_positions(col_ids)
    R, C, V = [], [], []
    for kr, (rpos, ridx) in rg.items():
        for kc, (cpos, cidx) in cg.items():
            if kc <= kr:
                coarse_pos, coarse_idx, fine_pos, fine_idx, d = cpos, cidx, rpos, ridx, kr - kc
            else:
                coarse_pos, coarse_idx, fine_pos, fine_idx, d = rpos, ridx, cpos, cidx, kc - kr
            order = np.argsort(fine_pos)
            fp, fi = fine_pos[order], fine_idx[order]
            base = coarse_pos * 2 ** d
            lo = np.searchsorted(fp, base - 2 ** d, side="left")
            hi = np.searchsorted(fp, base + 2 ** d, side="right")
            counts = hi - lo
            if counts.sum() == 0:
                continue
            which = np.repeat(np.arange(len(coarse_pos)), counts)
            starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
            fsel = np.arange(counts.sum()) + starts
            off = fp[fsel] - base[which]
            scale = 2.0 ** (-d / 2)
            vals = np.where(off == 0, scale, np.where(np.abs(off) == 2 ** d, -0.5 * scale, 0.0))
            ci, fi_sel = coarse_idx[which], fi[fsel]
            if kc <= kr:
                R.append(fi_sel); C.append(ci)
            else:
                R.append(ci); C.append(fi_sel)
            V.append(vals)
    if not R:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return np.concatenate(R), np.concatenate(C), np.concatenate(V)


def _pairs_2d(row_ids: IndexSet, col_ids: IndexSet):
    cg = defaultdict(dict)
    for k, b in enumerate(col_ids):
        cg[b.level][b.position] = k
    R, C, V = [], [], []
    for ri, rb in enumerate(row_ids):
        jr = rb.level
        P, Q = rb.position
        for jc, lookup in cg.items():
            if jc <= jr:
                d = jr - jc
                n = 2 ** d
                ps = range(-(-(P - n) // n), (P + n) // n + 1)   # |P - p n| <= n
                qs = range(-(-(Q - n) // n), (Q + n) // n + 1)
                for p in ps:
                    for q in qs:
                        ci = lookup.get((p, q))
                        if ci is None:
                            continue
                        val, ov = _entry_2d_offset(d, P - p * n, Q - q * n)
                        if ov:
                            R.append(ri); C.append(ci); V.append(val)
            else:
                d = jc - jr
                n = 2 ** d
                for Pc in range(P * n - n, P * n + n + 1):
                    for Qc in range(Q * n - n, Q * n + n + 1):
                        ci = lookup.get((Pc, Qc))
                        if ci is None:
                            continue
                        val, ov = _entry_2d_offset(d, Pc - P * n, Qc - Q * n)
                        if ov:
                            R.append(ri); C.append(ci); V.append(val)
    return np.array(R, dtype=int), np.array(C, dtype=int), np.array(V, dtype=float)


# --------------------------------------------------------------------------
# block systems


def build_block_system(C_prev: IndexSet, tree: RefinementTree, problem: ProblemSpec, *,
                       R_prev: IndexSet | None = None, assembler: Assembler | None = None,
                       Chat: IndexSet | None = None) -> BlockSystem:
    """Partition ``A`` and ``b`` for one refinement step.

    ``Chat = Ref(C_prev) \\ C_prev`` and ``Rhat = Ref(R_prev) \\ R_prev``
    unless ``Chat`` is given (then ``Rhat`` equals it, as ``R = C``).
    """
    if len(C_prev) == 0:
        raise ValueError("C_prev must be nonempty")
    R_prev = C_prev if R_prev is None else R_prev
    asm = assembler or Assembler(problem)
    C_prev = C_prev.with_role("C")
    R_prev = R_prev.with_role("R")
    if Chat is None:
        Chat = refine(C_prev, tree).difference(C_prev, role="Chat")
        Rhat = Chat.with_role("Rhat") if R_prev == C_prev else \
            refine(R_prev, tree).difference(R_prev, role="Rhat")
    else:
        Chat = Chat.with_role("Chat")
        Rhat = Chat.with_role("Rhat")
    system = BlockSystem(
        A11=asm.stiffness(R_prev, C_prev), A12=asm.stiffness(R_prev, Chat),
        A21=asm.stiffness(Rhat, C_prev), A22=asm.stiffness(Rhat, Chat),
        b1=asm.load(R_prev), b2=asm.load(Rhat),
        C_prev=C_prev, Chat=Chat, R_prev=R_prev, Rhat=Rhat,
    )
    system.dims = {
        "A21": (len(Rhat), len(C_prev)),
        "A22": (len(Rhat), len(Chat)),
        "lower": (len(Rhat), len(C_prev) + len(Chat)),
        "full": (len(R_prev) + len(Rhat), len(C_prev) + len(Chat)),
    }
    return system


# --------------------------------------------------------------------------
# file formats


def write_matrix_market(path, matrix, comment: str = "") -> None:
    """MatrixMarket coordinate format with 17 significant digits."""
    if isinstance(matrix, StiffnessBlock):
        matrix = sp.coo_matrix((matrix.values, (matrix.rows, matrix.cols)), shape=matrix.shape)
    elif not sp.issparse(matrix):
        matrix = sp.coo_matrix(np.asarray(matrix, dtype=float))
    scipy.io.mmwrite(str(path), matrix, comment=comment, field="real", precision=17, symmetry="general")


def read_matrix_market(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def write_vector(path, values) -> None:
    """One value per line, 17 significant digits."""
    np.savetxt(str(path), np.asarray(values, dtype=float).ravel(), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(str(path), dtype=float))
