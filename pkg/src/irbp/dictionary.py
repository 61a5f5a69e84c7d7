"""Hierarchical hat-function dictionaries and their refinement trees.

Two families are provided:

* ``HAT1D`` -- scaled hats ``phi_{k,l}(x) = 2^{-k/2} phi(2^{k-1}(x+1) - l)`` on
  ``(-1, 1)``, ``l = 1, ..., 2^k - 1``.
* ``HAT2D`` -- piecewise linear hats on the uniform triangulation of the
  unit square whose squares are split along the ``(1, 1)`` diagonal, centred
  at ``(p, q) * 2^{-j}`` and scaled by ``1/2``.

Both scalings make the Dirichlet-Laplacian stiffness diagonal equal to one.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

__all__ = [
    "Family",
    "BasisId",
    "IndexSet",
    "RefinementTree",
    "DomainError",
    "CapacityError",
    "eval_basis",
    "refine",
    "tree_closure",
    "count_basis",
    "level_ids",
    "ids_through_level",
    "dense_index",
    "support_box",
]


class DomainError(ValueError):
    """Evaluation point outside the problem domain."""


class CapacityError(ValueError):
    """Refinement requested beyond the configured maximum level."""


class Family(str, enum.Enum):
    HAT1D = "hat1d"
    HAT2D = "hat2d"


Position = Union[int, tuple]


@dataclass(frozen=True, order=True)
class BasisId:
    """Address ``(level, position)`` of one hierarchical basis function.

    The dataclass ordering (family, level, position) is the level-major total
    order used for dense indexing. For ``HAT2D`` the position is the lattice
    pair ``(p, q)`` with centre ``(p 2^{-j}, q 2^{-j})``.
    """

    family: Family
    level: int
    position: Position

    def __post_init__(self):
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")
        top = 2 ** self.level - 1
        if self.family is Family.HAT1D:
            if not isinstance(self.position, (int, np.integer)) or not 1 <= self.position <= top:
                raise ValueError(f"1D position {self.position!r} outside [1, {top}] at level {self.level}")
            object.__setattr__(self, "position", int(self.position))
        else:
            p, q = self.position
            if not (1 <= p <= top and 1 <= q <= top):
                raise ValueError(f"2D position {self.position!r} outside [1, {top}]^2 at level {self.level}")
            object.__setattr__(self, "position", (int(p), int(q)))

    @property
    def center(self):
        h = 2.0 ** (1 - self.level) if self.family is Family.HAT1D else 2.0 ** -self.level
        if self.family is Family.HAT1D:
            return -1.0 + self.position * h
        p, q = self.position
        return (p * h, q * h)

    @property
    def mesh_width(self) -> float:
        """Half-width of the support (grid spacing at this level)."""
        if self.family is Family.HAT1D:
            return 2.0 ** (1 - self.level)
        return 2.0 ** -self.level

    def __str__(self):
        if self.family is Family.HAT1D:
            return f"({self.level},{self.position})"
        return f"({self.level},{self.position[0]},{self.position[1]})"

    @classmethod
    def parse(cls, family: Family, text: str) -> "BasisId":
        parts = [int(t) for t in text.strip().strip("()").split(",")]
        if family is Family.HAT1D:
            return cls(family, parts[0], parts[1])
        return cls(family, parts[0], (parts[1], parts[2]))


def hat1d(level: int, position: int) -> BasisId:
    return BasisId(Family.HAT1D, level, position)


def hat2d(level: int, p: int, q: int) -> BasisId:
    return BasisId(Family.HAT2D, level, (p, q))


class IndexSet(Sequence):
    """Sorted, duplicate-free collection of :class:`BasisId` with a role tag.

    Role tags follow the refinement bookkeeping: ``T``, ``S``, ``C``, ``R``,
    ``Chat`` and ``Rhat``.
    """

    __slots__ = ("_ids", "_members", "role")

    def __init__(self, ids: Iterable[BasisId] = (), role: str = "S"):
        self._members = frozenset(ids)
        self._ids = tuple(sorted(self._members))
        self.role = role

    def __getitem__(self, i):
        return self._ids[i]

    def __len__(self):
        return len(self._ids)

    def __iter__(self) -> Iterator[BasisId]:
        return iter(self._ids)

    def __contains__(self, item):
        return item in self._members

    def __eq__(self, other):
        if isinstance(other, IndexSet):
            return self._ids == other._ids
        return NotImplemented

    def __hash__(self):
        return hash(self._ids)

    def __repr__(self):
        return f"IndexSet(role={self.role!r}, n={len(self)})"

    @property
    def ids(self) -> tuple:
        return self._ids

    def union(self, other: Iterable[BasisId], role: str | None = None) -> "IndexSet":
        return IndexSet(itertools.chain(self._ids, other), role or self.role)

    def difference(self, other: Iterable[BasisId], role: str | None = None) -> "IndexSet":
        drop = other._members if isinstance(other, IndexSet) else set(other)
        return IndexSet((i for i in self._ids if i not in drop), role or self.role)

    def intersection(self, other: Iterable[BasisId], role: str | None = None) -> "IndexSet":
        keep = other._members if isinstance(other, IndexSet) else set(other)
        return IndexSet((i for i in self._ids if i in keep), role or self.role)

    def with_role(self, role: str) -> "IndexSet":
        out = IndexSet.__new__(IndexSet)
        out._ids, out._members, out.role = self._ids, self._members, role
        return out

    def index_map(self) -> dict:
        return {b: i for i, b in enumerate(self._ids)}


# --------------------------------------------------------------------------
# counting and enumeration


def count_basis(family: Family, level: int) -> int:
    """1D: cumulative count through ``level``; 2D: count on ``level`` alone."""
    if level < 1:
        raise ValueError("level must be >= 1")
    if family is Family.HAT1D:
        return 2 ** (level + 1) - (level + 2)
    return (2 ** level - 1) ** 2


def level_ids(family: Family, level: int) -> list:
    top = 2 ** level - 1
    if family is Family.HAT1D:
        return [BasisId(family, level, l) for l in range(1, top + 1)]
    return [BasisId(family, level, (p, q)) for p in range(1, top + 1) for q in range(1, top + 1)]


def ids_through_level(family: Family, level: int, role: str = "S") -> IndexSet:
    return IndexSet(itertools.chain.from_iterable(level_ids(family, k) for k in range(1, level + 1)), role)


def dense_index(bid: BasisId) -> int:
    """Level-major dense integer index of ``bid`` (0-based)."""
    k = bid.level
    if bid.family is Family.HAT1D:
        return 2 ** k - (k + 1) + bid.position - 1
    offset = sum((2 ** i - 1) ** 2 for i in range(1, k))
    p, q = bid.position
    return offset + (p - 1) * (2 ** k - 1) + (q - 1)


def support_box(bid: BasisId):
    """Closed bounding box of the support: ``(lo, hi)`` in 1D, ``(x0, x1, y0, y1)`` in 2D."""
    h = bid.mesh_width
    if bid.family is Family.HAT1D:
        c = bid.center
        return (c - h, c + h)
    a, b = bid.center
    return (a - h, a + h, b - h, b + h)


# --------------------------------------------------------------------------
# evaluation


def _hat1d_values(level, position, x):
    s = 2.0 ** (level - 1) * (x + 1.0) - position
    return 2.0 ** (-level / 2) * np.maximum(0.0, 1.0 - np.abs(s))


def _hat2d_values(level, p, q, x, y):
    n = 2.0 ** level
    s = n * x - p
    t = n * y - q
    m = np.maximum(np.maximum(np.abs(s), np.abs(t)), np.abs(s - t))
    return 0.5 * np.maximum(0.0, 1.0 - m)


def eval_basis(bid: BasisId, point, *, check: bool = True):
    """Value of the basis function ``bid`` at ``point``.

    ``point`` may be a scalar / array (1D) or a pair / ``(..., 2)`` array (2D).
    Points outside the closed domain raise :class:`DomainError`.
    """
    if bid.family is Family.HAT1D:
        x = np.asarray(point, dtype=float)
        if check and (np.any(x < -1.0) or np.any(x > 1.0)):
            raise DomainError(f"point {point!r} outside [-1, 1]")
        val = _hat1d_values(bid.level, bid.position, x)
    else:
        pts = np.asarray(point, dtype=float)
        if pts.shape[-1] != 2:
            raise DomainError("2D evaluation needs (x, y) pairs")
        if check and (np.any(pts < 0.0) or np.any(pts > 1.0)):
            raise DomainError(f"point {point!r} outside [0, 1]^2")
        p, q = bid.position
        val = _hat2d_values(bid.level, p, q, pts[..., 0], pts[..., 1])
    return float(val) if np.ndim(val) == 0 else val


# --------------------------------------------------------------------------
# refinement tree


class RefinementTree:
    """Parent/child relation of a hierarchical dictionary.

    1D children of ``(k, l)`` are ``(k+1, 2l-1), (k+1, 2l), (k+1, 2l+1)``.
    2D children of ``(j, (p, q))`` are the level ``j+1`` lattice nodes whose
    centres lie in the closed support square of the parent; sibling sets of
    neighbouring parents overlap. Every parent of a shared child is recorded.
    """

    def __init__(self, family: Family, max_level: int | None = None):
        self.family = Family(family)
        if max_level is None:
            max_level = 20 if self.family is Family.HAT1D else 10
        self.max_level = max_level

    def __repr__(self):
        return f"RefinementTree({self.family.value}, max_level={self.max_level})"

    def _check(self, bid: BasisId):
        if bid.family is not self.family:
            raise ValueError(f"{bid} does not belong to {self.family.value}")
        if bid.level > self.max_level:
            raise CapacityError(f"{bid} is beyond max level {self.max_level}")

    @property
    def root(self) -> BasisId:
        return BasisId(self.family, 1, 1 if self.family is Family.HAT1D else (1, 1))

    def children(self, bid: BasisId) -> tuple:
        self._check(bid)
        if bid.level >= self.max_level:
            raise CapacityError(f"cannot refine {bid}: already at max level {self.max_level}")
        return _children(bid)

    def parents(self, bid: BasisId) -> tuple:
        self._check(bid)
        return _parents(bid)

    def ancestors(self, bid: BasisId, include_self: bool = False) -> IndexSet:
        return tree_closure(bid, self, include_self=include_self)


@lru_cache(maxsize=None)
def _children(bid: BasisId) -> tuple:
    k = bid.level + 1
    top = 2 ** k - 1
    if bid.family is Family.HAT1D:
        l = bid.position
        return tuple(BasisId(bid.family, k, m) for m in (2 * l - 1, 2 * l, 2 * l + 1))
    p, q = bid.position
    out = []
    for P in range(max(1, 2 * p - 2), min(top, 2 * p + 2) + 1):
        for Q in range(max(1, 2 * q - 2), min(top, 2 * q + 2) + 1):
            out.append(BasisId(bid.family, k, (P, Q)))
    return tuple(out)


@lru_cache(maxsize=None)
def _parents(bid: BasisId) -> tuple:
    if bid.level == 1:
        return ()
    k = bid.level - 1
    top = 2 ** k - 1
    if bid.family is Family.HAT1D:
        m = bid.position
        cand = {m // 2} if m % 2 == 0 else {(m - 1) // 2, (m + 1) // 2}
        return tuple(BasisId(bid.family, k, l) for l in sorted(cand) if 1 <= l <= top)

    def span(P):
        # parents p with 2p-2 <= P <= 2p+2
        return range(max(1, -(-(P - 2) // 2)), min(top, (P + 2) // 2) + 1)

    P, Q = bid.position
    return tuple(BasisId(bid.family, k, (p, q)) for p in span(P) for q in span(Q))


def refine(ids: Iterable[BasisId], tree: RefinementTree, role: str = "S") -> IndexSet:
    """``Ref(S)``: union of the children of every member of ``ids``."""
    out = set()
    for bid in ids:
        out.update(tree.children(bid))
    return IndexSet(out, role)


def tree_closure(bid: BasisId, tree: RefinementTree, include_self: bool = False) -> IndexSet:
    """All ancestors of ``bid`` up to the root (every parent is followed)."""
    seen = set()
    frontier = [bid]
    while frontier:
        nxt = []
        for b in frontier:
            for p in tree.parents(b):
                if p not in seen:
                    seen.add(p)
                    nxt.append(p)
        frontier = nxt
    if include_self:
        seen.add(bid)
    return IndexSet(seen, "T")
