"""Model Poisson problems with manufactured solutions, and error norms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dictionary import Family

__all__ = [
    "ProblemSpec",
    "problem_1d_multi_arctan",
    "problem_2d_polynomial",
    "get_problem",
    "PROBLEMS",
    "relative_l2_error",
    "sample_grid",
    "exact_on_points",
]

ALPHA = 100.0 * math.pi


@dataclass(frozen=True)
class ProblemSpec:
    """``-Laplace(u) = rhs`` with homogeneous Dirichlet data.

    ``rhs`` and ``exact`` are vectorised callables: ``f(x)`` in 1D and
    ``f(x, y)`` in 2D.
    """

    name: str
    family: Family
    rhs: Callable
    exact: Optional[Callable] = None
    parameters: dict = field(default_factory=dict)

    @property
    def domain(self):
        return (-1.0, 1.0) if self.family is Family.HAT1D else ((0.0, 1.0), (0.0, 1.0))


def problem_1d_multi_arctan(centers: Sequence[float], alpha: float = ALPHA, name: str | None = None) -> ProblemSpec:
    """Sum of arctan fronts with a linear correction that enforces ``u(+-1) = 0``.

    ``u(x) = sum_c arctan(alpha (x - c)) + A x + B`` and the right-hand side is
    the analytic ``-u''``.
    """
    centers = tuple(float(c) for c in centers)
    if any(not -1.0 < c < 1.0 for c in centers):
        raise ValueError("centers must lie in (-1, 1)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in centers:
            out = out + np.arctan(alpha * (x - c))
        return out

    g_left, g_right = float(g(-1.0)), float(g(1.0))
    slope = -(g_right - g_left) / 2.0
    shift = -(g_right + g_left) / 2.0

    def exact(x):
        x = np.asarray(x, dtype=float)
        return g(x) + slope * x + shift

    def rhs(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in centers:
            d = x - c
            out = out + 2.0 * alpha ** 3 * d / (1.0 + (alpha * d) ** 2) ** 2
        return out

    if name is None:
        name = f"arctan{len(centers)}"
    return ProblemSpec(name, Family.HAT1D, rhs, exact, {"alpha": alpha, "centers": centers,
                                                        "slope": slope, "shift": shift})


def problem_2d_polynomial() -> ProblemSpec:
    """``u = 10 x y (x-1)(y-1)`` on the unit square, ``f = -20x(x-1) - 20y(y-1)``."""

    def exact(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return 10.0 * x * y * (x - 1.0) * (y - 1.0)

    def rhs(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return -20.0 * x * (x - 1.0) - 20.0 * y * (y - 1.0)

    return ProblemSpec("poly2d", Family.HAT2D, rhs, exact, {})


def _zero_problem():
    return problem_1d_multi_arctan((), name="zero1d")


PROBLEMS = {
    "arctan4": lambda: problem_1d_multi_arctan((-0.5, 0.0, 0.25, 0.5), name="arctan4"),
    "arctan2": lambda: problem_1d_multi_arctan((0.0, 0.5), name="arctan2"),
    "poly2d": problem_2d_polynomial,
    "zero1d": _zero_problem,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def sample_grid(family: Family, grid_size: int | None = None):
    """Uniform sample points including the boundary.

    Defaults: ``2^12 + 1`` points on ``[-1, 1]``, ``(2^9 + 1)^2`` on the unit square.
    """
    if family is Family.HAT1D:
        n = grid_size or 2 ** 12 + 1
        return np.linspace(-1.0, 1.0, n)
    n = grid_size or 2 ** 9 + 1
    t = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.stack([X, Y], axis=-1)


def relative_l2_error(approx: Callable, exact: Callable, family: Family, grid_size: int | None = None) -> float:
    """Discrete relative l2 error on the interior points of a uniform grid.

    ``approx`` and ``exact`` take the sample array (1D: ``x``; 2D: ``(..., 2)``)
    and return values of matching shape.
    """
    pts = sample_grid(family, grid_size)
    if family is Family.HAT1D:
        pts = pts[1:-1]
    else:
        pts = pts[1:-1, 1:-1]
    ua = np.asarray(approx(pts), dtype=float)
    ue = np.asarray(exact(pts), dtype=float)
    denom = np.linalg.norm(ue.ravel())
    num = np.linalg.norm((ua - ue).ravel())
    if denom == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / denom)


def exact_on_points(problem: ProblemSpec):
    """Adapter so ``problem.exact`` accepts the sample arrays of :func:`sample_grid`."""
    if problem.exact is None:
        raise ValueError(f"problem {problem.name} has no exact solution")
    if problem.family is Family.HAT1D:
        return problem.exact
    return lambda pts: problem.exact(pts[..., 0], pts[..., 1])
