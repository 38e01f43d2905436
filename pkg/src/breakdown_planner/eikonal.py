"""Fast Marching solver for ``f |grad u| = K`` with Dirichlet data on a node set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _march
from .grid import NodeSet, ScalarField, upwind_neighbors


class ProblemError(ValueError):
    """Invalid solver input (non-positive speed, empty boundary, ...)."""


@dataclass(frozen=True)
class EikonalProblem:
    speed: ScalarField
    running_cost: ScalarField
    boundary: NodeSet

    def __post_init__(self):
        if np.any(self.speed.values <= 0) or not self.speed.is_finite():
            raise ProblemError("speed must be finite and strictly positive; floor zero speeds at a small f_min")
        if np.any(self.running_cost.values <= 0) or not self.running_cost.is_finite():
            raise ProblemError("running cost must be finite and strictly positive")
        if len(self.boundary) == 0:
            raise ProblemError("boundary node set is empty")
        if self.boundary.values is None:
            raise ProblemError("boundary nodes need values")


@dataclass
class MarchResult:
    field: ScalarField
    order: np.ndarray
    stalled: np.ndarray

    @property
    def stall_count(self) -> int:
        return int(self.stalled.sum())


def local_update(a, b, C, dx, dy) -> float:
    """Single-node update from the smaller x-neighbor ``a`` and y-neighbor ``b``.

    Either neighbor may be ``None``; ``C = K/f`` at the node.
    """
    a = np.inf if a is None else float(a)
    b = np.inf if b is None else float(b)
    return float(_march.eikonal_update(a, b, float(C), float(dx), float(dy)))


def _tie_order(n: int, tie) -> np.ndarray:
    if tie is None:
        return np.arange(n, dtype=np.int64)
    tie = np.asarray(tie, dtype=np.int64)
    if tie.shape != (n,):
        raise ValueError("tie order needs one rank per node")
    return tie


def march(problem: EikonalProblem, tie=None) -> MarchResult:
    grid = problem.speed.grid
    c0 = problem.running_cost.values / problem.speed.values
    zeros = np.zeros(grid.shape)
    u, order, stalled = _march.march(
        np.ascontiguousarray(c0), zeros, zeros, problem.boundary.flat(),
        problem.boundary.values, grid.dx, grid.dy, False, _tie_order(grid.size, tie))
    return MarchResult(ScalarField(grid, u), order, stalled.reshape(grid.shape))


def solve(problem: EikonalProblem, tie=None) -> ScalarField:
    return march(problem, tie).field


def update_all(u: np.ndarray, c0: np.ndarray, beta: np.ndarray, v: np.ndarray, dx: float, dy: float):
    """Vectorized local update of every node from its current neighbors.

    Used to measure fixed-point residuals; ``beta = 0`` gives the Eikonal
    update. Returns ``(updated, stalled_mask)``.
    """
    a, b = upwind_neighbors(u)
    swap = a > b
    lo = np.where(swap, b, a)
    hi = np.where(swap, a, b)
    hlo = np.where(swap, dy, dx)
    hhi = np.where(swap, dx, dy)
    c = c0 + beta * v
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        cm = c - beta * lo
        stalled = cm < 0
        one = lo + hlo * cm / (1.0 + beta * hlo)
        p, q = 1.0 / hlo**2, 1.0 / hhi**2
        d = hi - lo
        A = p + q - beta**2
        B = 2.0 * (beta * cm - d * q)
        C = d * d * q - cm * cm
        sq = np.sqrt(np.maximum(B * B - 4 * A * C, 0.0))
        w = np.where(B > 0, -2 * C / (B + sq), (-B + sq) / (2 * A))
        w = np.maximum(w, d)
        w = np.where(beta > 0, np.minimum(w, cm / np.where(beta > 0, beta, 1.0)), w)
        two = lo + w
    out = np.where(np.isfinite(hi) & (one > hi), two, one)
    out = np.where(stalled, lo, out)
    return out, stalled


def residual(u: ScalarField, problem: EikonalProblem) -> np.ndarray:
    """Per-node ``|u - update(u)|``; zero on boundary nodes."""
    g = u.grid
    c0 = problem.running_cost.values / problem.speed.values
    zeros = np.zeros(g.shape)
    upd, _ = update_all(u.values, c0, zeros, zeros, g.dx, g.dy)
    res = np.abs(u.values - upd)
    res[problem.boundary.mask()] = 0.0
    return res
