"""Single-mode causal solver for the randomly-terminated equations.

One mode's equation is solved with the other mode's value frozen::

    |upwind grad u| = C0 + beta * (v - u)

Mode 1 uses ``C0 = (K1 + lam1 R)/f1``, ``beta = phi/f1``, ``v = u2``; mode 2
uses ``C0 = K2/f2``, ``beta = lam2/f2``, ``v = u1 + R``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _march
from .eikonal import MarchResult, ProblemError, _tie_order, update_all
from .grid import NodeSet, ScalarField


@dataclass(frozen=True)
class CoupledProblem:
    speed: ScalarField
    base_cost: ScalarField
    coupling_rate: ScalarField
    coupled_value: ScalarField
    boundary: NodeSet

    def __post_init__(self):
        if np.any(self.base_cost.values <= 0):
            raise ProblemError("base cost C0 must be strictly positive")
        if np.any(self.coupling_rate.values < 0):
            raise ProblemError("coupling rate must be nonnegative")
        if not self.coupled_value.is_finite():
            raise ProblemError("coupled value must be finite")
        if len(self.boundary) == 0 or self.boundary.values is None:
            raise ProblemError("boundary needs at least one node with a value")


def local_update_coupled(a, b, C0, beta, v, dx, dy) -> tuple[float, bool]:
    """Single-node update; returns ``(u, stalled)``."""
    a = np.inf if a is None else float(a)
    b = np.inf if b is None else float(b)
    u, st = _march.coupled_update(a, b, float(C0), float(beta), float(v), float(dx), float(dy))
    return float(u), bool(st)


def march_mode(problem: CoupledProblem, tie=None) -> MarchResult:
    g = problem.base_cost.grid
    u, order, stalled = _march.march(
        np.ascontiguousarray(problem.base_cost.values),
        np.ascontiguousarray(problem.coupling_rate.values),
        np.ascontiguousarray(problem.coupled_value.values),
        problem.boundary.flat(), problem.boundary.values, g.dx, g.dy, True, _tie_order(g.size, tie))
    return MarchResult(ScalarField(g, u), order, stalled.reshape(g.shape))


def solve_mode(problem: CoupledProblem, tie=None) -> ScalarField:
    return march_mode(problem, tie).field


def residual(u: ScalarField, problem: CoupledProblem) -> np.ndarray:
    g = u.grid
    upd, _ = update_all(u.values, problem.base_cost.values, problem.coupling_rate.values,
                        problem.coupled_value.values, g.dx, g.dy)
    res = np.abs(u.values - upd)
    res[problem.boundary.mask()] = 0.0
    return res
