"""Guaranteed overestimates used to start the value iterations.

For each depot a worst-case robot drives straight to the nearest target and,
after a partial breakdown, returns to the depot along the same line without
ever leaving the damaged mode. The resulting pair of linear ODEs on the
segment has a closed-form solution for the value at the depot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import eikonal
from .grid import NodeSet, ScalarField


@dataclass(frozen=True)
class WorstCaseParams:
    F1: float       # min mode-1 speed
    F2: float       # min mode-2 speed
    k1: float       # max of K1 + lam1 R
    k2: float       # max of K2 + lam2 R
    phi: float      # max partial breakdown rate
    RD: float       # max depot cost
    d: float        # depot-to-target distance

    def __post_init__(self):
        if not (self.F1 > 0 and self.F2 > 0 and self.k1 > 0 and self.k2 > 0):
            raise ValueError("worst-case speeds and costs must be positive")
        if self.phi < 0 or self.d < 0:
            raise ValueError("worst-case rate and distance must be nonnegative")


def depot_overestimate(p: WorstCaseParams) -> float:
    """Mode-1 value at the depot for the worst-case straight-line problem.

    With ``xi`` the distance travelled from the depot and ``A`` the unknown
    depot value, the damaged value is ``g2 = RD + A + (k2/F2) xi`` and
    ``F1 g1' = -k1 - phi (g2 - g1)``, ``g1(d) = 0``. Requiring ``g1(0) = A``
    gives ``A = B (exp(alpha d) - 1) - m d`` with ``m = k2/F2``,
    ``alpha = phi/F1`` and ``B = m/alpha + k1/phi + RD``.
    """
    if p.d == 0.0:
        return 0.0
    if p.phi == 0.0:
        return p.k1 / p.F1 * p.d
    m = p.k2 / p.F2
    alpha = p.phi / p.F1
    # B * expm1(alpha d) - m d, regrouped so the phi -> 0 limit stays accurate
    x = alpha * p.d
    tail = math.expm1(x) - x
    return (m / alpha) * tail + (p.k1 / p.phi + p.RD) * math.expm1(x)


def worst_case_params(f1, f2, K1, K2, lam1, lam2, phi, R, depot_cost, d) -> WorstCaseParams:
    """Extrema over the whole grid; arguments are arrays (or scalars)."""
    return WorstCaseParams(
        F1=float(np.min(f1)), F2=float(np.min(f2)),
        k1=float(np.max(K1 + lam1 * R)), k2=float(np.max(K2 + lam2 * R)),
        phi=float(np.max(phi)), RD=float(np.max(depot_cost)) if np.size(depot_cost) else 0.0,
        d=float(d))


def initial_u2(f2: ScalarField, K2: ScalarField, lam2: ScalarField, R: ScalarField,
               depots: NodeSet, depot_cost, u1_hat) -> ScalarField:
    """Solve ``f2 |grad u2| = K2 + lam2 R`` with ``u2 = R_D + u1_hat`` on the depots."""
    cost = ScalarField(R.grid, K2.values + lam2.values * R.values)
    values = np.asarray(depot_cost, dtype=float) + np.asarray(u1_hat, dtype=float)
    return eikonal.solve(eikonal.EikonalProblem(f2, cost, depots.with_values(values)))
