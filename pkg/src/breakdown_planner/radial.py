"""Reference solution for a single coincident target/depot with constant coefficients.

Both modes then move radially inward, so the value functions solve a pair of
linear ODEs in the distance ``r`` to the target. This module integrates them
with classical RK4 on a fine uniform mesh and shares no code with the grid
solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RadialParams:
    f1: float
    f2: float
    fR: float
    K1: float = 1.0
    K2: float = 1.0
    KR: float = 1.0
    lam1: float = 0.0
    lam2: float = 0.0
    phi: float = 0.0
    RF: float = 1.0
    RD: float = 0.0
    r_max: float = 1.0

    def __post_init__(self):
        if min(self.f1, self.f2, self.fR, self.K1, self.K2, self.KR) <= 0:
            raise ValueError("speeds and running costs must be positive")
        if min(self.lam1, self.lam2, self.phi) < 0:
            raise ValueError("rates must be nonnegative")


def _rhs(r, u1, u2, p: RadialParams):
    R = p.KR / p.fR * r + p.RF
    return ((p.K1 + p.lam1 * R + p.phi * (u2 - u1)) / p.f1,
            (p.K2 + p.lam2 * (R + u1 - u2)) / p.f2)


def integrate(p: RadialParams, step: float = 1e-5):
    """RK4 from ``r = 0``; returns mesh radii, ``u1`` and ``u2`` arrays."""
    n = max(1, math.ceil(p.r_max / step))
    h = p.r_max / n
    r = np.empty(n + 1)
    u1 = np.empty(n + 1)
    u2 = np.empty(n + 1)
    a, b = 0.0, p.RD
    r[0], u1[0], u2[0] = 0.0, a, b
    for k in range(n):
        x = k * h
        k1 = _rhs(x, a, b, p)
        k2 = _rhs(x + h / 2, a + h / 2 * k1[0], b + h / 2 * k1[1], p)
        k3 = _rhs(x + h / 2, a + h / 2 * k2[0], b + h / 2 * k2[1], p)
        k4 = _rhs(x + h, a + h * k3[0], b + h * k3[1], p)
        a += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r[k + 1], u1[k + 1], u2[k + 1] = (k + 1) * h, a, b
    return r, u1, u2


def reference(p: RadialParams, radii, step: float = 1e-5, mesh=None):
    """``(u1(r), u2(r))`` at the requested radii.

    Between mesh points values are cubic Hermite interpolants built from the
    ODE right-hand side, whose error is far below the RK4 error. ``mesh`` may
    pass a previous ``integrate(p, step)`` result to skip re-integration.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 0) or np.any(radii > p.r_max * (1 + 1e-12)):
        raise ValueError("radii must lie in [0, r_max]")
    r, u1, u2 = mesh if mesh is not None else integrate(p, step)
    h = r[1] - r[0]
    d1, d2 = _rhs(r, u1, u2, p)
    k = np.clip(np.floor(radii / h).astype(int), 0, r.size - 2)
    t = (radii - r[k]) / h
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2

    def herm(u, du):
        return h00 * u[k] + h10 * h * du[k] + h01 * u[k + 1] + h11 * h * du[k + 1]

    return herm(u1, d1), herm(u2, d2)
