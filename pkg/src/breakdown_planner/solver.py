"""Coupled two-mode value functions via hybrid value-policy iteration.

Mode 1 (functional) and mode 2 (damaged) satisfy::

    f1 |grad u1| = K1 + lam1 R + phi (u2 - u1),   u1 = 0         on G
    f2 |grad u2| = K2 + lam2 (R + u1 - u2),       u2 = R_D + u1  on D

Value sweeps alternate single-mode causal solves (mode 2, then mode 1).
Periodically the greedy policies are evaluated exactly by one sparse linear
solve, which moves the iterate much further than a sweep does.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import coupled, pessimistic
from .eikonal import update_all
from .grid import Grid2D, NodeSet, ScalarField, node_gradient, upwind_neighbors
from .repair import ConfigurationError, RepairModel, compute_repair

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or {}


class LinearSolveError(RuntimeError):
    pass


@dataclass
class EnvironmentSpec:
    grid: Grid2D
    f1: ScalarField
    f2: ScalarField
    K1: ScalarField
    K2: ScalarField
    lam1: ScalarField
    lam2: ScalarField
    phi: ScalarField
    targets: NodeSet
    depots: NodeSet
    repair: RepairModel | None
    tol: float | None = None
    rho: float = 0.5
    max_outer: int = 100
    max_sweeps: int = 20000
    name: str = "scenario"

    def __post_init__(self):
        if self.tol is None:
            self.tol = 0.5 * (self.grid.dx + self.grid.dy)
        self.validate()

    def validate(self):
        for key in ("f1", "f2", "K1", "K2"):
            vals = getattr(self, key).values
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise ConfigurationError(f"{key} must be finite and strictly positive")
        for key in ("lam1", "lam2", "phi"):
            vals = getattr(self, key).values
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ConfigurationError(f"{key} must be finite and nonnegative")
        if len(self.targets) == 0:
            raise ConfigurationError("at least one target is required")
        needs_depot = np.any(self.phi.values > 0) or np.any(self.lam2.values > 0) or np.any(self.lam1.values > 0)
        if needs_depot and len(self.depots) == 0:
            raise ConfigurationError("depots are required when phi, lam1 or lam2 is nonzero")
        if len(self.depots) and self.repair is None:
            raise ConfigurationError("a repair model is required when depots are present")
        if not (self.tol > 0):
            raise ConfigurationError("tol must be positive")
        if not (0 < self.rho < 1):
            raise ConfigurationError("rho must lie in (0, 1)")
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be a positive integer")

    @property
    def depot_cost(self) -> np.ndarray:
        if self.repair is None:
            return np.zeros(len(self.depots))
        return self.repair.depot_cost

    def with_phi(self, phi: ScalarField) -> "EnvironmentSpec":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw["phi"] = phi
        return EnvironmentSpec(**kw)


@dataclass
class PolicyField:
    grid: Grid2D
    ax: np.ndarray
    ay: np.ndarray
    defined: np.ndarray

    def at(self, i, j):
        if not self.defined[j, i]:
            return None
        return np.array([self.ax[j, i], self.ay[j, i]])


@dataclass
class ValueSolution:
    u1: ScalarField
    u2: ScalarField
    uR: ScalarField
    R: ScalarField
    sweeps: int = 0
    policy_evaluations: int = 0
    d_history: list = field(default_factory=list)
    delta_history: list = field(default_factory=list)
    stall_count: int = 0
    stall_events_total: int = 0
    residual_u1: float = 0.0
    residual_u2: float = 0.0
    converged: bool = True

    @property
    def iterations(self) -> int:
        return self.sweeps

    def diagnostics(self) -> dict:
        return {
            "iterations": self.sweeps,
            "policy_evaluations": self.policy_evaluations,
            "final_d": self.d_history[-1] if self.d_history else 0.0,
            "d_history": list(self.d_history),
            "delta_history": list(self.delta_history),
            "stall_count": self.stall_count,
            "stall_events_total": self.stall_events_total,
            "residual_u1": self.residual_u1,
            "residual_u2": self.residual_u2,
            "converged": self.converged,
        }


def _field(grid, values) -> ScalarField:
    return ScalarField(grid, values)


def repair_fields(env: EnvironmentSpec) -> tuple[ScalarField, ScalarField]:
    if len(env.depots) == 0:
        # mode 2 and total breakdowns are unreachable; R never enters the equations
        zeros = np.zeros(env.grid.shape)
        return _field(env.grid, zeros), _field(env.grid, zeros)
    return compute_repair(env.repair)


def mode1_problem(env: EnvironmentSpec, R: ScalarField, u2: ScalarField) -> coupled.CoupledProblem:
    g = env.grid
    f1 = env.f1.values
    return coupled.CoupledProblem(
        speed=env.f1,
        base_cost=_field(g, (env.K1.values + env.lam1.values * R.values) / f1),
        coupling_rate=_field(g, env.phi.values / f1),
        coupled_value=u2,
        boundary=env.targets.with_values(0.0))


def mode2_problem(env: EnvironmentSpec, R: ScalarField, u1: ScalarField) -> coupled.CoupledProblem:
    g = env.grid
    f2 = env.f2.values
    on_depots = np.array([u1[ij] for ij in env.depots.indices])
    return coupled.CoupledProblem(
        speed=env.f2,
        base_cost=_field(g, env.K2.values / f2),
        coupling_rate=_field(g, env.lam2.values / f2),
        coupled_value=_field(g, u1.values + R.values),
        boundary=env.depots.with_values(env.depot_cost + on_depots))


def value_sweep(u1: ScalarField, u2: ScalarField, env: EnvironmentSpec, R: ScalarField):
    """One sweep: mode 2 from the current ``u1``, then mode 1 from the new ``u2``.

    Returns ``(u1_new, u2_new, d, stalls)`` with ``d`` the max-norm change in u1.
    """
    if len(env.depots) == 0:
        res1 = coupled.march_mode(mode1_problem(env, R, u2))
        new1 = res1.field
        return new1, new1, float(np.max(np.abs(new1.values - u1.values))), res1.stall_count
    res2 = coupled.march_mode(mode2_problem(env, R, u1))
    res1 = coupled.march_mode(mode1_problem(env, R, res2.field))
    d = float(np.max(np.abs(res1.field.values - u1.values)))
    return res1.field, res2.field, d, res1.stall_count + res2.stall_count


def extract_policy(u: ScalarField, method: str = "upwind", eps: float = 1e-14) -> PolicyField:
    """Unit motion direction ``-grad u / |grad u|`` at every node.

    ``method="upwind"`` builds the gradient from the same one-sided
    differences as the marching scheme (each component points at the smaller
    neighbor), so evaluating this policy reproduces ``u`` at a fixed point.
    ``method="central"`` uses centred node gradients.
    """
    g = u.grid
    vals = u.values
    if method == "upwind":
        a, b = upwind_neighbors(vals)
        gx = -np.maximum(vals - a, 0.0) / g.dx
        gy = -np.maximum(vals - b, 0.0) / g.dy
        left = np.zeros(g.shape, dtype=bool)
        left[:, 1:] = vals[:, :-1] <= a[:, 1:]
        down = np.zeros(g.shape, dtype=bool)
        down[1:, :] = vals[:-1, :] <= b[1:, :]
        # gx holds the magnitude of motion along x; sign points at the smaller neighbor
        mx = np.where(left, gx, -gx)
        my = np.where(down, gy, -gy)
    elif method == "central":
        cx, cy = node_gradient(u)
        mx, my = -cx, -cy
    else:
        raise ValueError(f"unknown policy method {method!r}")
    norm = np.hypot(mx, my)
    defined = norm > eps
    safe = np.where(defined, norm, 1.0)
    ax = np.where(defined, mx / safe, 0.0)
    ay = np.where(defined, my / safe, 0.0)
    return PolicyField(g, ax, ay, defined)


def _transport_rows(policy: PolicyField, speed: np.ndarray, rows_mask: np.ndarray, offset: int):
    """COO entries of ``f (a . grad r)`` discretized with direction-upwind differences.

    Returns (rows, cols, vals, diag) where the entries carry the negated
    neighbor weights and ``diag`` the accumulated positive weights.
    """
    g = policy.grid
    nx, ny = g.nx, g.ny
    J, I = np.nonzero(rows_mask)
    p = J * nx + I
    ax = policy.ax[J, I]
    ay = policy.ay[J, I]
    f = speed[J, I]
    sx = np.where(ax > 0, 1, -1)
    sy = np.where(ay > 0, 1, -1)
    okx = (ax != 0) & (I + sx >= 0) & (I + sx < nx)
    oky = (ay != 0) & (J + sy >= 0) & (J + sy < ny)
    wx = np.where(okx, f * np.abs(ax) / g.dx, 0.0)
    wy = np.where(oky, f * np.abs(ay) / g.dy, 0.0)
    rows = np.concatenate([p[okx], p[oky]]) + offset
    cols = np.concatenate([(p + sx)[okx], (p + sy * nx)[oky]]) + offset
    vals = -np.concatenate([wx[okx], wy[oky]])
    diag = np.zeros(g.size)
    diag[p] = wx + wy
    return rows, cols, vals, diag, (wx + wy) > 0


def evaluate_policy(a1: PolicyField, a2: PolicyField, env: EnvironmentSpec, R: ScalarField,
                    u1: ScalarField | None = None, u2: ScalarField | None = None, rtol: float = 1e-10):
    """Exact value ``(r1, r2)`` of a fixed pair of policies (one sparse solve).

    Nodes whose policy is undefined (or points off the grid in every
    component) are pinned to the supplied ``u1``/``u2``.
    """
    g = env.grid
    n = g.size
    G = env.targets.mask()
    D = env.depots.mask()
    R_ = R.values.ravel()

    rows, cols, vals = [], [], []
    diag = np.zeros(2 * n)
    rhs = np.zeros(2 * n)
    pinned = np.zeros(2 * n, dtype=bool)

    modes = [(0, a1, env.f1.values, G, env.phi.values, env.K1.values + env.lam1.values * R.values)]
    if len(env.depots):
        modes.append((1, a2, env.f2.values, D, env.lam2.values, env.K2.values))
    for mode, pol, speed, bmask, coup, cost in modes:
        off = mode * n
        live = pol.defined & ~bmask
        r, c, v, dg, moving = _transport_rows(pol, speed, live, off)
        live_idx = np.flatnonzero(live.ravel())
        moving_idx = live_idx[moving]
        stuck_idx = live_idx[~moving]
        rows.append(r)
        cols.append(c)
        vals.append(v)
        k = coup.ravel()[moving_idx]
        diag[off + moving_idx] = dg[moving_idx] + k
        other = (1 - mode) * n + moving_idx
        rows.append(off + moving_idx)
        cols.append(other)
        vals.append(-k)
        rhs[off + moving_idx] = cost.ravel()[moving_idx]
        if mode == 1:
            rhs[off + moving_idx] += env.lam2.values.ravel()[moving_idx] * R_[moving_idx]
        idle = np.concatenate([stuck_idx, np.flatnonzero((~pol.defined & ~bmask).ravel())])
        pinned[off + idle] = True

    # boundary identities
    gi = env.targets.flat()
    diag[gi] = 1.0
    rhs[gi] = 0.0
    if len(env.depots):
        di = env.depots.flat()
        diag[n + di] = 1.0
        rows.append(n + di)
        cols.append(di)
        vals.append(-np.ones(di.size))
        rhs[n + di] = env.depot_cost
    else:
        # mode 2 unreachable: tie r2 to r1
        idx = np.arange(n)
        diag[n + idx] = 1.0
        rows.append(n + idx)
        cols.append(idx)
        vals.append(-np.ones(n))
        rhs[n + idx] = 0.0

    if pinned.any():
        if u1 is None or u2 is None:
            raise ValueError("current values are required to pin nodes with undefined policy")
        current = np.concatenate([u1.values.ravel(), u2.values.ravel()])
        diag[pinned] = 1.0
        rhs[pinned] = current[pinned]
        keep = [~pinned[r] for r in rows]
        rows = [r[m] for r, m in zip(rows, keep)]
        cols = [c[m] for c, m in zip(cols, keep)]
        vals = [v[m] for v, m in zip(vals, keep)]

    rows.append(np.arange(2 * n))
    cols.append(np.arange(2 * n))
    vals.append(diag)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n))
    try:
        x = spla.spsolve(A, rhs)
    except RuntimeError as exc:  # singular factorization
        raise LinearSolveError(f"{env.name}: policy evaluation failed ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveError(f"{env.name}: policy evaluation produced non-finite values")
    lin_res = np.max(np.abs(A @ x - rhs)) / max(np.max(np.abs(rhs)), 1e-300)
    if lin_res > rtol:
        raise LinearSolveError(f"{env.name}: policy evaluation residual {lin_res:.3e} exceeds {rtol:.1e}")
    return _field(g, x[:n]), _field(g, x[n:])


def pessimistic_start(env: EnvironmentSpec, R: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Overestimates ``(u1, u2)``: worst-case depot values, an Eikonal solve for
    ``u2``, then one mode-1 solve against that ``u2``."""
    if len(env.depots) == 0:
        big = _field(env.grid, np.zeros(env.grid.shape))
        u1 = coupled.solve_mode(mode1_problem(env, R, big))
        return u1, u1
    tpts = env.targets.points()
    u1_hat = []
    for (i, j), rd in zip(env.depots.indices, env.depot_cost):
        x = np.array(env.grid.node(i, j))
        d = float(np.min(np.hypot(*(tpts - x).T)))
        params = pessimistic.worst_case_params(
            env.f1.values, env.f2.values, env.K1.values, env.K2.values, env.lam1.values,
            env.lam2.values, env.phi.values, R.values, env.depot_cost, d)
        u1_hat.append(pessimistic.depot_overestimate(params))
    u2 = pessimistic.initial_u2(env.f2, env.K2, env.lam2, R, env.depots, env.depot_cost, u1_hat)
    u1 = coupled.solve_mode(mode1_problem(env, R, u2))
    return u1, u2


def residuals(env: EnvironmentSpec, R: ScalarField, u1: ScalarField, u2: ScalarField):
    """Per-node fixed-point residuals of both discretized equations, and the stall mask."""
    g = env.grid
    p1 = mode1_problem(env, R, u2)
    upd1, st1 = update_all(u1.values, p1.base_cost.values, p1.coupling_rate.values, u2.values, g.dx, g.dy)
    r1 = np.abs(u1.values - upd1)
    r1[env.targets.mask()] = 0.0
    st1 &= ~env.targets.mask()
    if len(env.depots) == 0:
        return r1, np.zeros_like(r1), st1
    p2 = mode2_problem(env, R, u1)
    upd2, st2 = update_all(u2.values, p2.base_cost.values, p2.coupling_rate.values,
                           p2.coupled_value.values, g.dx, g.dy)
    r2 = np.abs(u2.values - upd2)
    D = env.depots.mask()
    r2[D] = 0.0
    st2 &= ~D
    return r1, r2, st1 | st2


def _impose_boundary(env, u1: ScalarField, u2: ScalarField):
    """Exact boundary identities (the linear solve leaves round-off there)."""
    v1 = u1.values.copy()
    v1[env.targets.mask()] = 0.0
    if len(env.depots) == 0:
        return _field(env.grid, v1), _field(env.grid, v1)
    v2 = u2.values.copy()
    di = env.depots.flat()
    v2.ravel()[di] = env.depot_cost + v1.ravel()[di]
    return _field(env.grid, v1), _field(env.grid, v2)


def _finish(env, R, uR, u1, u2, sol: ValueSolution) -> ValueSolution:
    r1, r2, stalls = residuals(env, R, u1, u2)
    sol.u1, sol.u2 = u1, u2
    sol.residual_u1 = float(r1.max())
    sol.residual_u2 = float(r2.max())
    sol.stall_count = int(stalls.sum())
    return sol


def value_iteration(env: EnvironmentSpec, callback=None) -> ValueSolution:
    """Pure value iteration from the pessimistic start until ``d <= tol``."""
    uR, R = repair_fields(env)
    u1, u2 = pessimistic_start(env, R)
    if callback is not None:
        callback(u1, u2)
    sol = ValueSolution(u1, u2, uR, R)
    d = env.tol + 1.0
    while d > env.tol:
        u1, u2, d, stalls = value_sweep(u1, u2, env, R)
        sol.sweeps += 1
        sol.stall_events_total += stalls
        sol.d_history.append(d)
        if callback is not None:
            callback(u1, u2)
        if sol.sweeps >= env.max_sweeps:
            raise NonConvergenceError(f"{env.name}: value iteration exceeded {env.max_sweeps} sweeps",
                                      {"d_history": sol.d_history})
    return _finish(env, R, uR, u1, u2, sol)


def solve(env: EnvironmentSpec) -> ValueSolution:
    """Hybrid value-policy iteration.

    The inner loop sweeps while the per-sweep change ``d`` exceeds both
    ``rho * delta`` and ``tol``; each outer step then replaces the iterate by
    the exact value of its greedy policies, with ``delta`` the size of that
    jump. Iteration stops once ``d <= tol`` and the returned pair satisfies
    both discretized equations to within ``tol``.
    """
    uR, R = repair_fields(env)
    u1, u2 = pessimistic_start(env, R)
    sol = ValueSolution(u1, u2, uR, R)
    d = env.tol + 1.0
    delta = d
    outer = 0
    while True:
        while d > env.rho * delta and d > env.tol:
            u1, u2, d, stalls = value_sweep(u1, u2, env, R)
            sol.sweeps += 1
            sol.stall_events_total += stalls
            sol.d_history.append(d)
            if sol.sweeps >= env.max_sweeps:
                raise NonConvergenceError(f"{env.name}: exceeded {env.max_sweeps} sweeps",
                                          {"d_history": sol.d_history, "delta_history": sol.delta_history})
        r1, r2 = evaluate_policy(extract_policy(u1), extract_policy(u2), env, R, u1, u2)
        sol.policy_evaluations += 1
        delta = float(np.max(np.abs(u1.values - r1.values)))
        sol.delta_history.append(delta)
        u1, u2 = _impose_boundary(env, r1, r2)
        outer += 1
        log.debug("%s: outer %d, sweeps %d, d=%.3e, delta=%.3e", env.name, outer, sol.sweeps, d, delta)
        if d <= env.tol:
            res1, res2, _ = residuals(env, R, u1, u2)
            worst = max(res1.max(), res2.max())
            if worst <= env.tol:
                break
            # the evaluated pair is not yet a fixed point: keep sweeping from it
            d = worst
        if outer >= env.max_outer:
            raise NonConvergenceError(f"{env.name}: exceeded max_outer={env.max_outer}",
                                      {"d_history": sol.d_history, "delta_history": sol.delta_history})
    return _finish(env, R, uR, u1, u2, sol)
