"""Optimal trajectories and Monte Carlo simulation of the breakdown process.

Motion follows ``y' = f(y) a(y)`` with ``a = -grad u / |grad u|`` taken from
the bilinear blend of node gradients, integrated with the midpoint rule.
Within one capture radius of the active goal set the robot heads straight
for the nearest goal node.

Breakdown clocks are sampled by the time-change method: each clock draws an
Exp(1) threshold and fires when its integrated hazard reaches it; the
crossing point is located by linear interpolation inside the step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import ScalarField, bilinear, node_gradient

CAPTURE, CLOCK_A, CLOCK_B, BUDGET = 0, 1, 2, 3


class RunawayError(RuntimeError):
    """A path exceeded its length budget (typically an unconverged value function)."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


@numba.njit(cache=True, nogil=True)
def _direction(gx, gy, x, y, dx, dy, x0, y0, tx, ty):
    vx = -bilinear(gx, x, y, dx, dy, x0, y0)
    vy = -bilinear(gy, x, y, dx, dy, x0, y0)
    n = math.hypot(vx, vy)
    if n <= 1e-14:
        # singular gradient: head for the nearest goal
        vx, vy = tx - x, ty - y
        n = math.hypot(vx, vy)
        if n == 0.0:
            return 0.0, 0.0
    return vx / n, vy / n


@numba.njit(cache=True, nogil=True)
def _advance(gx, gy, speed, cost, rate_a, rate_b, dx, dy, x0, y0, goals, radius,
             x, y, s, thr_a, thr_b, acc_a, acc_b, h, max_steps, record, bs, bx, by):
    """Move until capture, a clock firing, or the step budget runs out.

    Returns ``(status, x, y, s, running_cost, length, acc_a, acc_b, n_recorded, goal_index)``.
    """
    ny, nx = speed.shape
    x1 = x0 + (nx - 1) * dx
    y1 = y0 + (ny - 1) * dy
    run = 0.0
    dist = 0.0
    nrec = 0
    for _ in range(max_steps):
        best = -1
        bd = np.inf
        for k in range(goals.shape[0]):
            dk = math.hypot(goals[k, 0] - x, goals[k, 1] - y)
            if dk < bd:
                bd = dk
                best = k
        tx, ty = goals[best, 0], goals[best, 1]
        if bd <= 1e-12:
            return CAPTURE, tx, ty, s, run, dist, acc_a, acc_b, nrec, best
        straight = bd <= radius
        if straight:
            ux, uy = (tx - x) / bd, (ty - y) / bd
            fm = bilinear(speed, 0.5 * (x + tx), 0.5 * (y + ty), dx, dy, x0, y0)
            length = min(h * fm, bd)
            dt = length / fm
            nxp = x + length * ux
            nyp = y + length * uy
            if length >= bd:
                nxp, nyp = tx, ty
        else:
            dt = h
            ax, ay = _direction(gx, gy, x, y, dx, dy, x0, y0, tx, ty)
            f0 = bilinear(speed, x, y, dx, dy, x0, y0)
            mx = min(max(x + 0.5 * dt * f0 * ax, x0), x1)
            my = min(max(y + 0.5 * dt * f0 * ay, y0), y1)
            bx_, by_ = _direction(gx, gy, mx, my, dx, dy, x0, y0, tx, ty)
            fm = bilinear(speed, mx, my, dx, dy, x0, y0)
            nxp = min(max(x + dt * fm * bx_, x0), x1)
            nyp = min(max(y + dt * fm * by_, y0), y1)
        mx = 0.5 * (x + nxp)
        my = 0.5 * (y + nyp)
        la = bilinear(rate_a, mx, my, dx, dy, x0, y0) * dt
        lb = bilinear(rate_b, mx, my, dx, dy, x0, y0) * dt
        km = bilinear(cost, mx, my, dx, dy, x0, y0)
        fa = (thr_a - acc_a) / la if la > 0 else np.inf
        fb = (thr_b - acc_b) / lb if lb > 0 else np.inf
        if fa <= 1.0 or fb <= 1.0:
            theta = min(fa, fb)
            theta = max(theta, 0.0)
            dist += theta * math.hypot(nxp - x, nyp - y)
            x = x + theta * (nxp - x)
            y = y + theta * (nyp - y)
            s += theta * dt
            run += km * theta * dt
            if record:
                bs[nrec], bx[nrec], by[nrec] = s, x, y
                nrec += 1
            if fa <= fb:
                return CLOCK_A, x, y, s, run, dist, 0.0, acc_b + theta * lb, nrec, best
            return CLOCK_B, x, y, s, run, dist, acc_a + theta * la, 0.0, nrec, best
        acc_a += la
        acc_b += lb
        dist += math.hypot(nxp - x, nyp - y)
        x, y = nxp, nyp
        s += dt
        run += km * dt
        if record:
            bs[nrec], bx[nrec], by[nrec] = s, x, y
            nrec += 1
        if straight and x == tx and y == ty:
            return CAPTURE, x, y, s, run, dist, acc_a, acc_b, nrec, best
    return BUDGET, x, y, s, run, dist, acc_a, acc_b, nrec, best


@dataclass
class PdmpTrajectory:
    samples: list = field(default_factory=list)   # (s, x, y, mode)
    events: list = field(default_factory=list)    # (s, kind, x, y, cost)
    running_cost: float = 0.0
    total_cost: float = 0.0

    @property
    def arc_length(self) -> float:
        pts = np.array([(x, y) for _, x, y, _ in self.samples]).reshape(-1, 2)
        return float(np.sum(np.hypot(*np.diff(pts, axis=0).T))) if len(pts) > 1 else 0.0

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e[1] == kind)

    def write(self, traj_path, events_path=None):
        with open(traj_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "mode"])
            for s, x, y, m in self.samples:
                w.writerow([f"{s:.17g}", f"{x:.17g}", f"{y:.17g}", m])
        if events_path is not None:
            with open(events_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["s", "kind", "x", "y", "cost"])
                for s, kind, x, y, c in self.events:
                    w.writerow([f"{s:.17g}", kind, f"{x:.17g}", f"{y:.17g}", f"{c:.17g}"])


CHUNK = 65536


def default_step(grid, *speeds) -> float:
    return min(grid.dx, grid.dy) / (2.0 * max(float(np.max(f.values)) for f in speeds))


def max_path_length(grid, *speeds) -> float:
    fmax = max(float(np.max(f.values)) for f in speeds)
    fmin = min(float(np.min(f.values)) for f in speeds)
    return 10.0 * grid.diameter * fmax / fmin


class _Mode:
    def __init__(self, u: ScalarField, speed, cost, rate_a, rate_b, goals):
        gx, gy = node_gradient(u)
        self.gx, self.gy = np.ascontiguousarray(gx), np.ascontiguousarray(gy)
        self.speed = np.ascontiguousarray(speed, dtype=np.float64)
        self.cost = np.ascontiguousarray(cost, dtype=np.float64)
        self.rate_a = np.ascontiguousarray(rate_a, dtype=np.float64)
        self.rate_b = np.ascontiguousarray(rate_b, dtype=np.float64)
        self.goals = np.ascontiguousarray(goals, dtype=np.float64).reshape(-1, 2)


class _Walker:
    """Drives the kernel chunk by chunk and enforces the path-length budget."""

    def __init__(self, grid, h, radius, max_length, record):
        self.grid, self.h, self.radius, self.max_length = grid, h, radius, max_length
        self.record = record
        size = CHUNK if record else 1
        self.buf = np.empty(size), np.empty(size), np.empty(size)
        self.length = 0.0

    def segment(self, m: _Mode, traj, mode, x, y, s, thr_a, thr_b, acc_a, acc_b):
        g = self.grid
        bs, bx, by = self.buf
        steps = CHUNK if self.record else 16 * CHUNK
        while True:
            status, x, y, s, run, dist, acc_a, acc_b, nrec, goal = _advance(
                m.gx, m.gy, m.speed, m.cost, m.rate_a, m.rate_b, g.dx, g.dy, g.xmin, g.ymin, m.goals,
                self.radius, x, y, s, thr_a, thr_b, acc_a, acc_b, self.h, steps, self.record, bs, bx, by)
            traj.running_cost += run
            self.length += dist
            if self.record:
                traj.samples += [(float(bs[k]), float(bx[k]), float(by[k]), mode) for k in range(nrec)]
            if self.length > self.max_length:
                raise RunawayError(f"path exceeded its length budget {self.max_length:.6g}; "
                                   "is the value function converged?", traj)
            if status != BUDGET:
                return status, x, y, s, acc_a, acc_b, goal
            if dist == 0.0:
                raise RunawayError("path stalled (zero speed or trapped at the boundary)", traj)


def trace(u: ScalarField, start, speed: ScalarField, targets, h: float | None = None,
          cost: ScalarField | None = None) -> PdmpTrajectory:
    """Deterministic optimal path from ``start`` by descending ``u``.

    ``targets`` is a NodeSet or an ``(m, 2)`` array of goal points. The
    returned trajectory has no events; ``total_cost`` is the integrated
    running cost (travel time when ``cost`` is omitted). Raises
    ``RunawayError`` carrying the partial path when the length bound
    ``10 * diameter * max f / min f`` is exceeded.
    """
    g = u.grid
    goals = targets.points() if hasattr(targets, "points") else np.asarray(targets, float)
    if not g.contains(start):
        raise ValueError(f"start {tuple(start)} lies outside the grid")
    h = h or default_step(g, speed)
    zeros = np.zeros(g.shape)
    mode = _Mode(u, speed.values, cost.values if cost is not None else np.ones(g.shape), zeros, zeros, goals)
    walker = _Walker(g, h, max(g.dx, g.dy), max_path_length(g, speed), True)
    traj = PdmpTrajectory(samples=[(0.0, float(start[0]), float(start[1]), 1)])
    walker.segment(mode, traj, 1, float(start[0]), float(start[1]), 0.0, np.inf, np.inf, 0.0, 0.0)
    traj.total_cost = traj.running_cost
    return traj


class Simulator:
    """Event-driven simulation of the two-mode breakdown process on solved value functions.

    Mode 1 carries two clocks: total breakdowns at rate ``lam1`` (pay R, stay)
    and partial breakdowns at rate ``phi`` (switch to mode 2). Mode 2 carries
    total breakdowns at ``lam2`` (pay R, back to mode 1) and heads for the
    nearest depot, where it pays ``R_D`` and returns to mode 1.
    """

    def __init__(self, u1: ScalarField, u2: ScalarField, env, R: ScalarField, h: float | None = None):
        g = env.grid
        self.grid, self.env, self.R = g, env, R
        self.h = h or default_step(g, env.f1, env.f2)
        self.radius = max(g.dx, g.dy)
        self.max_length = max_path_length(g, env.f1, env.f2)
        zeros = np.zeros(g.shape)
        self.modes = {
            1: _Mode(u1, env.f1.values, env.K1.values, env.lam1.values, env.phi.values, env.targets.points()),
            2: _Mode(u2, env.f2.values, env.K2.values, env.lam2.values, zeros,
                     env.depots.points() if len(env.depots) else env.targets.points()),
        }
        self.depot_cost = env.depot_cost

    def run(self, start, seed: int, index: int = 0, record: bool = True,
            max_events: int = 100000) -> PdmpTrajectory:
        g = self.grid
        if not g.contains(start):
            raise ValueError(f"start {tuple(start)} lies outside the grid")
        rng = np.random.default_rng([int(seed), int(index)])
        exp = rng.standard_exponential
        traj = PdmpTrajectory()
        x, y, s = float(start[0]), float(start[1]), 0.0
        mode = 1
        thr_a, thr_b, acc_a, acc_b = exp(), exp(), 0.0, 0.0
        if record:
            traj.samples.append((s, x, y, mode))
        walker = _Walker(g, self.h, self.radius, self.max_length, record)
        events_cost = 0.0
        for _ in range(max_events):
            status, x, y, s, acc_a, acc_b, goal = walker.segment(
                self.modes[mode], traj, mode, x, y, s, thr_a, thr_b, acc_a, acc_b)
            if status == CAPTURE and mode == 1:
                traj.events.append((s, "arrival", x, y, 0.0))
                break
            if status == CAPTURE:
                c = float(self.depot_cost[goal]) if len(self.depot_cost) else 0.0
                traj.events.append((s, "depot_repair", x, y, c))
                events_cost += c
                mode = 1
                thr_a, thr_b, acc_a, acc_b = exp(), exp(), 0.0, 0.0
            elif status == CLOCK_A:
                c = float(bilinear(self.R.values, x, y, g.dx, g.dy, g.xmin, g.ymin))
                traj.events.append((s, "total_breakdown", x, y, c))
                events_cost += c
                thr_a = exp()
                if mode == 2:
                    mode = 1
                    thr_b, acc_a, acc_b = exp(), 0.0, 0.0
            else:
                traj.events.append((s, "partial_breakdown", x, y, 0.0))
                mode = 2
                thr_a, thr_b, acc_a, acc_b = exp(), np.inf, 0.0, 0.0
            # the event point is already the last sample
            if record and s > traj.samples[-1][0]:
                traj.samples.append((s, x, y, mode))
        else:
            raise RunawayError(f"simulation run {index} exceeded {max_events} events", traj)
        traj.total_cost = traj.running_cost + events_cost
        return traj

    def monte_carlo(self, start, n_runs: int, seed: int) -> "MonteCarloResult":
        costs = np.empty(n_runs)
        kinds = ("total_breakdown", "partial_breakdown", "depot_repair")
        counts = {k: 0 for k in kinds}
        for k in range(n_runs):
            t = self.run(start, seed, k, record=False)
            costs[k] = t.total_cost
            for kind in kinds:
                counts[kind] += t.count(kind)
        return MonteCarloResult(costs, counts)


@dataclass
class MonteCarloResult:
    costs: np.ndarray
    event_counts: dict

    @property
    def n_runs(self) -> int:
        return int(self.costs.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def std_error(self) -> float:
        if self.costs.size < 2:
            return 0.0
        return float(np.std(self.costs, ddof=1) / math.sqrt(self.costs.size))

    def to_dict(self) -> dict:
        return {
            "runs": self.n_runs,
            "mean": self.mean,
            "std_error": self.std_error,
            "event_counts": dict(self.event_counts),
            "mean_events_per_run": {k: v / self.n_runs for k, v in self.event_counts.items()},
        }


def simulate(u1, u2, env, R, start, seed: int, index: int = 0) -> PdmpTrajectory:
    return Simulator(u1, u2, env, R).run(start, seed, index)


def monte_carlo(u1, u2, env, R, start, n_runs: int, seed: int) -> MonteCarloResult:
    return Simulator(u1, u2, env, R).monte_carlo(start, n_runs, seed)
