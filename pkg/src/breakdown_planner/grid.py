"""Uniform 2D grids, scalar fields, upwind differences, interpolation and CSV I/O.

Field values are stored as ``values[j, i]``: row ``j`` runs along y, column
``i`` along x. Node ``(i, j)`` sits at ``(xmin + i*dx, ymin + j*dy)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np


class FieldFormatError(ValueError):
    """Raised when a field file does not match its declared header."""


class DomainError(ValueError):
    """Raised when a point lies outside the grid's bounding box."""


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    dx: float
    dy: float
    xmin: float = 0.0
    ymin: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"grid spacings must be positive, got dx={self.dx}, dy={self.dy}")

    @classmethod
    def from_bounds(cls, nx: int, ny: int, bounds: Sequence[float]) -> "Grid2D":
        """Build from ``(xmin, xmax, ymin, ymax)`` with nodes on both ends."""
        xmin, xmax, ymin, ymax = map(float, bounds)
        return cls(nx, ny, (xmax - xmin) / (nx - 1), (ymax - ymin) / (ny - 1), xmin, ymin)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def xmax(self) -> float:
        return self.xmin + (self.nx - 1) * self.dx

    @property
    def ymax(self) -> float:
        return self.ymin + (self.ny - 1) * self.dy

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.xmax - self.xmin, self.ymax - self.ymin))

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.xmin + i * self.dx, self.ymin + j * self.dy)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of node coordinates, each shaped ``(ny, nx)``."""
        x = self.xmin + self.dx * np.arange(self.nx)
        y = self.ymin + self.dy * np.arange(self.ny)
        return np.meshgrid(x, y)

    def contains(self, point) -> bool:
        x, y = point
        eps = 1e-12 * max(1.0, abs(self.xmax), abs(self.ymax))
        return (self.xmin - eps <= x <= self.xmax + eps) and (self.ymin - eps <= y <= self.ymax + eps)

    def snap(self, point) -> tuple[int, int]:
        """Nearest node index to a point inside the domain."""
        if not self.contains(point):
            raise DomainError(f"point {tuple(point)} lies outside the grid")
        i = int(np.clip(np.rint((point[0] - self.xmin) / self.dx), 0, self.nx - 1))
        j = int(np.clip(np.rint((point[1] - self.ymin) / self.dy), 0, self.ny - 1))
        return i, j


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {values.size}")
        values = values.reshape(self.grid.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        X, Y = grid.coords()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    def __getitem__(self, ij):
        i, j = ij
        return self.values[j, i]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass
class NodeSet:
    """Unique in-grid node indices with optional per-node boundary values."""

    grid: Grid2D
    indices: list[tuple[int, int]]
    values: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.indices = [(int(i), int(j)) for i, j in self.indices]
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("node set contains duplicate nodes")
        for i, j in self.indices:
            if not (0 <= i < self.grid.nx and 0 <= j < self.grid.ny):
                raise ValueError(f"node ({i}, {j}) is outside the grid")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
            if self.values.size != len(self.indices):
                raise ValueError("one boundary value per node is required")

    @classmethod
    def from_points(cls, grid: Grid2D, points: Iterable, values=None) -> "NodeSet":
        """Snap coordinates to nodes; points snapping to the same node are merged (first wins)."""
        points = [tuple(map(float, p)) for p in points]
        idx, vals = [], []
        values = None if values is None else list(np.broadcast_to(values, (len(points),)))
        for k, p in enumerate(points):
            ij = grid.snap(p)
            if ij not in idx:
                idx.append(ij)
                if values is not None:
                    vals.append(values[k])
        return cls(grid, idx, None if values is None else np.array(vals))

    def __len__(self) -> int:
        return len(self.indices)

    def flat(self) -> np.ndarray:
        return np.array([j * self.grid.nx + i for i, j in self.indices], dtype=np.int64)

    def points(self) -> np.ndarray:
        return np.array([self.grid.node(i, j) for i, j in self.indices], dtype=np.float64).reshape(-1, 2)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.shape, dtype=bool)
        for i, j in self.indices:
            m[j, i] = True
        return m

    def with_values(self, values) -> "NodeSet":
        return NodeSet(self.grid, list(self.indices), np.broadcast_to(np.asarray(values, float), (len(self),)).copy())


def upwind_diff(field: ScalarField, i: int, j: int, axis: str) -> float:
    """``min{D+u, -D-u, 0}`` along ``axis`` ('x' or 'y'); off-grid neighbors are omitted."""
    u = field.values
    if axis == "x":
        h, n, at = field.grid.dx, field.grid.nx, lambda k: u[j, k]
        k0 = i
    elif axis == "y":
        h, n, at = field.grid.dy, field.grid.ny, lambda k: u[k, i]
        k0 = j
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    centre = at(k0)
    out = 0.0
    if k0 + 1 < n:
        out = min(out, (at(k0 + 1) - centre) / h)
    if k0 - 1 >= 0:
        out = min(out, (at(k0 - 1) - centre) / h)
    return out


def upwind_neighbors(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest x-neighbor and smallest y-neighbor of every node (``inf`` where none)."""
    a = np.full(u.shape, np.inf)
    b = np.full(u.shape, np.inf)
    a[:, 1:] = u[:, :-1]
    a[:, :-1] = np.minimum(a[:, :-1], u[:, 1:])
    b[1:, :] = u[:-1, :]
    b[:-1, :] = np.minimum(b[:-1, :], u[1:, :])
    return a, b


@numba.njit(cache=True, nogil=True)
def _cell(x, y, nx, ny, dx, dy, xmin, ymin):
    s = (x - xmin) / dx
    t = (y - ymin) / dy
    i = min(max(int(np.floor(s)), 0), nx - 2)
    j = min(max(int(np.floor(t)), 0), ny - 2)
    return i, j, s - i, t - j


@numba.njit(cache=True, nogil=True)
def bilinear(vals, x, y, dx, dy, xmin, ymin):
    ny, nx = vals.shape
    i, j, s, t = _cell(x, y, nx, ny, dx, dy, xmin, ymin)
    return ((1 - s) * (1 - t) * vals[j, i] + s * (1 - t) * vals[j, i + 1]
            + (1 - s) * t * vals[j + 1, i] + s * t * vals[j + 1, i + 1])


def node_gradient(field: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Central differences in the interior, one-sided on edges."""
    gy, gx = np.gradient(field.values, field.grid.dy, field.grid.dx)
    return gx, gy


def interp_value(field: ScalarField, point) -> float:
    g = field.grid
    if not g.contains(point):
        raise DomainError(f"point {tuple(point)} lies outside the grid")
    return float(bilinear(field.values, float(point[0]), float(point[1]), g.dx, g.dy, g.xmin, g.ymin))


def interp_gradient(field: ScalarField, point, gradients=None, eps: float = 1e-14):
    """Bilinear blend of node gradients at ``point``.

    Returns ``(gradient, singular)`` where ``singular`` flags a vanishing
    gradient (e.g. at a target). Precomputed ``gradients`` from
    :func:`node_gradient` may be passed to avoid recomputation.
    """
    g = field.grid
    if not g.contains(point):
        raise DomainError(f"point {tuple(point)} lies outside the grid")
    gx, gy = gradients if gradients is not None else node_gradient(field)
    x, y = float(point[0]), float(point[1])
    vec = np.array([bilinear(gx, x, y, g.dx, g.dy, g.xmin, g.ymin),
                    bilinear(gy, x, y, g.dx, g.dy, g.xmin, g.ymin)])
    return vec, bool(np.hypot(*vec) <= eps)


def write_field(field: ScalarField, path) -> None:
    g = field.grid
    lines = [f"{g.nx},{g.ny},{g.dx:.17g},{g.dy:.17g},{g.xmin:.17g},{g.ymin:.17g}"]
    lines += [",".join(f"{v:.17g}" for v in row) for row in field.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    text = Path(path).read_text()
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise FieldFormatError(f"{path}: empty field file")
    head = rows[0].split(",")
    if len(head) != 6:
        raise FieldFormatError(f"{path}:1: header must be nx,ny,dx,dy,xmin,ymin")
    try:
        nx, ny = int(head[0]), int(head[1])
        grid = Grid2D(nx, ny, *map(float, head[2:]))
    except ValueError as exc:
        raise FieldFormatError(f"{path}:1: bad header ({exc})") from exc
    if len(rows) - 1 != ny:
        raise FieldFormatError(f"{path}: header declares {ny} rows, found {len(rows) - 1}")
    values = np.empty(grid.shape)
    for j, line in enumerate(rows[1:]):
        parts = line.split(",")
        if len(parts) != nx:
            raise FieldFormatError(f"{path}:{j + 2}: expected {nx} values, found {len(parts)}")
        try:
            values[j] = [float(p) for p in parts]
        except ValueError as exc:
            raise FieldFormatError(f"{path}:{j + 2}: {exc}") from exc
    return ScalarField(grid, values)
