"""Elevation raster -> slope, per-mode speed, roughness and partial-breakdown rate."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import FieldFormatError, Grid2D, ScalarField


class TerrainError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainParams:
    sigma_bar: float = 20.0        # critical slope, degrees
    f_max: float = 200.0           # m/sol
    f_min: float = 1.0             # m/sol
    mode2_derate: float = 2.0      # divides sigma_bar and f_max in mode 2
    window: int = 5                # roughness window, odd node count
    roughness_scale: float = 5000.0

    def __post_init__(self):
        if not (0 < self.f_min < self.f_max):
            raise TerrainError("need 0 < f_min < f_max")
        if self.sigma_bar <= 0:
            raise TerrainError("critical slope must be positive")
        if self.mode2_derate < 1:
            raise TerrainError("mode-2 derating factor must be >= 1")
        if self.window < 3 or self.window % 2 == 0:
            raise TerrainError("roughness window must be odd and >= 3")
        if self.roughness_scale <= 0:
            raise TerrainError("roughness scale must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TerrainParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TerrainError(f"unknown terrain parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def slope_field(elevation: ScalarField) -> ScalarField:
    """Slope angle in degrees, ``atan |grad z|``."""
    g = elevation.grid
    gy, gx = np.gradient(elevation.values, g.dy, g.dx)
    return ScalarField(g, np.degrees(np.arctan(np.hypot(gx, gy))))


def speed_from_slope(sigma: ScalarField, p: TerrainParams, mode: int = 1) -> ScalarField:
    """Linear ramp from ``f_max`` at zero slope to ``f_min`` at the critical slope, flat beyond."""
    if mode not in (1, 2):
        raise ValueError("mode must be 1 or 2")
    s = sigma.values
    if np.any(s < 0):
        raise TerrainError("slope must be nonnegative")
    sbar, fmax = p.sigma_bar, p.f_max
    if mode == 2:
        sbar, fmax = sbar / p.mode2_derate, fmax / p.mode2_derate
    ramp = fmax - (fmax - p.f_min) / sbar * s
    return ScalarField(sigma.grid, np.where(s <= sbar, ramp, p.f_min))


def _plane_residual_rms(x, y, z) -> float:
    M = np.column_stack([np.ones_like(x), x, y])
    coef, *_ = np.linalg.lstsq(M, z, rcond=None)
    r = z - M @ coef
    return float(np.sqrt(np.mean(r * r)))


def roughness_field(elevation: ScalarField, window: int = 5) -> ScalarField:
    """RMS height after removing each window's least-squares plane.

    Windows are ``window x window`` nodes centred on each node and are
    truncated at the grid edge.
    """
    if window < 3 or window % 2 == 0:
        raise TerrainError("roughness window must be odd and >= 3")
    g = elevation.grid
    z = elevation.values
    h = window // 2
    out = np.empty(g.shape)

    if g.ny >= window and g.nx >= window:
        oy, ox = np.mgrid[-h:h + 1, -h:h + 1]
        M = np.column_stack([np.ones(window * window), ox.ravel() * g.dx, oy.ravel() * g.dy])
        resid_op = np.eye(window * window) - M @ np.linalg.pinv(M)
        win = sliding_window_view(z, (window, window)).reshape(g.ny - 2 * h, g.nx - 2 * h, -1)
        res = win @ resid_op.T
        out[h:g.ny - h, h:g.nx - h] = np.sqrt(np.mean(res * res, axis=-1))
    interior = np.zeros(g.shape, dtype=bool)
    interior[h:g.ny - h, h:g.nx - h] = g.ny >= window and g.nx >= window

    X, Y = g.coords()
    for j, i in zip(*np.nonzero(~interior)):
        js, je = max(0, j - h), min(g.ny, j + h + 1)
        is_, ie = max(0, i - h), min(g.nx, i + h + 1)
        out[j, i] = _plane_residual_rms(X[js:je, is_:ie].ravel() - X[j, i], Y[js:je, is_:ie].ravel() - Y[j, i],
                                        z[js:je, is_:ie].ravel())
    return ScalarField(g, out)


def breakdown_rate(rho: ScalarField, scale: float = 5000.0) -> ScalarField:
    if np.any(rho.values < 0):
        raise TerrainError("roughness must be nonnegative")
    return ScalarField(rho.grid, rho.values ** 2 / scale)


def terrain_fields(elevation: ScalarField, p: TerrainParams) -> dict[str, ScalarField]:
    sigma = slope_field(elevation)
    rho = roughness_field(elevation, p.window)
    return {
        "sigma": sigma,
        "f1": speed_from_slope(sigma, p, 1),
        "f2": speed_from_slope(sigma, p, 2),
        "rho": rho,
        "phi": breakdown_rate(rho, p.roughness_scale),
    }


def read_esri_ascii(path) -> ScalarField:
    """Read an ESRI ASCII grid; node ``(i, j)`` is the centre of cell column ``i``, row ``j`` from the south."""
    lines = Path(path).read_text().split("\n")
    header = {}
    k = 0
    while k < len(lines):
        parts = lines[k].split()
        if len(parts) == 2 and parts[0][0].isalpha():
            header[parts[0].lower()] = parts[1]
            k += 1
        elif not parts:
            k += 1
        else:
            break
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell = float(header["cellsize"])
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"{path}: incomplete ESRI ASCII header ({exc})") from exc
    if "xllcenter" in header:
        x0, y0 = float(header["xllcenter"]), float(header["yllcenter"])
    elif "xllcorner" in header:
        x0, y0 = float(header["xllcorner"]) + cell / 2, float(header["yllcorner"]) + cell / 2
    else:
        raise FieldFormatError(f"{path}: missing xllcorner/xllcenter")
    tokens = " ".join(lines[k:]).split()
    if len(tokens) != ncols * nrows:
        raise FieldFormatError(f"{path}: expected {ncols * nrows} values, found {len(tokens)}")
    z = np.array(tokens, dtype=float).reshape(nrows, ncols)[::-1]
    if "nodata_value" in header:
        bad = z == float(header["nodata_value"])
        if bad.any():
            j, i = np.argwhere(bad)[0]
            raise TerrainError(f"{path}: NODATA inside the planning region ({bad.sum()} cells, first at column {i}, "
                               f"row {nrows - 1 - j} from the top)")
    return ScalarField(Grid2D(ncols, nrows, cell, cell, x0, y0), z)


def write_esri_ascii(field: ScalarField, path, nodata: float = -9999.0) -> None:
    g = field.grid
    if abs(g.dx - g.dy) > 1e-12 * g.dx:
        raise TerrainError("ESRI ASCII grids need square cells")
    head = [f"ncols {g.nx}", f"nrows {g.ny}", f"xllcenter {g.xmin:.17g}", f"yllcenter {g.ymin:.17g}",
            f"cellsize {g.dx:.17g}", f"NODATA_value {nodata:g}"]
    rows = [" ".join(f"{v:.10g}" for v in row) for row in field.values[::-1]]
    Path(path).write_text("\n".join(head + rows) + "\n")


def synthetic_crater(n: int = 101, cell: float = 20.0, seed: int = 7) -> ScalarField:
    """Deterministic stand-in DEM: a rimmed crater with patches of rough ground.

    Elevations are in meters on an ``n x n`` grid with ``cell`` meter spacing.
    """
    from scipy.ndimage import gaussian_filter

    g = Grid2D(n, n, cell, cell, 0.0, 0.0)
    X, Y = g.coords()
    L = (n - 1) * cell
    r = np.hypot(X - 0.55 * L, Y - 0.55 * L)
    r0, w = 0.3 * L, 0.06 * L
    z = 90.0 * np.exp(-((r - r0) / w) ** 2) - 140.0 / (1.0 + np.exp((r - 0.85 * r0) / (0.05 * L)))
    z += 25.0 * np.sin(X / L * 3.0) * np.cos(Y / L * 2.0)
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.standard_normal(g.shape), 1.5)
    noise /= noise.std()
    patches = (np.exp(-((X - 0.3 * L) ** 2 + (Y - 0.7 * L) ** 2) / (2 * (0.12 * L) ** 2))
               + np.exp(-((X - 0.75 * L) ** 2 + (Y - 0.25 * L) ** 2) / (2 * (0.1 * L) ** 2)))
    z += (1.0 + 12.0 * patches) * noise
    return ScalarField(g, z)
