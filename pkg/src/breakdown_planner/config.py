"""JSON scenario files: loading, schema validation and conversion to an environment.

Coefficients may be a number (broadcast to the grid), a path to a CSV field
file relative to the config, or a Gaussian-blob description::

    {"base": 0.2, "blobs": [{"center": [0.5, 0.5], "sigma": 0.08, "amplitude": 8}]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .grid import FieldFormatError, Grid2D, NodeSet, ScalarField, read_field
from .repair import ConfigurationError, RepairModel
from .solver import EnvironmentSpec

DEFAULTS = {"K1": 1.0, "K2": 1.0, "KR": 1.0, "lam1": 0.0, "lam2": 0.0, "phi": 0.0}


class ConfigError(ConfigurationError):
    """Invalid scenario file; ``line`` points into the JSON text when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


def _schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenarios/scenario.schema.json").read_text())


def bundled_scenarios() -> list[str]:
    root = resources.files(__package__).joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json") and not p.name.endswith(".schema.json"))


def _locate(text: str, keys) -> int | None:
    """Line number of the innermost key of ``keys`` found by a forward scan."""
    pos, line = 0, None
    for key in keys:
        if isinstance(key, int):
            continue
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            break
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def resolve_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if not p.suffix and name_or_path in bundled_scenarios():
        return Path(str(resources.files(__package__).joinpath(f"scenarios/{name_or_path}.json")))
    raise FileNotFoundError(f"no such config file or bundled scenario: {name_or_path}")


@dataclass
class ScenarioConfig:
    data: dict
    text: str
    path: Path | None = None

    @classmethod
    def load(cls, name_or_path) -> "ScenarioConfig":
        path = resolve_path(name_or_path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config ({exc})", path) from exc
        return cls.from_text(text, path)

    @classmethod
    def from_text(cls, text: str, path=None) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, path, exc.lineno) from exc
        cfg = cls(data, text, Path(path) if path else None)
        cfg.validate_schema()
        return cfg

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ScenarioConfig":
        text = json.dumps(data, indent=2)
        cfg = cls(data, text, Path(base_dir) / "inline.json" if base_dir else None)
        cfg.validate_schema()
        return cfg

    def error(self, message, keys=()) -> ConfigError:
        return ConfigError(message, self.path, _locate(self.text, keys) if keys else None)

    def validate_schema(self):
        validator = jsonschema.Draft202012Validator(_schema())
        errors = sorted(validator.iter_errors(self.data), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            where = "/".join(str(k) for k in err.absolute_path) or "<root>"
            raise self.error(f"{where}: {err.message}", list(err.absolute_path))

    @property
    def name(self) -> str:
        if "name" in self.data:
            return self.data["name"]
        return self.path.stem if self.path else "scenario"

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def grid(self, nx=None, ny=None) -> Grid2D:
        g = self.data["grid"]
        xmin, xmax, ymin, ymax = g["bounds"]
        if not (xmax > xmin and ymax > ymin):
            raise self.error("grid bounds must be increasing (xmin, xmax, ymin, ymax)", ["grid", "bounds"])
        return Grid2D.from_bounds(nx or g["nx"], ny or g["ny"], g["bounds"])

    def coefficient(self, entry, grid: Grid2D, keys) -> ScalarField:
        if isinstance(entry, (int, float)):
            return ScalarField.constant(grid, float(entry))
        if isinstance(entry, str):
            base = self.path.parent if self.path else Path.cwd()
            try:
                fld = read_field(base / entry)
            except (OSError, FieldFormatError) as exc:
                raise self.error(f"cannot load field file {entry!r}: {exc}", keys) from exc
            fg = fld.grid
            if (fg.nx, fg.ny) != (grid.nx, grid.ny) or not np.allclose(
                    [fg.dx, fg.dy, fg.xmin, fg.ymin], [grid.dx, grid.dy, grid.xmin, grid.ymin], rtol=1e-9, atol=1e-12):
                raise self.error(f"field file {entry!r} does not match the scenario grid", keys)
            return fld
        X, Y = grid.coords()
        vals = np.full(grid.shape, float(entry.get("base", 0.0)))
        for blob in entry["blobs"]:
            cx, cy = blob["center"]
            vals += blob["amplitude"] * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * blob["sigma"] ** 2))
        return ScalarField(grid, vals)

    def environment(self, nx=None, ny=None, **overrides) -> EnvironmentSpec:
        """Build the solver environment; ``overrides`` replace coefficient entries."""
        d = self.data
        grid = self.grid(nx, ny)
        coeffs = {**DEFAULTS, **d["coefficients"], **overrides}
        f = {k: self.coefficient(v, grid, ["coefficients", k]) for k, v in coeffs.items()}
        for k in ("targets", "depots"):
            for p in d.get(k, []):
                if not grid.contains(p):
                    raise self.error(f"{k[:-1]} {p} lies outside the grid", [k])
        targets = NodeSet.from_points(grid, d["targets"])
        depots = NodeSet.from_points(grid, d.get("depots", []))
        repair = None
        if len(depots):
            if "fR" not in coeffs:
                raise self.error("coefficients/fR is required when depots are given", ["coefficients"])
            rd = np.asarray(d.get("R_D", 0.0), dtype=float)
            if rd.ndim and rd.size != len(d["depots"]):
                raise self.error("R_D needs one value per depot", ["R_D"])
            rd = np.broadcast_to(rd, (len(d["depots"]),))
            # merged duplicates keep the first depot's cost
            keep = []
            seen = set()
            for k, p in enumerate(d["depots"]):
                ij = grid.snap(p)
                if ij not in seen:
                    seen.add(ij)
                    keep.append(rd[k])
            rf = self.coefficient(d.get("R_F", 1.0), grid, ["R_F"])
            try:
                repair = RepairModel(f["fR"], f["KR"], depots, np.array(keep), rf)
            except ConfigurationError as exc:
                raise self.error(str(exc), ["R_D"]) from exc
        s = d.get("solver", {})
        try:
            return EnvironmentSpec(
                grid, f["f1"], f["f2"], f["K1"], f["K2"], f["lam1"], f["lam2"], f["phi"],
                targets, depots, repair, tol=s.get("tol"), rho=s.get("rho", 0.5),
                max_outer=s.get("max_outer", 100), max_sweeps=s.get("max_sweeps", 20000), name=self.name)
        except ConfigurationError as exc:
            msg = str(exc)
            lines = [_locate(self.text, [k]) for k in
                     ("depots", "targets", "f1", "f2", "K1", "K2", "lam1", "lam2", "phi", "solver") if k in msg]
            line = next((ln for ln in lines if ln), None)
            raise ConfigError(msg, self.path, line) from exc
