"""In-place repair cost: repair-vehicle travel cost from the nearest depot plus a local fee."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import eikonal
from .grid import NodeSet, ScalarField


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RepairModel:
    speed: ScalarField          # f_R
    running_cost: ScalarField   # K_R
    depots: NodeSet
    depot_cost: np.ndarray      # R_D, one per depot
    location_cost: ScalarField  # R_F

    def __post_init__(self):
        rd = np.broadcast_to(np.asarray(self.depot_cost, dtype=float), (len(self.depots),)).copy()
        object.__setattr__(self, "depot_cost", rd)
        if np.any(self.speed.values <= 0) or np.any(self.running_cost.values <= 0):
            raise ConfigurationError("repair vehicle speed f_R and cost K_R must be strictly positive")
        if np.any(rd < 0):
            raise ConfigurationError("depot costs R_D must be nonnegative")
        if np.any(self.location_cost.values < 0):
            raise ConfigurationError("location repair cost R_F must be nonnegative")


def compute_repair(model: RepairModel) -> tuple[ScalarField, ScalarField]:
    """Return ``(u_R, R)`` with ``R = u_R + R_F``."""
    if len(model.depots) == 0:
        raise ConfigurationError("repair model needs at least one depot")
    problem = eikonal.EikonalProblem(model.speed, model.running_cost,
                                     model.depots.with_values(model.depot_cost))
    u_r = eikonal.solve(problem)
    return u_r, ScalarField(u_r.grid, u_r.values + model.location_cost.values)
