from functools import lru_cache

import numpy as np
import pytest

from breakdown_planner import solver
from breakdown_planner.config import ScenarioConfig
from breakdown_planner.grid import Grid2D, NodeSet, ScalarField
from breakdown_planner.repair import RepairModel
from breakdown_planner.solver import EnvironmentSpec

# radially symmetric reference parameter set
EX1 = dict(f1=1.0, f2=0.2, fR=0.1, lam1=0.5, lam2=1.5, phi=5.0)

ACCEPTANCE = {}


def make_env(n=51, f1=1.0, f2=0.2, fR=0.1, K1=1.0, K2=1.0, KR=1.0, lam1=0.0, lam2=0.0, phi=0.0,
             targets=((0.5, 0.5),), depots=((0.5, 0.5),), RF=1.0, RD=0.0, bounds=(0, 1, 0, 1), **kw):
    g = Grid2D.from_bounds(n, n, bounds)

    def fld(v):
        if isinstance(v, ScalarField):
            return v
        return ScalarField(g, np.broadcast_to(np.asarray(v, dtype=float), g.shape).copy())

    G = NodeSet.from_points(g, list(targets))
    D = NodeSet.from_points(g, list(depots))
    rep = RepairModel(fld(fR), fld(KR), D, RD, fld(RF)) if len(D) else None
    return EnvironmentSpec(g, fld(f1), fld(f2), fld(K1), fld(K2), fld(lam1), fld(lam2), fld(phi), G, D, rep, **kw)


@lru_cache(maxsize=None)
def bundled(name, n=None):
    """Environment and hybrid solution of a bundled scenario, shared across test modules."""
    env = ScenarioConfig.load(name).environment(n, n)
    return env, solver.solve(env)


@pytest.fixture
def report():
    def record(number, title, ok, detail=""):
        ACCEPTANCE[number] = (title, bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
