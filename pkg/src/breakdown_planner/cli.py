"""Command-line interface: solve scenarios, trace and simulate trajectories,
run convergence studies and preprocess terrain. All outputs are CSV or JSON.

Exit codes: 0 success, 2 invalid configuration or input, 3 non-convergence,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import radial, solver, terrain, trace
from .config import ConfigError, ScenarioConfig
from .eikonal import ProblemError
from .grid import FieldFormatError, ScalarField, read_field, write_field
from .repair import ConfigurationError

log = logging.getLogger("breakdown_planner")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_IO = 0, 2, 3, 4


def thread_cap() -> int:
    raw = os.environ.get("BREAKDOWN_PLANNER_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"BREAKDOWN_PLANNER_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _point(text: str):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y but got {text!r}")
    return x, y


def _int_list(text: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 3:
        raise argparse.ArgumentTypeError("grid sizes must be integers >= 3")
    return vals


def write_policy(policy: solver.PolicyField, path: Path):
    g = policy.grid
    X, Y = g.coords()
    J, I = np.mgrid[0:g.ny, 0:g.nx]
    table = np.column_stack([I.ravel(), J.ravel(), X.ravel(), Y.ravel(),
                             policy.ax.ravel(), policy.ay.ravel(), policy.defined.ravel()])
    np.savetxt(path, table, delimiter=",", header="i,j,x,y,ax,ay,defined", comments="",
               fmt=["%d", "%d", "%.17g", "%.17g", "%.17g", "%.17g", "%d"])


def write_solution(sol: solver.ValueSolution, env: solver.EnvironmentSpec, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for name in ("u1", "u2", "uR", "R"):
        write_field(getattr(sol, name), out / f"{name}.csv")
    write_policy(solver.extract_policy(sol.u1), out / "policy1.csv")
    write_policy(solver.extract_policy(sol.u2), out / "policy2.csv")
    diag = sol.diagnostics()
    diag.update(scenario=env.name, nx=env.grid.nx, ny=env.grid.ny, tol=env.tol)
    _dump_json(diag, out / "diagnostics.json")


def load_solution(directory: Path, env: solver.EnvironmentSpec):
    fields = {}
    for name in ("u1", "u2", "R"):
        f = read_field(directory / f"{name}.csv")
        if f.grid.shape != env.grid.shape:
            raise ConfigError(f"{directory / (name + '.csv')} does not match the scenario grid")
        fields[name] = f
    return fields["u1"], fields["u2"], fields["R"]


def _environment(args) -> solver.EnvironmentSpec:
    cfg = ScenarioConfig.load(args.config)
    return cfg.environment(args.nx, args.ny)


def _solved(args, env):
    if getattr(args, "solution", None):
        return load_solution(Path(args.solution), env)
    sol = solver.solve(env)
    return sol.u1, sol.u2, sol.R


def cmd_solve(args) -> int:
    env = _environment(args)
    sol = solver.solve(env)
    write_solution(sol, env, Path(args.out))
    log.info("%s: %d sweeps, %d policy evaluations, residuals %.2e / %.2e",
             env.name, sol.sweeps, sol.policy_evaluations, sol.residual_u1, sol.residual_u2)
    return EXIT_OK


def cmd_trace(args) -> int:
    env = _environment(args)
    u1, u2, _ = _solved(args, env)
    if args.mode == 1:
        path = trace.trace(u1, args.start, env.f1, env.targets, cost=env.K1)
    else:
        if len(env.depots) == 0:
            raise ConfigError("mode-2 tracing needs at least one depot")
        path = trace.trace(u2, args.start, env.f2, env.depots, cost=env.K2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path.samples = [(s, x, y, args.mode) for s, x, y, _ in path.samples]
    path.write(out / "trajectory.csv")
    _dump_json({"mode": args.mode, "start": list(args.start), "arc_length": path.arc_length,
                "running_cost": path.running_cost, "samples": len(path.samples)}, out / "stats.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    env = _environment(args)
    u1, u2, R = _solved(args, env)
    seed = args.seed if args.seed is not None else ScenarioConfig.load(args.config).seed
    sim = trace.Simulator(u1, u2, env, R)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.run(args.start, seed, 0).write(out / "trajectory.csv", out / "events.csv")
    mc = sim.monte_carlo(args.start, args.runs, seed)
    stats = mc.to_dict()
    stats.update(seed=seed, start=list(args.start))
    _dump_json(stats, out / "stats.json")
    if args.costs:
        np.savetxt(out / "costs.csv", mc.costs, header="total_cost", comments="", fmt="%.17g")
    return EXIT_OK


def radial_params(env: solver.EnvironmentSpec) -> radial.RadialParams:
    """Constant coefficients of a single coincident target/depot scenario."""
    if len(env.targets) != 1 or len(env.depots) != 1 or env.repair is None:
        raise ConfigError("convergence study needs exactly one target and one depot at the same node")
    if env.targets.indices[0] != env.depots.indices[0]:
        raise ConfigError("convergence study needs the depot at the target")

    def const(f: ScalarField, name):
        v = f.values
        if np.ptp(v) > 1e-12 * max(1.0, abs(v).max()):
            raise ConfigError(f"convergence study needs a constant {name}")
        return float(v.flat[0])

    rep = env.repair
    return radial.RadialParams(
        f1=const(env.f1, "f1"), f2=const(env.f2, "f2"), fR=const(rep.speed, "fR"),
        K1=const(env.K1, "K1"), K2=const(env.K2, "K2"), KR=const(rep.running_cost, "KR"),
        lam1=const(env.lam1, "lam1"), lam2=const(env.lam2, "lam2"), phi=const(env.phi, "phi"),
        RF=const(rep.location_cost, "R_F"), RD=float(rep.depot_cost[0]), r_max=env.grid.diameter)


def convergence_study(cfg: ScenarioConfig, grids, threads: int = 1, step: float = 1e-5):
    """L-infinity errors of ``u1`` and ``u2`` against the radial reference on each grid.

    Returns ``(rows, slopes)`` where each row is ``(n, dx, err_u1, err_u2, sweeps)``
    and ``slopes`` holds the least-squares log-log slopes of error versus grid size
    ``n`` (first order gives -1).
    The target must sit on a node of every grid.
    """
    envs = [cfg.environment(n, n) for n in grids]
    p = radial_params(envs[0])
    p = radial.RadialParams(**{**p.__dict__, "r_max": max(e.grid.diameter for e in envs)})
    r_mesh = radial.integrate(p, step)

    def one(env):
        sol = solver.solve(env)
        X, Y = env.grid.coords()
        tx, ty = env.targets.points()[0]
        r = np.hypot(X - tx, Y - ty).ravel()
        e1, e2 = radial.reference(p, r, mesh=r_mesh)
        err1 = float(np.max(np.abs(sol.u1.values.ravel() - e1)))
        err2 = float(np.max(np.abs(sol.u2.values.ravel() - e2)))
        return env.grid.nx, env.grid.dx, err1, err2, sol.sweeps

    with ThreadPoolExecutor(max_workers=max(1, min(threads, len(envs)))) as pool:
        rows = list(pool.map(one, envs))
    h = np.log([r[0] for r in rows])
    slopes = {k: float(np.polyfit(h, np.log([r[c] for r in rows]), 1)[0]) for k, c in (("u1", 2), ("u2", 3))}
    return rows, slopes


def cmd_converge(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    rows, slopes = convergence_study(cfg, args.grids, thread_cap())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("n,dx,err_u1,err_u2,sweeps\n")
        for n, dx, e1, e2, sw in rows:
            fh.write(f"{n},{dx:.17g},{e1:.17g},{e2:.17g},{sw}\n")
    ratios = [[rows[k][c] / rows[k + 1][c] for c in (2, 3)] for k in range(len(rows) - 1)]
    _dump_json({"grids": [r[0] for r in rows], "slope_u1": slopes["u1"], "slope_u2": slopes["u2"],
                "refinement_ratios": ratios}, out / "convergence.json")
    print(f"fitted slope u1 {slopes['u1']:.3f}, u2 {slopes['u2']:.3f}")
    return EXIT_OK


def cmd_terrain(args) -> int:
    dem = terrain.read_esri_ascii(args.dem)
    params = terrain.TerrainParams()
    if args.params:
        try:
            params = terrain.TerrainParams.from_dict(json.loads(Path(args.params).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, args.params, exc.lineno) from exc
    fields = terrain.terrain_fields(dem, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, f in fields.items():
        write_field(f, out / f"{name}.csv")
    g = dem.grid
    _dump_json({"dem": Path(args.dem).name, "nx": g.nx, "ny": g.ny, "cell": g.dx,
                "xmin": g.xmin, "ymin": g.ymin, "params": params.to_dict(),
                "ranges": {k: [float(f.values.min()), float(f.values.max())] for k, f in fields.items()}},
               out / "metadata.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="breakdown-planner", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("--config", required=True, help="scenario JSON file or bundled scenario name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--nx", type=int, help="override grid width")
        p.add_argument("--ny", type=int, help="override grid height")

    p = sub.add_parser("solve", help="solve the coupled value functions")
    scenario(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("trace", help="trace a deterministic optimal path")
    scenario(p)
    p.add_argument("--start", type=_point, required=True, help="start point X,Y")
    p.add_argument("--mode", type=int, choices=(1, 2), default=1)
    p.add_argument("--solution", help="directory written by 'solve' (otherwise solve first)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="Monte Carlo simulation of the breakdown process")
    scenario(p)
    p.add_argument("--start", type=_point, required=True, help="start point X,Y")
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, help="defaults to the scenario seed")
    p.add_argument("--solution", help="directory written by 'solve' (otherwise solve first)")
    p.add_argument("--costs", action="store_true", help="also write per-run costs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("converge", help="grid convergence study against the radial reference")
    p.add_argument("--config", required=True)
    p.add_argument("--grids", type=_int_list, default=[51, 101, 201, 401])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("terrain", help="speed and breakdown-rate fields from an ESRI ASCII DEM")
    p.add_argument("--dem", required=True)
    p.add_argument("--params", help="JSON file of terrain parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_terrain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "runs", 1) < 1:
        print("error: --runs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (solver.NonConvergenceError, solver.LinearSolveError, trace.RunawayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (OSError, FieldFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, ProblemError, terrain.TerrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
