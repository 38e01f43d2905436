import json

import numpy as np
import pytest

from breakdown_planner import cli, eikonal, terrain
from breakdown_planner.config import ConfigError, ScenarioConfig, bundled_scenarios
from breakdown_planner.eikonal import EikonalProblem
from breakdown_planner.grid import Grid2D, ScalarField, read_field, write_field

from conftest import bundled


def scenario(**changes):
    base = {
        "name": "tiny",
        "grid": {"nx": 21, "ny": 21, "bounds": [0, 1, 0, 1]},
        "coefficients": {"f1": 1.0, "f2": 0.5, "fR": 0.5, "lam1": 0.5, "lam2": 1.0, "phi": 1.0},
        "targets": [[0.5, 0.5]],
        "depots": [[0.5, 0.5]],
        "seed": 7,
    }
    for k, v in changes.items():
        if v is None:
            base.pop(k)
        else:
            base[k] = v
    return base


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data, indent=2))
    return p


def test_schema_error_has_line(tmp_path):
    data = scenario(grid={"nx": "big", "ny": 21, "bounds": [0, 1, 0, 1]})
    p = write_config(tmp_path, data)
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.load(p)
    line = exc.value.line
    assert line is not None and '"nx"' in p.read_text().splitlines()[line - 1]
    assert f"{p}:{line}:" in str(exc.value)


def test_json_syntax_error_has_line(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "grid": {\n    "nx": 3,,\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.load(p)
    assert exc.value.line == 3


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="colour"):
        ScenarioConfig.from_dict({**scenario(), "colour": "red"})


def test_partial_breakdowns_need_depot():
    cfg = ScenarioConfig.from_dict(scenario(depots=None))
    with pytest.raises(ConfigError, match="depot"):
        cfg.environment()


def test_target_outside_grid():
    cfg = ScenarioConfig.from_dict(scenario(targets=[[2.0, 0.5]]))
    with pytest.raises(ConfigError, match="outside"):
        cfg.environment()


def test_depot_cost_per_depot():
    cfg = ScenarioConfig.from_dict(scenario(depots=[[0.5, 0.5], [0.1, 0.1]], R_D=[0.0, 1.0, 2.0]))
    with pytest.raises(ConfigError, match="R_D"):
        cfg.environment()
    env = ScenarioConfig.from_dict(scenario(depots=[[0.5, 0.5], [0.1, 0.1]], R_D=[0.0, 1.5])).environment()
    np.testing.assert_allclose(env.depot_cost, [0.0, 1.5])


def test_scalar_broadcast_and_field_files(tmp_path):
    g = Grid2D.from_bounds(21, 21, (0, 1, 0, 1))
    write_field(ScalarField.from_function(g, lambda x, y: 1.0 + x), tmp_path / "speed.csv")
    data = scenario()
    data["coefficients"]["f1"] = "speed.csv"
    env = ScenarioConfig.load(write_config(tmp_path, data)).environment()
    assert env.f1[20, 0] == pytest.approx(2.0)
    assert np.all(env.K1.values == 1.0)
    data["grid"]["nx"] = 11
    with pytest.raises(ConfigError, match="does not match"):
        ScenarioConfig.load(write_config(tmp_path, data)).environment()


def test_blob_coefficient():
    data = scenario()
    data["coefficients"]["phi"] = {"base": 0.5, "blobs": [{"center": [0.5, 0.5], "sigma": 0.1, "amplitude": 2}]}
    env = ScenarioConfig.from_dict(data).environment()
    assert env.phi[10, 10] == pytest.approx(2.5)
    assert env.phi[0, 0] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("name", bundled_scenarios())
def test_bundled_scenarios_load(name):
    env = ScenarioConfig.load(name).environment()
    assert env.grid.nx >= 101 and len(env.targets) == 1
    assert np.all(env.f2.values <= env.f1.values)


def lattice_symmetry_residual(u, ij):
    """Largest mismatch of ``u`` under the eight grid symmetries that fix node ``ij``."""
    i0, j0 = ij
    v = u.values
    ny, nx = v.shape
    J, I = np.mgrid[0:ny, 0:nx]
    a, b = I - i0, J - j0
    worst = 0.0
    for p, q in [(-a, b), (a, -b), (-a, -b), (b, a), (-b, -a), (-b, a), (b, -a)]:
        ii, jj = i0 + p, j0 + q
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        worst = max(worst, float(np.abs(v[ok] - v[jj[ok], ii[ok]]).max()))
    return worst


def test_example2_symmetry():
    env, sol = bundled("example2")
    env_t, sol_t = bundled("example2_total")
    g0 = env.targets.indices[0]
    plain = lattice_symmetry_residual(sol.u2, g0)
    total = lattice_symmetry_residual(sol_t.u2, g0)
    assert plain <= 2 * env.tol
    assert total > plain and total > 2 * env.tol


def run(argv):
    return cli.main([str(a) for a in argv])


def test_solve_outputs_and_determinism(tmp_path):
    cfg = write_config(tmp_path, scenario())
    assert run(["solve", "--config", cfg, "--out", tmp_path / "a"]) == 0
    assert run(["solve", "--config", cfg, "--out", tmp_path / "b"]) == 0
    names = ["u1.csv", "u2.csv", "uR.csv", "R.csv", "policy1.csv", "policy2.csv", "diagnostics.json"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    diag = json.loads((tmp_path / "a" / "diagnostics.json").read_text())
    assert diag["stall_count"] == 0 and diag["final_d"] <= diag["tol"] and diag["iterations"] >= 1
    u1 = read_field(tmp_path / "a" / "u1.csv")
    assert u1.grid.shape == (21, 21) and u1[10, 10] == 0.0
    header = (tmp_path / "a" / "policy1.csv").read_text().splitlines()[0]
    assert header == "i,j,x,y,ax,ay,defined"


def test_grid_override(tmp_path):
    cfg = write_config(tmp_path, scenario())
    assert run(["solve", "--config", cfg, "--out", tmp_path / "o", "--nx", 11, "--ny", 11]) == 0
    assert read_field(tmp_path / "o" / "u1.csv").grid.shape == (11, 11)


def test_trace_and_simulate_without_breakdowns(tmp_path):
    data = scenario(depots=None)
    data["coefficients"] = {"f1": 1.0, "f2": 0.5}
    cfg = write_config(tmp_path, data)
    assert run(["solve", "--config", cfg, "--out", tmp_path / "sol"]) == 0
    assert run(["trace", "--config", cfg, "--out", tmp_path / "tr", "--start", "0.9,0.8",
                "--solution", tmp_path / "sol"]) == 0
    stats = json.loads((tmp_path / "tr" / "stats.json").read_text())
    exact = np.hypot(0.4, 0.3)
    assert abs(stats["arc_length"] - exact) <= 2 * 0.05
    for out in ("s1", "s2"):
        assert run(["simulate", "--config", cfg, "--out", tmp_path / out, "--start", "0.9,0.8",
                    "--runs", 20, "--solution", tmp_path / "sol"]) == 0
    stats = json.loads((tmp_path / "s1" / "stats.json").read_text())
    assert abs(stats["mean"] - exact) <= 2 * 0.05 and stats["std_error"] < 1e-12
    assert stats["seed"] == 7
    for n in ("stats.json", "trajectory.csv", "events.csv"):
        assert (tmp_path / "s1" / n).read_bytes() == (tmp_path / "s2" / n).read_bytes()


def test_simulate_seeded_repeat(tmp_path):
    cfg = write_config(tmp_path, scenario())
    outs = []
    for k in range(2):
        out = tmp_path / f"m{k}"
        assert run(["simulate", "--config", cfg, "--out", out, "--start", "0.1,0.2",
                    "--runs", 50, "--seed", 3, "--costs"]) == 0
        outs.append(out)
    for n in ("stats.json", "trajectory.csv", "events.csv", "costs.csv"):
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    assert json.loads((outs[0] / "stats.json").read_text())["runs"] == 50


def test_mode2_trace_needs_depot(tmp_path):
    data = scenario(depots=None)
    data["coefficients"] = {"f1": 1.0, "f2": 0.5}
    cfg = write_config(tmp_path, data)
    assert run(["trace", "--config", cfg, "--out", tmp_path / "t", "--start", "0.2,0.2", "--mode", 2]) == 2


def test_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, scenario(grid={"nx": 0, "ny": 5, "bounds": [0, 1, 0, 1]}))
    assert run(["solve", "--config", bad, "--out", tmp_path / "x"]) == 2
    assert ":" in capsys.readouterr().err
    assert run(["solve", "--config", tmp_path / "missing.json", "--out", tmp_path / "x"]) == 4
    nodepot = write_config(tmp_path, scenario(depots=None), "nodepot.json")
    assert run(["solve", "--config", nodepot, "--out", tmp_path / "x"]) == 2
    cfg = write_config(tmp_path, scenario(), "ok.json")
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "x", "--start", "0.1,0.1", "--runs", 0]) == 2
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "x", "--start", "5,5", "--runs", 2]) == 2
    stuck = write_config(tmp_path, scenario(solver={"max_outer": 1, "max_sweeps": 1}), "stuck.json")
    assert run(["solve", "--config", stuck, "--out", tmp_path / "x"]) == 3
    with pytest.raises(SystemExit):
        run(["trace", "--config", cfg, "--out", tmp_path / "x", "--start", "oops"])


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("BREAKDOWN_PLANNER_THREADS", "3")
    assert cli.thread_cap() == 3
    monkeypatch.setenv("BREAKDOWN_PLANNER_THREADS", "many")
    with pytest.raises(ConfigError):
        cli.thread_cap()


def test_converge_trivial_matches_distance_error(tmp_path, capsys):
    data = scenario()
    data["coefficients"] = {"f1": 1.0, "f2": 0.5, "fR": 0.5}
    cfg = write_config(tmp_path, data)
    assert run(["converge", "--config", cfg, "--grids", "11,21,41", "--out", tmp_path / "c"]) == 0
    assert "fitted slope" in capsys.readouterr().out
    rows = np.loadtxt(tmp_path / "c" / "convergence.csv", delimiter=",", skiprows=1)
    for n, dx, e1, e2, sweeps in rows:
        env = ScenarioConfig.load(cfg).environment(int(n), int(n))
        fmm = eikonal.solve(EikonalProblem(env.f1, env.K1, env.targets.with_values(0.0)))
        X, Y = env.grid.coords()
        assert e1 == pytest.approx(np.abs(fmm.values - np.hypot(X - 0.5, Y - 0.5)).max(), abs=1e-9)
    summary = json.loads((tmp_path / "c" / "convergence.json").read_text())
    assert summary["grids"] == [11, 21, 41] and len(summary["refinement_ratios"]) == 2


def test_converge_needs_radial_setup(tmp_path):
    cfg = write_config(tmp_path, scenario(depots=[[0.2, 0.2]]))
    assert run(["converge", "--config", cfg, "--grids", "11,21", "--out", tmp_path / "c"]) == 2


def dem_file(path, z, cell=20.0, nodata=None):
    g = Grid2D(z.shape[1], z.shape[0], cell, cell, 0.0, 0.0)
    terrain.write_esri_ascii(ScalarField(g, z), path)
    if nodata is not None:
        lines = path.read_text().splitlines()
        lines[-3] = lines[-3].split(" ", 1)[0] + " -9999 " + " ".join(lines[-3].split()[2:])
        path.write_text("\n".join(lines) + "\n")
    return path


def test_terrain_flat_and_ramp(tmp_path):
    flat = dem_file(tmp_path / "flat.asc", np.full((12, 14), 100.0))
    assert run(["terrain", "--dem", flat, "--out", tmp_path / "f"]) == 0
    assert np.all(read_field(tmp_path / "f" / "f1.csv").values == pytest.approx(200.0))
    assert np.all(read_field(tmp_path / "f" / "phi.csv").values == pytest.approx(0.0, abs=1e-12))
    meta = json.loads((tmp_path / "f" / "metadata.json").read_text())
    assert meta["nx"] == 14 and meta["ny"] == 12
    X = np.arange(14) * 20.0
    ramp = dem_file(tmp_path / "ramp.asc", np.tile(X * np.tan(np.radians(10.0)), (12, 1)))
    assert run(["terrain", "--dem", ramp, "--out", tmp_path / "r"]) == 0
    np.testing.assert_allclose(read_field(tmp_path / "r" / "f1.csv").values, 100.5, atol=1e-6)
    for name in ("f2", "sigma", "rho"):
        assert (tmp_path / "r" / f"{name}.csv").exists()


def test_terrain_nodata_and_params(tmp_path):
    z = np.full((6, 6), 5.0)
    hole = dem_file(tmp_path / "hole.asc", z, nodata=True)
    assert "-9999" in hole.read_text().splitlines()[-3]
    assert run(["terrain", "--dem", hole, "--out", tmp_path / "h"]) == 2
    good = dem_file(tmp_path / "good.asc", z)
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"f_max": 50.0}))
    assert run(["terrain", "--dem", good, "--params", params, "--out", tmp_path / "g"]) == 0
    np.testing.assert_allclose(read_field(tmp_path / "g" / "f1.csv").values, 50.0)
    params.write_text("{oops")
    assert run(["terrain", "--dem", good, "--params", params, "--out", tmp_path / "g"]) == 2
