import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breakdown_planner import terrain
from breakdown_planner.grid import FieldFormatError, Grid2D, ScalarField
from breakdown_planner.terrain import TerrainError, TerrainParams

P = TerrainParams()


def plane(a, b=0.0, n=15, cell=10.0):
    g = Grid2D(n, n, cell, cell, 0.0, 0.0)
    return ScalarField.from_function(g, lambda x, y: a * x + b * y)


@pytest.mark.parametrize("a,deg", [(0.0, 0.0), (1.0, 45.0), (0.364, 20.0)])
def test_slope_of_planes(a, deg):
    s = terrain.slope_field(plane(a))
    np.testing.assert_allclose(s.values, deg, atol=0.01)


@pytest.mark.parametrize("sigma,mode,expected", [
    (0.0, 1, 200.0), (20.0, 1, 1.0), (10.0, 1, 100.5), (25.0, 1, 1.0), (25.0, 2, 1.0),
    (0.0, 2, 100.0), (10.0, 2, 1.0), (5.0, 2, 100 - 99 / 10 * 5),
])
def test_speed_from_slope(sigma, mode, expected):
    g = Grid2D(2, 2, 1.0, 1.0)
    f = terrain.speed_from_slope(ScalarField.constant(g, sigma), P, mode)
    assert f.values[0, 0] == pytest.approx(expected, abs=1e-12)


def test_speed_continuous_and_derated():
    g = Grid2D(400, 2, 1.0, 1.0)
    s = ScalarField(g, np.tile(np.linspace(0, 40, 400), (2, 1)))
    f1 = terrain.speed_from_slope(s, P, 1).values
    f2 = terrain.speed_from_slope(s, P, 2).values
    assert np.all(f2 <= f1)
    edge = terrain.speed_from_slope(ScalarField.constant(g, P.sigma_bar * (1 - 1e-12)), P, 1).values
    assert edge.max() == pytest.approx(P.f_min, abs=1e-8)


def test_breakdown_rate_examples():
    g = Grid2D(3, 1 + 1, 1.0, 1.0)
    rho = ScalarField(g, np.array([[0.0, 50.0, 100.0]] * 2))
    np.testing.assert_allclose(terrain.breakdown_rate(rho, 5000.0).values[0], [0.0, 0.5, 2.0])
    with pytest.raises(TerrainError):
        terrain.breakdown_rate(ScalarField.constant(g, -1.0))


def test_roughness_planar_is_zero():
    r = terrain.roughness_field(plane(0.3, -0.7), 5)
    assert np.abs(r.values).max() < 1e-9


def brute_rms(z, j, i, w, dx, dy):
    h = w // 2
    js, je = max(0, j - h), min(z.shape[0], j + h + 1)
    is_, ie = max(0, i - h), min(z.shape[1], i + h + 1)
    pts = [(a * dx, b * dy, z[b, a]) for b in range(js, je) for a in range(is_, ie)]
    M = np.array([[1.0, x, y] for x, y, _ in pts])
    zz = np.array([p[2] for p in pts])
    coef = np.linalg.solve(M.T @ M, M.T @ zz)
    r = zz - M @ coef
    return np.sqrt(np.mean(r**2))


def test_roughness_checkerboard():
    g = Grid2D(9, 9, 1.0, 1.0)
    J, I = np.mgrid[0:9, 0:9]
    z = np.where((I + J) % 2 == 0, 1.0, -1.0)
    r = terrain.roughness_field(ScalarField(g, z), 3).values
    for j, i in [(4, 4), (1, 1), (5, 2), (0, 0), (8, 3)]:
        assert r[j, i] == pytest.approx(brute_rms(z, j, i, 3, 1.0, 1.0), abs=1e-12)
    assert r[4, 4] == pytest.approx(np.sqrt(80 / 81), abs=1e-12)


def test_roughness_spike_is_local():
    g = Grid2D(15, 15, 2.0, 2.0)
    z = np.full(g.shape, 3.0)
    z[7, 7] += 10.0
    r = terrain.roughness_field(ScalarField(g, z), 5).values
    J, I = np.mgrid[0:15, 0:15]
    near = (abs(J - 7) <= 2) & (abs(I - 7) <= 2)
    assert np.all(r[near] > 0)
    assert np.abs(r[~near]).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3), st.floats(-100, 100))
def test_roughness_affine_invariant(seed, a, b, c):
    rng = np.random.default_rng(seed)
    g = Grid2D(10, 8, 5.0, 5.0)
    z = rng.standard_normal(g.shape)
    X, Y = g.coords()
    r0 = terrain.roughness_field(ScalarField(g, z), 3).values
    r1 = terrain.roughness_field(ScalarField(g, z + a * X + b * Y + c), 3).values
    np.testing.assert_allclose(r1, r0, atol=1e-8)


def test_esri_roundtrip_and_fields(tmp_path):
    dem = plane(np.tan(np.radians(10.0)), n=12, cell=20.0)
    terrain.write_esri_ascii(dem, tmp_path / "ramp.asc")
    back = terrain.read_esri_ascii(tmp_path / "ramp.asc")
    assert back.grid == dem.grid
    np.testing.assert_allclose(back.values, dem.values, rtol=1e-9, atol=1e-9)
    fields = terrain.terrain_fields(back, P)
    np.testing.assert_allclose(fields["f1"].values, 100.5, atol=1e-6)
    assert np.abs(fields["phi"].values).max() < 1e-12


def test_esri_orientation_and_corner(tmp_path):
    p = tmp_path / "t.asc"
    p.write_text("ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 10\nNODATA_value -9999\n"
                 "5 6\n3 4\n1 2\n")
    z = terrain.read_esri_ascii(p)
    assert z.grid.xmin == 5.0 and z.grid.ymin == 5.0
    assert z[0, 0] == 1.0 and z[1, 2] == 6.0


def test_esri_nodata_rejected(tmp_path):
    p = tmp_path / "hole.asc"
    p.write_text("ncols 2\nnrows 2\nxllcenter 0\nyllcenter 0\ncellsize 1\nNODATA_value -9999\n1 -9999\n1 1\n")
    with pytest.raises(TerrainError, match="NODATA"):
        terrain.read_esri_ascii(p)


def test_esri_bad_header(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 2\ncellsize 1\n1 2\n")
    with pytest.raises(FieldFormatError):
        terrain.read_esri_ascii(p)


def test_params_validation():
    with pytest.raises(TerrainError):
        TerrainParams(window=4)
    with pytest.raises(TerrainError):
        TerrainParams(f_min=300.0)
    with pytest.raises(TerrainError):
        TerrainParams.from_dict({"sigma_max": 3})
    assert TerrainParams.from_dict(P.to_dict()) == P


def test_synthetic_crater_is_deterministic():
    a = terrain.synthetic_crater(31, 20.0, seed=3)
    b = terrain.synthetic_crater(31, 20.0, seed=3)
    np.testing.assert_array_equal(a.values, b.values)
