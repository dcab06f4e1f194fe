import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtfdtd.excitation import make_band_passed_pulse
from vtfdtd.geometry import AreaFunction, CellKind, build_geometry, free_field_geometry
from vtfdtd.solver import (
    CFLError,
    InstabilityError,
    ModeError,
    PhysicalConstants,
    SimulationConfig,
    YeeGrid,
    absorption_from_admittance,
    acoustic_energy,
    cfl_timestep,
    n_steps,
    prepare,
    probe_cell,
    read_snapshots,
    read_trace,
    run_simulation,
    step_pml,
    step_pressure,
    step_velocity,
    wall_impedance,
    wall_velocity,
    write_trace,
)

from .helpers import pml_reflection_db

# --- scalar formulas ----------------------------------------------------------


def test_cfl_values():
    # oracle: 0.74e-3 / (sqrt(2) * 350) evaluated at 30 digits
    assert cfl_timestep(0.74e-3, 350) == pytest.approx(1.49502576594e-6, rel=1e-11)
    assert cfl_timestep(0.74e-3, 350) == pytest.approx(1.4951e-6, rel=1e-4)
    assert cfl_timestep(0.18e-3, 350) == pytest.approx(3.6365e-7, rel=1e-4)
    assert cfl_timestep(0.37e-3, 350) == pytest.approx(cfl_timestep(0.74e-3, 350) / 2, rel=1e-15)


def test_cfl_rejects_nonpositive():
    with pytest.raises(ValueError):
        cfl_timestep(0.0, 350)


@pytest.mark.parametrize("mu, expected", [(0.005, 79_800.0), (0.5, 798.0)])
def test_wall_impedance(mu, expected):
    assert wall_impedance(PhysicalConstants(mu=mu)) == pytest.approx(expected, rel=1e-12)


def test_wall_impedance_tends_to_rho_c():
    assert wall_impedance(PhysicalConstants(mu=1 - 1e-9)) == pytest.approx(1.14 * 350, rel=1e-8)


@given(st.floats(1e-4, 0.999))
def test_wall_impedance_is_rho_c_over_mu(mu):
    assert wall_impedance(PhysicalConstants(mu=mu)) == pytest.approx(1.14 * 350 / mu, rel=1e-9)
    assert 0 < absorption_from_admittance(mu) <= 1


@pytest.mark.parametrize("mu", [0.0, 1.0, -0.1, 1.5])
def test_admittance_domain(mu):
    with pytest.raises(ValueError):
        PhysicalConstants(mu=mu)
    with pytest.raises(ValueError):
        absorption_from_admittance(mu)


def test_wall_velocity():
    np.testing.assert_array_equal(wall_velocity(0.0, 79_800.0), [0.0, 0.0])
    np.testing.assert_allclose(wall_velocity(79_800.0, 79_800.0, (1.0, 0.0)), [1.0, 0.0], rtol=1e-15)
    a = wall_velocity(100.0, 1000.0, (0.0, 1.0))
    b = wall_velocity(100.0, 2000.0, (0.0, 1.0))
    np.testing.assert_allclose(b, a / 2)
    with pytest.raises(ValueError):
        wall_velocity(1.0, 0.0)


def test_n_steps_floor():
    assert n_steps(0.05, 1 / 661_500) == 33_075
    assert n_steps(1.0, 0.3) == 3


def test_config_defaults():
    cfg = SimulationConfig(ds=0.74e-3)
    assert cfg.dt == cfl_timestep(0.74e-3, 350.0)
    assert cfg.probe_offset == -0.003
    assert SimulationConfig(ds=1e-3, mode="radiation").probe_offset == 0.003
    assert cfg.sample_rate == pytest.approx(1 / cfg.dt)


# --- single stencil applications ----------------------------------------------


def _grid(ds=0.74e-3, dt=1.4951e-6, kind="2.5d", af=None, **kw):
    # built directly: the rounded dt sits a hair above the exact bound at 0.74 mm
    af = af or AreaFunction.uniform(0.02, 0.01)
    cfg = SimulationConfig(ds=ds, dt=dt, solver_kind=kind, **kw)
    return YeeGrid.from_geometry(build_geometry(af, ds, cfg.mode), cfg), cfg


def test_pressure_stencil_oracle():
    grid, cfg = _grid()
    j, i = int(grid.geometry.axis_row), grid.geometry.tube_origin + 5
    grid.vx[j, i + 1] = 1.0  # east face; west face stays 0
    step_pressure(grid, cfg)
    expected = -1.14 * 350.0**2 * 1.4951e-6 / 0.74e-3
    assert grid.p[j, i] == pytest.approx(-282.1496148648649, rel=1e-12)
    assert grid.p[j, i] == pytest.approx(expected, rel=1e-14)
    assert grid.p[j, i] == pytest.approx(-282.17, rel=1e-4)
    assert grid.p[j, i + 1] == pytest.approx(-expected, rel=1e-14)
    assert np.count_nonzero(grid.p) == 2


def test_velocity_stencil_oracle():
    grid, cfg = _grid(ds=1e-3)
    j, i = int(grid.geometry.axis_row), grid.geometry.tube_origin + 5
    grid.p[j, i] = 1.0  # 1 Pa over 1 mm = 1000 Pa/m
    step_velocity(grid, cfg)
    # west face of the cell sees +1000 Pa/m, east face -1000 Pa/m
    assert grid.vx[j, i] == pytest.approx(-1.311491228070175e-3, rel=1e-12)
    assert grid.vx[j, i] == pytest.approx(-1.3115e-3, rel=1e-4)
    assert grid.vx[j, i + 1] == pytest.approx(1.311491228070175e-3, rel=1e-12)


def test_zero_fields_stay_zero():
    grid, cfg = _grid()
    step_pressure(grid, cfg)
    step_velocity(grid, cfg)
    assert not grid.p.any() and not grid.vx.any() and not grid.vy.any()


def test_nonuniform_depth_weights():
    af = AreaFunction.from_arrays([0.01, 0.01], [1e-4, 4e-4])
    grid, cfg = _grid(ds=1e-3, af=af)
    geo = grid.geometry
    j, i = int(geo.axis_row), geo.tube_origin + 9
    grid.vx[j, i + 1] = 1.0
    step_pressure(grid, cfg)
    k = cfg.constants.rho * cfg.constants.c**2 * cfg.dt / cfg.ds
    expected = -k * geo.depth_x[j, i + 1] / geo.depth_bar[j, i]
    assert grid.p[j, i] == pytest.approx(expected, rel=1e-14)


def test_clamped_faces_equal_prescribed_velocity():
    grid, cfg = _grid(ds=1e-3)
    c = grid.coeffs
    rng = np.random.default_rng(0)
    grid.p[:] = rng.normal(size=grid.p.shape) * c.p_mask
    grid.vx[:] = rng.normal(size=grid.vx.shape)
    grid.vy[:] = rng.normal(size=grid.vy.shape)
    p = grid.p.ravel().copy()
    step_velocity(grid, cfg)
    got = grid.vy.ravel()[c.wall_y.flat]
    np.testing.assert_array_equal(got, c.wall_y.sign * p[c.wall_y.cell] / c.z_n)
    got = grid.vx.ravel()[c.wall_x.flat]
    np.testing.assert_array_equal(got, c.wall_x.sign * p[c.wall_x.cell] / c.z_n)


def test_clamp_limit_of_blended_update():
    # beta -> 0 in the blended formula gives dt * v_b / dt = v_b
    dt, vb = 1.4951e-6, 0.5
    for beta in (0.0,):
        v = (beta * 3.0 - beta**2 * dt * 10.0 / 1.14 + dt * (1 - beta) * vb) / (beta + dt * (1 - beta))
        assert v == vb


def test_source_face_velocity():
    grid, cfg = _grid(ds=1e-3)
    c = grid.coeffs
    grid.p[:] = 2.0 * c.p_mask
    grid.v_e = 0.25
    step_velocity(grid, cfg)
    np.testing.assert_allclose(grid.vx.ravel()[c.source_x], 0.25 - 2.0 / c.z_n, rtol=1e-15)


def test_open_end_cells_are_dirichlet():
    af = AreaFunction.uniform(0.03, 0.01)
    cfg = SimulationConfig(ds=1e-3, duration=0.002)
    grid = prepare(af, cfg)
    open_end = grid.geometry.kind == CellKind.OPEN_END
    seen = []
    run_simulation(af, cfg, make_band_passed_pulse(cfg.sample_rate, 4 * 2000, transition=10_000.0),
                   grid=grid, callback=lambda g: seen.append(np.abs(g.p[open_end]).max()))
    assert max(seen) == 0.0
    assert np.abs(grid.p).max() > 0


def test_staggered_shapes():
    grid, _ = _grid()
    N, M = grid.p.shape
    assert grid.vx.shape == (N, M + 1)
    assert grid.vy.shape == (N + 1, M)


# --- whole runs ---------------------------------------------------------------


def test_cfl_violation_refused():
    ds = 1e-3
    cfg = SimulationConfig(ds=ds, dt=1.05 * cfl_timestep(ds, 350.0))
    with pytest.raises(CFLError):
        run_simulation(AreaFunction.uniform(0.05, 0.01), cfg, np.zeros(10))
    SimulationConfig(ds=ds, dt=cfl_timestep(ds, 350.0)).check_cfl()


def test_zero_excitation_zero_trace():
    cfg = SimulationConfig(ds=1e-3, duration=0.002)
    trace = run_simulation(AreaFunction.uniform(0.05, 0.01), cfg, np.zeros(3))
    assert len(trace.samples) == cfg.n_steps
    assert not trace.samples.any()


def test_instability_names_step():
    cfg = SimulationConfig(ds=1e-3, duration=0.002)
    af = AreaFunction.uniform(0.05, 0.01)
    grid = prepare(af, cfg)
    grid.coeffs.k_p *= 10.0  # break the scheme deliberately
    with pytest.raises(InstabilityError, match=r"step \d+"):
        run_simulation(af, cfg, [1.0], grid=grid)


def test_constant_depth_2d_equals_25d_random_geometry():
    rng = np.random.default_rng(3)
    areas = np.full(6, 1e-4)
    af = AreaFunction.from_arrays(rng.uniform(0.005, 0.01, 6), areas)
    out = {}
    for kind in ("2d", "2.5d"):
        cfg = SimulationConfig(ds=1e-3, duration=0.004, solver_kind=kind)
        out[kind] = run_simulation(af, cfg, make_band_passed_pulse(cfg.sample_rate, cfg.n_steps, transition=20_000.0)).samples
    np.testing.assert_allclose(out["2.5d"], out["2d"], rtol=1e-12, atol=0)


def test_probe_placement():
    geo = build_geometry(AreaFunction.uniform(0.05, 0.01), 1e-3)
    assert probe_cell(geo, -0.003) == (int(geo.axis_row), geo.mouth_col - 3)
    geo = build_geometry(AreaFunction.uniform(0.05, 0.01), 1e-3, "radiation")
    row, col = probe_cell(geo, 0.003)
    assert col == geo.mouth_col + 3 and geo.kind[row, col] == CellKind.AIR


def test_closed_box_energy_non_increasing_but_persistent():
    ds = 1e-3
    cfg = SimulationConfig(ds=ds, mode="radiation", pml_layers=0)
    grid = YeeGrid.from_geometry(free_field_geometry(40, 40, ds, 0), cfg)
    jj, ii = np.mgrid[0:40, 0:40]
    grid.p[:] = np.exp(-((ii - 19.5) ** 2 + (jj - 19.5) ** 2) / 18.0)
    vx_prev, vy_prev = grid.vx.copy(), grid.vy.copy()
    energies = []
    for _ in range(600):
        step_pressure(grid, cfg)
        step_velocity(grid, cfg)
        energies.append(acoustic_energy(grid, cfg, vx_prev, vy_prev))
        vx_prev[...] = grid.vx
        vy_prev[...] = grid.vy
    e = np.asarray(energies)
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert e[-1] > 0.5 * e[0]


def test_pml_reflection_below_40db():
    assert pml_reflection_db(layers=6) <= -40.0


def test_pml_off_is_interior_update():
    ds = 1e-3
    on = SimulationConfig(ds=ds, mode="radiation", pml_layers=6)
    geo = free_field_geometry(30, 30, ds, 6)
    g1 = YeeGrid.from_geometry(geo, on)
    g1.coeffs.pml.apx[:] = 1.0
    g1.coeffs.pml.apy[:] = 1.0
    g1.coeffs.pml.bpx[:] = g1.coeffs.k_p
    g1.coeffs.pml.bpy[:] = g1.coeffs.k_p
    g1.coeffs.ax[:] = 1.0
    g1.coeffs.ay[:] = 1.0
    g1.coeffs.bx[:] = on.dt / (on.constants.rho * ds)
    g1.coeffs.by[:] = on.dt / (on.constants.rho * ds)
    g2 = YeeGrid.from_geometry(replace(geo, kind=np.where(geo.kind == CellKind.ABSORBING, CellKind.AIR, geo.kind).astype(np.int8), pml_layers=0), on)
    rng = np.random.default_rng(1)
    start = rng.normal(size=g1.p.shape)
    for g in (g1, g2):
        g.p[:] = start
    cells = g1.coeffs.pml.cells
    g1.pml_aux["px"][:] = start.ravel()[cells]
    g1.pml_aux["py"][:] = 0.0
    for _ in range(20):
        for g in (g1, g2):
            step_pressure(g, on)
            step_velocity(g, on)
    np.testing.assert_allclose(g1.p, g2.p, rtol=1e-9, atol=1e-12)


def test_step_pml_requires_radiation():
    grid, cfg = _grid()
    with pytest.raises(ModeError):
        step_pml(grid, cfg)


def test_step_pml_leaves_interior_untouched():
    ds = 1e-3
    cfg = SimulationConfig(ds=ds, mode="radiation")
    grid = YeeGrid.from_geometry(free_field_geometry(30, 30, ds, 6), cfg)
    grid.vx[:] = np.random.default_rng(2).normal(size=grid.vx.shape)
    before = grid.p.copy()
    step_pml(grid, cfg)
    interior = grid.geometry.kind != CellKind.ABSORBING
    np.testing.assert_array_equal(grid.p[interior], before[interior])
    assert np.any(grid.p[~interior] != 0)


# --- file formats -------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    cfg = SimulationConfig(ds=1e-3, duration=0.001)
    trace = run_simulation(AreaFunction.uniform(0.05, 0.01), cfg, [0.1, -0.05])
    write_trace(trace, tmp_path / "t.txt")
    back = read_trace(tmp_path / "t.txt")
    np.testing.assert_array_equal(back.samples, trace.samples)
    assert back.sample_rate == trace.sample_rate
    assert back.probe_cell == trace.probe_cell
    data = np.loadtxt(tmp_path / "t.txt", delimiter=",")
    assert data.shape == (cfg.n_steps, 2)


def test_snapshots(tmp_path):
    path = tmp_path / "snap.bin"
    cfg = SimulationConfig(ds=1e-3, duration=0.0005, snapshot_every=50, snapshot_path=path)
    af = AreaFunction.uniform(0.03, 0.01)
    run_simulation(af, cfg, [0.1])
    frames = read_snapshots(path)
    geo = build_geometry(af, 1e-3)
    assert [s for s, _ in frames] == list(range(50, cfg.n_steps + 1, 50))
    assert frames[0][1].shape == geo.shape
    raw = path.read_bytes()
    assert raw[:4] == b"VTFS" and len(raw) == len(frames) * (16 + 4 * geo.width * geo.height)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 1.0), st.integers(1, 300))
def test_subcritical_dt_runs_finite(frac, n):
    ds = 1.5e-3
    cfg = SimulationConfig(ds=ds, dt=frac * cfl_timestep(ds, 350.0), duration=n * frac * cfl_timestep(ds, 350.0) + 1e-12)
    trace = run_simulation(AreaFunction.from_arrays([0.02, 0.02], [1e-4, 3e-4]), cfg, [1.0, -1.0])
    assert np.isfinite(trace.samples).all()
