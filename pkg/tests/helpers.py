"""Measurement harnesses shared by unit and acceptance tests."""

import math

import numpy as np

from vtfdtd.excitation import make_band_passed_pulse
from vtfdtd.geometry import free_field_geometry
from vtfdtd.solver import SimulationConfig, YeeGrid, acoustic_energy, prepare, run_simulation, step_pressure, step_velocity


def _gaussian_run(width, layers, ds, steps, inner, reflection=1e-4, order=2, sigma_cells=3.0):
    cfg = SimulationConfig(ds=ds, mode="radiation", pml_layers=layers, pml_reflection=reflection, pml_order=order)
    grid = YeeGrid.from_geometry(free_field_geometry(width, width, ds, layers), cfg)
    jj, ii = np.mgrid[0:width, 0:width]
    c = width / 2.0
    grid.p[:] = np.exp(-((ii + 0.5 - c) ** 2 + (jj + 0.5 - c) ** 2) / (2 * sigma_cells**2))
    if grid.coeffs.pml is not None:
        split = 0.5 * grid.p.ravel()[grid.coeffs.pml.cells]
        grid.pml_aux["px"][:] = split
        grid.pml_aux["py"][:] = split
    lo = width // 2 - inner // 2
    window = slice(lo, lo + inner)
    frames = np.empty((steps, inner, inner))
    for n in range(steps):
        step_pressure(grid, cfg)
        step_velocity(grid, cfg)
        frames[n] = grid.p[window, window]
    return frames


def pml_reflection_db(layers=6, ds=1e-3, inner=100, steps=300, **kw):
    """Worst-case reflected energy inside the interior, relative to the incident field, in dB.

    The reference is a domain large enough that nothing returns from its
    edges within ``steps``; the difference to the truncated run is the
    reflection.
    """
    reference = _gaussian_run(inner + 2 * steps + 40, 0, ds, steps, inner)
    truncated = _gaussian_run(inner + 2 * layers, layers, ds, steps, inner, **kw)
    err = ((truncated - reference) ** 2).sum(axis=(1, 2)).max()
    incident = (reference**2).sum(axis=(1, 2)).max()
    return 10.0 * math.log10(err / incident)


def energy_history(af, config, excitation=None):
    """Discrete acoustic energy after every step of a full run."""
    grid = prepare(af, config)
    if excitation is None:
        excitation = make_band_passed_pulse(config.sample_rate, config.n_steps)
    energies = []
    prev = [grid.vx.copy(), grid.vy.copy()]

    def record(g):
        energies.append(acoustic_energy(g, config, prev[0], prev[1]))
        prev[0][...] = g.vx
        prev[1][...] = g.vy

    trace = run_simulation(af, config, excitation, grid=grid, callback=record)
    return np.asarray(energies), trace
