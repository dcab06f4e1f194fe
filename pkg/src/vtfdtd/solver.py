"""Staggered-grid FDTD solver for 2D and 2.5D tube acoustics.

Pressure lives at cell centers and velocities on cell faces. One time step
is::

    p  <- (D p - rho c^2 dt div(D v)) / D        # step_pressure
    v_b <- v_e - p / Z_n  at source faces        # glottal piston
    v_b <- +-p / Z_n      at air/wall faces      # locally reacting walls
    v  <- (beta v - beta^2 dt grad p / rho + dt (1 - beta) v_b)
          / (beta + dt (1 - beta))               # step_velocity

The 2D solver is the same kernel with every depth set to 1. Absorbing
layers use a split-field PML (``p = px + py``) with a quadratic damping
profile.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Callable

import numpy as np

from .geometry import (
    AreaFunction,
    CellKind,
    GridGeometry,
    Margins,
    Termination,
    build_geometry,
)

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"VTFS"
_FINITE_CHECK_EVERY = 64


class SimulationError(RuntimeError):
    """Base class for solver failures."""


class CFLError(SimulationError):
    """The time step exceeds the 2D stability bound."""


class InstabilityError(SimulationError):
    """A field became non-finite during time marching."""


class ModeError(SimulationError):
    """An operation was called for the wrong termination mode."""


class SolverKind(str, Enum):
    TWO_D = "2d"
    TWO_POINT_FIVE_D = "2.5d"


@dataclass(frozen=True)
class PhysicalConstants:
    rho: float = 1.14
    c: float = 350.0
    mu: float = 0.005

    def __post_init__(self) -> None:
        if not self.rho > 0 or not self.c > 0:
            raise ValueError("rho and c must be positive")
        if not 0 < self.mu < 1:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")


def cfl_timestep(ds: float, c: float) -> float:
    """Largest stable time step of the 2D scheme, ``ds / (sqrt(2) c)``."""
    if not ds > 0 or not c > 0:
        raise ValueError("ds and c must be positive")
    return ds / (math.sqrt(2.0) * c)


def absorption_from_admittance(mu: float) -> float:
    """Normal-incidence absorption coefficient for a normalized admittance."""
    if not 0 < mu < 1:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    refl = (1.0 - mu) / (1.0 + mu)
    return 1.0 - refl * refl


def wall_impedance(constants: PhysicalConstants) -> float:
    """Normal acoustic impedance of the locally reacting walls (rayls)."""
    alpha = absorption_from_admittance(constants.mu)
    root = math.sqrt(1.0 - alpha)
    return constants.rho * constants.c * (1.0 + root) / (1.0 - root)


def wall_velocity(p_w, z_n: float, normal=(1.0, 0.0)) -> np.ndarray:
    """Particle velocity into a wall for the pressure in front of it."""
    if not z_n > 0:
        raise ValueError("wall impedance must be positive")
    return np.multiply.outer(np.asarray(p_w, dtype=float) / z_n, np.asarray(normal, dtype=float))


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a run needs besides the area function and the source.

    ``dt`` defaults to the CFL limit. ``probe_offset`` is measured from the
    mouth plane, negative inside the tube; it defaults to 3 mm inside for
    open-end runs and 3 mm outside for radiation runs.
    """

    ds: float
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    dt: float | None = None
    duration: float = 0.05
    mode: Termination = Termination.OPEN_END
    probe_offset: float | None = None
    solver_kind: SolverKind = SolverKind.TWO_POINT_FIVE_D
    baffle_diameter: float = 0.20
    pml_layers: int = 6
    radiation_margin: float = 0.01
    margins: Margins | None = None
    pml_order: int = 2
    pml_reflection: float = 1e-4
    snapshot_every: int = 0
    snapshot_path: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Termination(self.mode))
        object.__setattr__(self, "solver_kind", SolverKind(self.solver_kind))
        if self.dt is None:
            object.__setattr__(self, "dt", cfl_timestep(self.ds, self.constants.c))
        if self.probe_offset is None:
            offset = -0.003 if self.mode is Termination.OPEN_END else 0.003
            object.__setattr__(self, "probe_offset", offset)
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.ds > 0 or not self.dt > 0:
            raise ValueError("ds and dt must be positive")

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    @property
    def n_steps(self) -> int:
        return n_steps(self.duration, self.dt)

    def check_cfl(self) -> None:
        limit = cfl_timestep(self.ds, self.constants.c)
        if self.dt > limit * (1.0 + 1e-12):
            raise CFLError(f"dt={self.dt:.6e} s exceeds the CFL bound {limit:.6e} s")


def n_steps(duration: float, dt: float) -> int:
    """``floor(duration / dt)``, tolerant of representation error."""
    ratio = duration / dt
    nearest = round(ratio)
    if abs(ratio - nearest) < 1e-9 * max(1.0, ratio):
        return int(nearest)
    return int(math.floor(ratio))


@dataclass(frozen=True)
class PressureTrace:
    samples: np.ndarray
    sample_rate: float
    probe_cell: tuple[int, int]

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.sample_rate


# ---------------------------------------------------------------------------
# Kernel coefficients
# ---------------------------------------------------------------------------


@dataclass
class _Faces:
    """Velocity faces that are prescribed rather than integrated."""

    flat: np.ndarray  # flat index into the face array
    cell: np.ndarray  # flat index of the air cell feeding the wall velocity
    sign: np.ndarray  # +1 when the wall lies in the positive axis direction


@dataclass
class _Pml:
    cells: np.ndarray  # flat cell indices
    apx: np.ndarray
    bpx: np.ndarray
    apy: np.ndarray
    bpy: np.ndarray


@dataclass
class Coefficients:
    """Precomputed per-cell and per-face update coefficients."""

    k_p: float  # rho c^2 dt / ds
    w_east: np.ndarray
    w_west: np.ndarray
    w_north: np.ndarray
    w_south: np.ndarray
    p_mask: np.ndarray  # 1.0 where pressure is integrated
    ax: np.ndarray  # interior x faces, (N, M - 1)
    bx: np.ndarray
    ay: np.ndarray  # interior y faces, (N - 1, M)
    by: np.ndarray
    beta_x: np.ndarray
    beta_y: np.ndarray
    wall_x: _Faces
    wall_y: _Faces
    source_x: np.ndarray  # flat vx indices of glottal source faces
    source_cell: np.ndarray
    blend_x: np.ndarray  # faces with 0 < beta < 1 (flat)
    blend_y: np.ndarray
    z_n: float
    pml: _Pml | None


def _face_betas(beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    N, M = beta.shape
    bx = np.zeros((N, M + 1))
    bx[:, 1:-1] = np.minimum(beta[:, 1:], beta[:, :-1])
    by = np.zeros((N + 1, M))
    by[1:-1, :] = np.minimum(beta[1:, :], beta[:-1, :])
    return bx, by


def _wall_faces(live: np.ndarray, beta_face: np.ndarray, axis: int) -> _Faces:
    """Faces with beta = 0 that touch exactly one integrated cell."""
    N, M = live.shape
    if axis == 1:
        lo = np.zeros((N, M + 1), dtype=bool)
        hi = np.zeros((N, M + 1), dtype=bool)
        lo[:, 1:] = live  # cell on the low side (i - 1) is live
        hi[:, :-1] = live
        lo_idx = lambda j, i: j * M + (i - 1)  # noqa: E731
        hi_idx = lambda j, i: j * M + i  # noqa: E731
    else:
        lo = np.zeros((N + 1, M), dtype=bool)
        hi = np.zeros((N + 1, M), dtype=bool)
        lo[1:, :] = live
        hi[:-1, :] = live
        lo_idx = lambda j, i: (j - 1) * M + i  # noqa: E731
        hi_idx = lambda j, i: j * M + i  # noqa: E731
    clamp = beta_face == 0
    # wall on the high side: velocity into the wall is +p/Z
    j1, i1 = np.nonzero(clamp & lo & ~hi)
    j2, i2 = np.nonzero(clamp & hi & ~lo)
    shape = beta_face.shape
    flat = np.concatenate([np.ravel_multi_index((j1, i1), shape), np.ravel_multi_index((j2, i2), shape)])
    cell = np.concatenate([lo_idx(j1, i1), hi_idx(j2, i2)]).astype(np.intp)
    sign = np.concatenate([np.ones(len(j1)), -np.ones(len(j2))])
    return _Faces(flat.astype(np.intp), cell, sign)


def pml_profile(depth: np.ndarray, layers: int, ds: float, c: float, order: int, reflection: float) -> np.ndarray:
    """Damping ``sigma`` (1/s) at a normalized depth into the layer.

    ``depth`` is in cells from the inner PML edge; the profile is
    ``sigma_max (depth / layers)^order`` with ``sigma_max`` set for the
    requested normal-incidence reflection of the continuous layer.
    """
    if layers == 0:
        return np.zeros_like(depth, dtype=float)
    thickness = layers * ds
    sigma_max = -(order + 1) * c * math.log(reflection) / (2.0 * thickness)
    d = np.clip(depth / layers, 0.0, 1.0)
    return sigma_max * d**order


def _pml_sigmas(shape, layers, ds, c, order, reflection):
    """sigma_x / sigma_y at cell centers and at x / y faces."""
    N, M = shape

    def along(n_cells: int, pos: np.ndarray) -> np.ndarray:
        # pos in cell-edge coordinates; inner PML edges at `layers` and n - layers
        depth = np.maximum(layers - pos, pos - (n_cells - layers))
        return pml_profile(np.maximum(depth, 0.0), layers, ds, c, order, reflection)

    sx_c = along(M, np.arange(M) + 0.5)
    sy_c = along(N, np.arange(N) + 0.5)
    sx_f = along(M, np.arange(M + 1, dtype=float))
    sy_f = along(N, np.arange(N + 1, dtype=float))
    return sx_c, sy_c, sx_f, sy_f


def build_coefficients(geo: GridGeometry, config: SimulationConfig) -> Coefficients:
    if geo.depth_bar is None:
        raise SimulationError("geometry has no depth maps; call sample_depths first")
    const = config.constants
    ds, dt = config.ds, config.dt
    kind = geo.kind
    N, M = geo.shape

    if config.solver_kind is SolverKind.TWO_D:
        bar = np.ones((N, M))
        dx = np.ones((N, M + 1))
        dy = np.ones((N + 1, M))
    else:
        bar, dx, dy = geo.depth_bar, geo.depth_x, geo.depth_y

    live = (geo.beta > 0) & (kind != CellKind.OPEN_END)
    if np.any(bar[live] <= 0):
        raise SimulationError("nonpositive depth on an integrated cell")
    safe = np.where(live, bar, 1.0)
    w_east = np.where(live, dx[:, 1:] / safe, 0.0)
    w_west = np.where(live, dx[:, :-1] / safe, 0.0)
    w_north = np.where(live, dy[1:, :] / safe, 0.0)
    w_south = np.where(live, dy[:-1, :] / safe, 0.0)

    beta_x, beta_y = _face_betas(geo.beta)
    k_v = dt / (const.rho * ds)
    ax = np.ones((N, M - 1))
    bx = np.full((N, M - 1), k_v)
    ay = np.ones((N - 1, M))
    by = np.full((N - 1, M), k_v)

    pml = None
    if geo.pml_layers:
        sx_c, sy_c, sx_f, sy_f = _pml_sigmas(
            geo.shape, geo.pml_layers, ds, const.c, config.pml_order, config.pml_reflection
        )
        half = 0.5 * dt
        ax[:] = ((1 - half * sx_f[1:-1]) / (1 + half * sx_f[1:-1]))[None, :]
        bx[:] = (k_v / (1 + half * sx_f[1:-1]))[None, :]
        ay[:] = ((1 - half * sy_f[1:-1]) / (1 + half * sy_f[1:-1]))[:, None]
        by[:] = (k_v / (1 + half * sy_f[1:-1]))[:, None]
        cells = np.flatnonzero(kind.ravel() == CellKind.ABSORBING)
        jj, ii = np.unravel_index(cells, geo.shape)
        k_p = const.rho * const.c**2 * dt / ds
        sx, sy = sx_c[ii], sy_c[jj]
        pml = _Pml(
            cells=cells,
            apx=(1 - half * sx) / (1 + half * sx),
            bpx=k_p / (1 + half * sx),
            apy=(1 - half * sy) / (1 + half * sy),
            bpy=k_p / (1 + half * sy),
        )

    # clamped faces carry v_b only; away from air that is zero
    ax[beta_x[:, 1:-1] == 0] = 0.0
    bx[beta_x[:, 1:-1] == 0] = 0.0
    ay[beta_y[1:-1, :] == 0] = 0.0
    by[beta_y[1:-1, :] == 0] = 0.0

    wall_x = _wall_faces(live | (kind == CellKind.OPEN_END), beta_x, axis=1)
    wall_y = _wall_faces(live | (kind == CellKind.OPEN_END), beta_y, axis=0)

    # glottal source: the clamped x faces on the low side of excitation cells
    exc = kind == CellKind.EXCITATION
    src_j, src_i = np.nonzero(exc)
    keep = beta_x[src_j, src_i] == 0
    source_x = np.ravel_multi_index((src_j[keep], src_i[keep]), beta_x.shape).astype(np.intp)
    source_cell = np.ravel_multi_index((src_j[keep], src_i[keep]), geo.shape).astype(np.intp)

    blend_x = np.flatnonzero((beta_x > 0) & (beta_x < 1))
    blend_y = np.flatnonzero((beta_y > 0) & (beta_y < 1))

    return Coefficients(
        k_p=const.rho * const.c**2 * dt / ds,
        w_east=w_east,
        w_west=w_west,
        w_north=w_north,
        w_south=w_south,
        p_mask=live.astype(float),
        ax=ax,
        bx=bx,
        ay=ay,
        by=by,
        beta_x=beta_x,
        beta_y=beta_y,
        wall_x=wall_x,
        wall_y=wall_y,
        source_x=source_x,
        source_cell=source_cell,
        blend_x=blend_x,
        blend_y=blend_y,
        z_n=wall_impedance(const),
        pml=pml,
    )


@dataclass
class YeeGrid:
    """Field state on the staggered grid."""

    geometry: GridGeometry
    coeffs: Coefficients
    p: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    pml_aux: dict[str, np.ndarray] = field(default_factory=dict)
    v_e: float = 0.0  # source velocity for the current step
    step_index: int = 0

    @classmethod
    def from_geometry(cls, geo: GridGeometry, config: SimulationConfig) -> YeeGrid:
        N, M = geo.shape
        coeffs = build_coefficients(geo, config)
        aux = {}
        if coeffs.pml is not None:
            n = len(coeffs.pml.cells)
            aux = {"px": np.zeros(n), "py": np.zeros(n)}
        return cls(geo, coeffs, np.zeros((N, M)), np.zeros((N, M + 1)), np.zeros((N + 1, M)), aux)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.p).all() and np.isfinite(self.vx).all() and np.isfinite(self.vy).all())


def _divergences(grid: YeeGrid) -> tuple[np.ndarray, np.ndarray]:
    c = grid.coeffs
    divx = c.w_east * grid.vx[:, 1:] - c.w_west * grid.vx[:, :-1]
    divy = c.w_north * grid.vy[1:, :] - c.w_south * grid.vy[:-1, :]
    return divx, divy


def step_pressure(grid: YeeGrid, config: SimulationConfig) -> np.ndarray:
    """Advance pressure one step from the current velocities.

    Wall and open-end cells are held at zero; absorbing cells use the
    split-field update of :func:`step_pml`.
    """
    c = grid.coeffs
    divx, divy = _divergences(grid)
    p = grid.p
    p -= c.k_p * (divx + divy)
    p *= c.p_mask
    if c.pml is not None:
        _pml_pressure(grid, divx, divy)
    return p


def _pml_pressure(grid: YeeGrid, divx: np.ndarray, divy: np.ndarray) -> None:
    pml = grid.coeffs.pml
    px, py = grid.pml_aux["px"], grid.pml_aux["py"]
    px *= pml.apx
    px -= pml.bpx * divx.ravel()[pml.cells]
    py *= pml.apy
    py -= pml.bpy * divy.ravel()[pml.cells]
    grid.p.ravel()[pml.cells] = px + py


def boundary_velocities(grid: YeeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Prescribed velocities at the clamped x and y faces (wall and source)."""
    c = grid.coeffs
    pf = grid.p.ravel()
    vbx = c.wall_x.sign * pf[c.wall_x.cell] / c.z_n
    vby = c.wall_y.sign * pf[c.wall_y.cell] / c.z_n
    return vbx, vby


def step_velocity(grid: YeeGrid, config: SimulationConfig) -> tuple[np.ndarray, np.ndarray]:
    """Advance velocities from the new pressure.

    Faces with ``beta = 1`` integrate the pressure gradient (damped inside
    the PML); faces with ``beta = 0`` take the prescribed velocity ``v_b``
    exactly; intermediate ``beta`` uses the blended update literally.
    """
    c = grid.coeffs
    p = grid.p
    vx, vy = grid.vx, grid.vy
    vbx, vby = boundary_velocities(grid)
    # the source face velocity is v_e plus its wall term
    src_vb = None
    if len(c.source_x):
        src_vb = grid.v_e - p.ravel()[c.source_cell] / c.z_n

    blend = None
    if len(c.blend_x) or len(c.blend_y):
        blend = _blended(grid, config)

    vx[:, 1:-1] *= c.ax
    vx[:, 1:-1] -= c.bx * (p[:, 1:] - p[:, :-1])
    vy[1:-1, :] *= c.ay
    vy[1:-1, :] -= c.by * (p[1:, :] - p[:-1, :])
    vx[:, 0] = vx[:, -1] = 0.0
    vy[0, :] = vy[-1, :] = 0.0

    vx.ravel()[c.wall_x.flat] = vbx
    vy.ravel()[c.wall_y.flat] = vby
    if src_vb is not None:
        vx.ravel()[c.source_x] = src_vb
    if blend is not None:
        vx.ravel()[c.blend_x] = blend[0]
        vy.ravel()[c.blend_y] = blend[1]
    return vx, vy


def _blended(grid: YeeGrid, config: SimulationConfig) -> tuple[np.ndarray, np.ndarray]:
    """The full beta-weighted update for faces with 0 < beta < 1."""
    c = grid.coeffs
    dt, ds, rho = config.dt, config.ds, config.constants.rho
    p = grid.p
    gx = np.zeros_like(grid.vx)
    gx[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / ds
    gy = np.zeros_like(grid.vy)
    gy[1:-1, :] = (p[1:, :] - p[:-1, :]) / ds
    out = []
    for v, g, beta, idx in ((grid.vx, gx, c.beta_x, c.blend_x), (grid.vy, gy, c.beta_y, c.blend_y)):
        b = beta.ravel()[idx]
        vb = np.zeros_like(b)  # no wall coupling on partial faces
        out.append((b * v.ravel()[idx] - b * b * dt * g.ravel()[idx] / rho + dt * (1 - b) * vb) / (b + dt * (1 - b)))
    return out[0], out[1]


def step_pml(grid: YeeGrid, config: SimulationConfig) -> np.ndarray:
    """Split-field pressure update on the absorbing cells only.

    :func:`step_pressure` calls this internally; it is exposed for tests
    that exercise the layers in isolation. Velocity damping is folded into
    the face coefficients used by :func:`step_velocity`.
    """
    if grid.coeffs.pml is None or grid.geometry.mode is not Termination.RADIATION:
        raise ModeError("absorbing layers exist only in radiation mode")
    divx, divy = _divergences(grid)
    _pml_pressure(grid, divx, divy)
    return grid.p


def acoustic_energy(grid: YeeGrid, config: SimulationConfig, vx_prev: np.ndarray, vy_prev: np.ndarray) -> float:
    """Discrete energy conserved by the lossless staggered scheme.

    ``sum(D p^2 / (2 rho c^2)) + rho / 2 * sum(D v^- v^+)`` over integrated
    cells and faces, per unit cell area. ``vx_prev``/``vy_prev`` are the
    velocities one step behind the current ones.
    """
    const = config.constants
    geo = grid.geometry
    c = grid.coeffs
    if config.solver_kind is SolverKind.TWO_D:
        bar, dx, dy = 1.0, 1.0, 1.0
    else:
        bar, dx, dy = geo.depth_bar, geo.depth_x, geo.depth_y
    e_p = np.sum(c.p_mask * bar * grid.p**2) / (2 * const.rho * const.c**2)
    mx = c.beta_x == 1
    my = c.beta_y == 1
    kx = np.broadcast_to(dx, grid.vx.shape)
    ky = np.broadcast_to(dy, grid.vy.shape)
    e_v = 0.5 * const.rho * (
        np.sum((kx * grid.vx * vx_prev)[mx]) + np.sum((ky * grid.vy * vy_prev)[my])
    )
    return float(e_p + e_v)


# ---------------------------------------------------------------------------
# Time marching
# ---------------------------------------------------------------------------


def probe_cell(geo: GridGeometry, offset: float) -> tuple[int, int]:
    """Grid cell ``(row, col)`` on the tube axis at ``offset`` from the mouth plane."""
    x = geo.mouth_col * geo.ds + offset
    col = int(math.floor(x / geo.ds))
    row = int(math.floor(geo.axis_row))
    if not (0 <= col < geo.width):
        raise SimulationError(f"probe offset {offset} m falls outside the domain")
    return row, col


def prepare(af: AreaFunction, config: SimulationConfig) -> YeeGrid:
    """Algorithm set-up: geometry, depths, boundary and source cells."""
    config.check_cfl()
    geo = build_geometry(
        af,
        config.ds,
        config.mode,
        margins=config.margins,
        baffle_diameter=config.baffle_diameter,
        pml_layers=config.pml_layers,
        radiation_margin=config.radiation_margin,
    )
    return YeeGrid.from_geometry(geo, config)


def run_simulation(
    af: AreaFunction,
    config: SimulationConfig,
    excitation,
    *,
    grid: YeeGrid | None = None,
    callback: Callable[[YeeGrid], None] | None = None,
) -> PressureTrace:
    """Run the time-marching loop and record pressure at the probe.

    ``excitation`` is the per-step source velocity (an array or anything
    with a ``samples`` attribute); it is zero-padded or truncated to the
    number of steps. ``callback`` is called after every full step.
    """
    config.check_cfl()
    if grid is None:
        grid = prepare(af, config)
    steps = config.n_steps
    v_e = np.zeros(steps)
    src = np.asarray(getattr(excitation, "samples", excitation), dtype=float)
    v_e[: min(steps, len(src))] = src[:steps]

    probe = probe_cell(grid.geometry, config.probe_offset)
    pj, pi = probe
    trace = np.empty(steps)

    snap = None
    if config.snapshot_every and config.snapshot_path is not None:
        snap = open(config.snapshot_path, "wb")
    # blow-ups are reported through InstabilityError, not floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for n in range(steps):
                step_pressure(grid, config)
                grid.v_e = v_e[n]
                step_velocity(grid, config)
                grid.step_index = n + 1
                trace[n] = grid.p[pj, pi]
                if (n + 1) % _FINITE_CHECK_EVERY == 0 or n + 1 == steps:
                    if not grid.all_finite():
                        raise InstabilityError(f"non-finite field at step {n + 1}")
                if snap is not None and (n + 1) % config.snapshot_every == 0:
                    write_snapshot(snap, grid.p, n + 1)
                if callback is not None:
                    callback(grid)
        finally:
            if snap is not None:
                snap.close()
    return PressureTrace(trace, config.sample_rate, probe)


# ---------------------------------------------------------------------------
# Output formats
# ---------------------------------------------------------------------------


def write_trace(trace: PressureTrace, path) -> None:
    """Two columns: time in seconds, pressure in pascals."""
    data = np.column_stack([trace.times, trace.samples])
    header = f"sample_rate_hz={trace.sample_rate!r} probe_row={trace.probe_cell[0]} probe_col={trace.probe_cell[1]}"
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header)


def read_trace(path) -> PressureTrace:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#"):
        for token in first[1:].split():
            key, _, value = token.partition("=")
            meta[key] = value
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if "sample_rate_hz" in meta:
        rate = float(meta["sample_rate_hz"])
    else:
        rate = 1.0 / float(data[1, 0] - data[0, 0])
    probe = (int(meta.get("probe_row", -1)), int(meta.get("probe_col", -1)))
    return PressureTrace(data[:, 1].copy(), rate, probe)


def write_snapshot(fh: BinaryIO, field_: np.ndarray, step: int) -> None:
    """Append one frame: 16-byte header (magic, M, N, step) then float32 rows."""
    N, M = field_.shape
    fh.write(SNAPSHOT_MAGIC + struct.pack("<III", M, N, step))
    fh.write(np.ascontiguousarray(field_, dtype="<f4").tobytes())


def read_snapshots(path) -> list[tuple[int, np.ndarray]]:
    frames = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(16)
            if not head:
                break
            if head[:4] != SNAPSHOT_MAGIC:
                raise ValueError("bad snapshot magic")
            M, N, step = struct.unpack("<III", head[4:])
            data = np.frombuffer(fh.read(4 * M * N), dtype="<f4").reshape(N, M)
            frames.append((step, data))
    return frames


def with_solver(config: SimulationConfig, kind: SolverKind | str) -> SimulationConfig:
    return replace(config, solver_kind=SolverKind(kind))
