"""Tube geometry: area functions, rasterization and depth maps.

A vocal tract is described by a 1D area function (a list of tubelets from
glottis to lips). It is laid out horizontally on a square grid of spacing
``ds``: each grid column samples the tubelet under its center, the open
height of the column is the circular diameter of that tubelet, and the same
diameter is used as the out-of-plane depth for the 2.5D solver.

Array conventions used everywhere in the package:

* cell arrays have shape ``(N, M)`` (rows, columns); columns run from the
  glottis (left) to the lips (right);
* x-velocity faces have shape ``(N, M + 1)``; ``vx[j, i]`` sits between cells
  ``(j, i - 1)`` and ``(j, i)``;
* y-velocity faces have shape ``(N + 1, M)``; ``vy[j, i]`` sits between cells
  ``(j - 1, i)`` and ``(j, i)``.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import IO, Iterable, Union

import numpy as np

__all__ = [
    "AreaFunction",
    "AreaFunctionError",
    "CellKind",
    "GeometryError",
    "GridGeometry",
    "Margins",
    "OPEN_END_MARGINS",
    "RADIATION_MARGINS",
    "ResolutionError",
    "Termination",
    "add_radiation_domain",
    "area_to_diameter",
    "build_geometry",
    "compute_domain_size",
    "dump_geometry",
    "free_field_geometry",
    "load_area_function",
    "rasterize_tube",
    "sample_depths",
]


class GeometryError(ValueError):
    """Raised when a simulation domain cannot be constructed."""


class AreaFunctionError(GeometryError):
    """Raised for unreadable or invalid area-function input."""


class ResolutionError(GeometryError):
    """Raised when the grid spacing is too coarse for the tube."""


class CellKind(IntEnum):
    AIR = 0
    WALL = 1
    EXCITATION = 2
    OPEN_END = 3
    BAFFLE = 4
    ABSORBING = 5


# one character per kind for the debug dump
_KIND_CHARS = {
    CellKind.AIR: ".",
    CellKind.WALL: "#",
    CellKind.EXCITATION: "E",
    CellKind.OPEN_END: "O",
    CellKind.BAFFLE: "B",
    CellKind.ABSORBING: "~",
}


class Termination(str, Enum):
    OPEN_END = "open"
    RADIATION = "radiation"


@dataclass(frozen=True)
class Margins:
    """Padding (in cells) around the tube block.

    ``left`` includes the wall column closing the glottal end and
    ``vertical`` includes the wall rows lining the contour, so both must be
    at least 1. ``right`` is counted after the open-end column.
    """

    left: int = 1
    right: int = 0
    vertical: int = 1

    def __post_init__(self) -> None:
        if self.left < 1 or self.vertical < 1 or self.right < 0:
            raise GeometryError(f"invalid margins {self}")


# Fixed once for the open-end layout and shared by every resolution.
OPEN_END_MARGINS = Margins(left=2, right=1, vertical=2)
# Radiation mode only needs the tube and its lining before the baffle is added.
RADIATION_MARGINS = Margins(left=1, right=0, vertical=1)


@dataclass(frozen=True)
class AreaFunction:
    """Tubelets ordered from glottis to lips, in SI units."""

    sections: tuple[tuple[float, float], ...]
    name: str = ""

    def __post_init__(self) -> None:
        if not self.sections:
            raise AreaFunctionError("no sections")
        sections = tuple((float(l), float(a)) for l, a in self.sections)
        for k, (length, area) in enumerate(sections):
            if not (math.isfinite(length) and length > 0):
                raise AreaFunctionError(f"section {k}: axial length must be > 0, got {length}")
            if not math.isfinite(area) or area < 0:
                raise AreaFunctionError(f"section {k}: area must be >= 0, got {area}")
        object.__setattr__(self, "sections", sections)

    @classmethod
    def from_arrays(cls, lengths: Iterable[float], areas: Iterable[float], name: str = "") -> AreaFunction:
        lengths = list(lengths)
        areas = list(areas)
        if len(lengths) != len(areas):
            raise AreaFunctionError("lengths and areas differ in size")
        return cls(tuple(zip(lengths, areas)), name)

    @classmethod
    def uniform(cls, length: float, diameter: float, n_sections: int = 1, name: str = "uniform") -> AreaFunction:
        area = math.pi * diameter**2 / 4.0
        return cls(tuple((length / n_sections, area) for _ in range(n_sections)), name)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s[0] for s in self.sections])

    @property
    def areas(self) -> np.ndarray:
        return np.array([s[1] for s in self.sections])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def diameters(self) -> np.ndarray:
        return 2.0 * np.sqrt(self.areas / math.pi)

    def section_at(self, x: np.ndarray) -> np.ndarray:
        """Index of the tubelet containing each axial position (clamped)."""
        edges = np.cumsum(self.lengths)
        idx = np.searchsorted(edges, x, side="right")
        return np.clip(idx, 0, len(self.sections) - 1)


def area_to_diameter(area: float) -> float:
    """Diameter of the circle with the given cross-sectional area."""
    if area < 0:
        raise ValueError(f"area must be >= 0, got {area}")
    return 2.0 * math.sqrt(area / math.pi)


# ---------------------------------------------------------------------------
# Area-function files
# ---------------------------------------------------------------------------

_UNIT_SCALE = {"m": (1.0, 1.0), "cm": (1e-2, 1e-4), "mm": (1e-3, 1e-6)}

Source = Union[bytes, str, os.PathLike, IO[bytes], IO[str]]


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return fh.read()
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def load_area_function(source: Source, format: str = "csv", name: str | None = None) -> AreaFunction:
    """Parse an area function.

    ``csv`` input is one ``axial_length,area`` row per tubelet, glottis first,
    and must carry a ``# units: cm`` or ``# units: m`` header line before the
    first row. Other ``#`` lines are comments, except ``# name: <label>``.
    ``json`` input is ``{"name": ..., "units": ..., "sections": [[l, a], ...]}``.

    Raw bytes and strings are parsed as file contents; use ``Path`` objects
    for file names.
    """
    if isinstance(source, str):
        text = source
    else:
        text = _read_text(source)
    if format == "csv":
        af = _parse_csv(text)
    elif format == "json":
        af = _parse_json(text)
    else:
        raise AreaFunctionError(f"unknown area-function format {format!r}")
    if name is not None:
        af = replace(af, name=name)
    return af


def _parse_csv(text: str) -> AreaFunction:
    units = None
    label = ""
    rows: list[tuple[float, float]] = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line.lstrip("#").partition(":")
            key = key.strip().lower()
            if key == "units":
                units = value.strip().lower()
                if units not in _UNIT_SCALE:
                    raise AreaFunctionError(f"line {lineno}: unsupported units {units!r}")
            elif key == "name":
                label = value.strip()
            continue
        if units is None:
            raise AreaFunctionError(f"line {lineno}: missing '# units: cm|m' header before data")
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise AreaFunctionError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            length, area = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise AreaFunctionError(f"line {lineno}: {exc}") from None
        if area < 0:
            raise AreaFunctionError(f"line {lineno}: negative area {area}")
        if length <= 0:
            raise AreaFunctionError(f"line {lineno}: axial length must be > 0")
        lscale, ascale = _UNIT_SCALE[units]
        rows.append((length * lscale, area * ascale))
    if not rows:
        raise AreaFunctionError("no sections")
    return AreaFunction(tuple(rows), label)


def _parse_json(text: str) -> AreaFunction:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AreaFunctionError(f"line {exc.lineno}: {exc.msg}") from None
    units = str(doc.get("units", "")).lower()
    if units not in _UNIT_SCALE:
        raise AreaFunctionError(f"missing or unsupported units {units!r}")
    lscale, ascale = _UNIT_SCALE[units]
    sections = doc.get("sections") or []
    if not sections:
        raise AreaFunctionError("no sections")
    rows = []
    for k, sec in enumerate(sections):
        if len(sec) != 2:
            raise AreaFunctionError(f"section {k}: expected [length, area]")
        if sec[1] < 0:
            raise AreaFunctionError(f"section {k}: negative area {sec[1]}")
        rows.append((sec[0] * lscale, sec[1] * ascale))
    return AreaFunction(tuple(rows), str(doc.get("name", "")))


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TubeLayout:
    """Column sampling of an area function at spacing ``ds``."""

    n_cols: int
    heights: np.ndarray  # air cells per column
    diameters: np.ndarray  # sampled diameter per column
    max_height: int

    @classmethod
    def sample(cls, af: AreaFunction, ds: float) -> TubeLayout:
        if not ds > 0:
            raise ResolutionError(f"ds must be > 0, got {ds}")
        n_cols = int(round(af.total_length / ds))
        if n_cols < 1:
            raise ResolutionError(f"tube of length {af.total_length} m spans no cell at ds={ds}")
        centers = (np.arange(n_cols) + 0.5) * ds
        sec = af.section_at(centers)
        missed = sorted(set(np.flatnonzero(af.areas > 0)) - set(sec.tolist()))
        if missed:
            raise ResolutionError(
                f"ds={ds} too coarse: sections {missed} with nonzero area get no grid column"
            )
        diameters = af.diameters[sec]
        heights = np.where(af.areas[sec] > 0, np.maximum(1, np.rint(diameters / ds)), 0).astype(int)
        if heights.max() == 0:
            raise ResolutionError("tube has no air cells")
        return cls(n_cols, heights, diameters, int(heights.max()))


@dataclass(frozen=True, eq=False)
class GridGeometry:
    """Rasterized simulation domain.

    ``depth_bar``, ``depth_x`` and ``depth_y`` are ``None`` until
    :func:`sample_depths` has been applied. ``in_tube`` marks the tube air and
    its wall lining; ``tube_origin`` is the column of the first tubelet and
    ``mouth_col`` the first column past the lips.
    """

    ds: float
    mode: Termination
    kind: np.ndarray
    beta: np.ndarray
    in_tube: np.ndarray
    tube_origin: int
    n_tube_cols: int
    axis_row: float  # row coordinate of the tube axis (cell edges)
    column_diameters: np.ndarray
    depth_bar: np.ndarray | None = None
    depth_x: np.ndarray | None = None
    depth_y: np.ndarray | None = None
    pml_layers: int = 0
    baffle_center: tuple[float, float] | None = None  # (col, row) in cell-edge units
    baffle_radius: float | None = None  # meters
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for arr in (self.kind, self.beta, self.in_tube, self.depth_bar, self.depth_x, self.depth_y):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kind.shape

    @property
    def width(self) -> int:
        return self.kind.shape[1]

    @property
    def height(self) -> int:
        return self.kind.shape[0]

    @property
    def mouth_col(self) -> int:
        return self.tube_origin + self.n_tube_cols

    @property
    def mouth_diameter(self) -> float:
        return float(self.column_diameters[-1])

    def count(self, kind: CellKind) -> int:
        return int(np.count_nonzero(self.kind == kind))


def _beta_for(kind: np.ndarray) -> np.ndarray:
    beta = np.ones(kind.shape)
    beta[(kind == CellKind.WALL) | (kind == CellKind.BAFFLE)] = 0.0
    return beta


def rasterize_tube(
    af: AreaFunction,
    ds: float,
    mode: Termination | str = Termination.OPEN_END,
    margins: Margins | None = None,
) -> GridGeometry:
    """Lay the tube out horizontally with its axis centered vertically.

    In open-end mode every non-air cell is wall and one column of
    Dirichlet (open-end) cells follows the lips. In radiation mode only the
    contour lining is wall and the rest is air, ready for
    :func:`add_radiation_domain`.
    """
    mode = Termination(mode)
    if margins is None:
        margins = OPEN_END_MARGINS if mode is Termination.OPEN_END else RADIATION_MARGINS
    layout = TubeLayout.sample(af, ds)
    width, height = _open_region_size(layout, mode, margins)
    H = layout.max_height
    x0 = margins.left
    y0 = margins.vertical

    air = np.zeros((height, width), dtype=bool)
    for c, h in enumerate(layout.heights):
        start = y0 + (H - h) // 2
        air[start : start + h, x0 + c] = True

    # lining: non-air cells sharing a face with tube air, within the tube
    # columns plus the glottal closure column
    near = np.zeros_like(air)
    near[1:, :] |= air[:-1, :]
    near[:-1, :] |= air[1:, :]
    near[:, 1:] |= air[:, :-1]
    near[:, :-1] |= air[:, 1:]
    lining = near & ~air
    lining[:, : x0 - 1] = False
    lining[:, x0 + layout.n_cols :] = False

    kind = np.full((height, width), CellKind.AIR, dtype=np.int8)
    if mode is Termination.OPEN_END:
        kind[~air] = CellKind.WALL
        mouth = x0 + layout.n_cols
        kind[air[:, mouth - 1], mouth] = CellKind.OPEN_END
    else:
        kind[lining] = CellKind.WALL
    first = air[:, x0]
    kind[first, x0] = CellKind.EXCITATION

    in_tube = air | lining
    return GridGeometry(
        ds=float(ds),
        mode=mode,
        kind=kind,
        beta=_beta_for(kind),
        in_tube=in_tube,
        tube_origin=x0,
        n_tube_cols=layout.n_cols,
        axis_row=y0 + H / 2.0,
        column_diameters=layout.diameters.copy(),
        extras={"margins": margins},
    )


def _open_region_size(layout: TubeLayout, mode: Termination, margins: Margins) -> tuple[int, int]:
    end_cols = 1 if mode is Termination.OPEN_END else 0
    width = margins.left + layout.n_cols + end_cols + margins.right
    height = layout.max_height + 2 * margins.vertical
    return width, height


def _column_depths(af: AreaFunction, geo: GridGeometry) -> np.ndarray:
    cols = np.arange(geo.width)
    x = (cols - geo.tube_origin + 0.5) * geo.ds
    centers = np.cumsum(af.lengths) - 0.5 * af.lengths
    # piecewise linear between tubelet centers, constant beyond the end centers
    return np.interp(x, centers, af.diameters)


def sample_depths(af: AreaFunction, geo: GridGeometry) -> GridGeometry:
    """Attach the depth maps of the 2.5D scheme.

    Pressure cells take the diameter interpolated linearly between tubelet
    centers at the cell center. Hard steps in depth would push the weighted
    divergence past what the CFL step tolerates. In radiation mode cells outside the
    tube take the mouth-exit depth. Velocity faces average the two adjacent
    pressure-cell depths; faces on the domain edge copy their single
    neighbor.
    """
    N, M = geo.shape
    bar = np.broadcast_to(_column_depths(af, geo), (N, M)).copy()
    if geo.mode is Termination.RADIATION:
        if not geo.mouth_diameter > 0:
            raise GeometryError("radiation mode needs an open mouth (last section area > 0)")
        bar[~geo.in_tube] = geo.mouth_diameter

    dx = np.empty((N, M + 1))
    dx[:, 1:-1] = 0.5 * (bar[:, 1:] + bar[:, :-1])
    dx[:, 0] = bar[:, 0]
    dx[:, -1] = bar[:, -1]
    dy = np.empty((N + 1, M))
    dy[1:-1, :] = 0.5 * (bar[1:, :] + bar[:-1, :])
    dy[0, :] = bar[0, :]
    dy[-1, :] = bar[-1, :]

    updated = geo.beta > 0
    if np.any(bar[updated & (geo.kind != CellKind.OPEN_END)] <= 0):
        raise GeometryError("nonpositive depth on an air cell")
    return replace(geo, depth_bar=bar, depth_x=dx, depth_y=dy)


# ---------------------------------------------------------------------------
# Radiation domain
# ---------------------------------------------------------------------------


def _radiation_size(
    tube_shape: tuple[int, int], mouth_col: int, axis_row: float, ds: float,
    baffle_diameter: float, pml_layers: int, margin: float,
) -> tuple[int, int, int, int]:
    """New (width, height) and the (col, row) offset of the tube block."""
    radius = baffle_diameter / 2.0 / ds
    pad = int(math.ceil(margin / ds)) + pml_layers
    span = int(math.ceil(baffle_diameter / ds))
    width = height = span + 2 * pad
    # circle's rightmost point sits on the mouth plane
    cx = mouth_col - radius
    ox = int(round(width / 2.0 - cx))
    oy = int(round(height / 2.0 - axis_row))
    h, w = tube_shape
    if ox < pml_layers or oy < pml_layers or ox + w > width - pml_layers or oy + h > height - pml_layers:
        raise GeometryError("tube does not fit inside the baffle domain")
    return width, height, ox, oy


def add_radiation_domain(
    geo: GridGeometry,
    baffle_diameter: float = 0.20,
    pml_layers: int = 6,
    margin: float = 0.01,
    af: AreaFunction | None = None,
) -> GridGeometry:
    """Embed the tube in a circular baffle surrounded by free field and PML.

    The baffle is a one-cell ring whose rightmost point lies on the mouth
    plane, on the tube axis, so the mouth exit opens through it. Cells inside
    the ring that are not tube are air, as are cells outside the ring.
    ``margin`` meters of free field separate the ring from the absorbing
    layers on every side. Depth maps are resampled when ``af`` is given.
    """
    if geo.mode is not Termination.RADIATION:
        raise GeometryError("add_radiation_domain needs a geometry rasterized in radiation mode")
    if pml_layers < 0:
        raise GeometryError("pml_layers must be >= 0")
    ds = geo.ds
    radius = baffle_diameter / 2.0
    rows, cols = np.nonzero(geo.in_tube)
    tube_len = (cols.max() - cols.min() + 1) * ds
    tube_h = (rows.max() - rows.min() + 1) * ds
    if baffle_diameter < tube_len or baffle_diameter < tube_h:
        raise GeometryError(
            f"baffle diameter {baffle_diameter} m smaller than tube bounding box "
            f"({tube_len:.4f} x {tube_h:.4f} m)"
        )

    width, height, ox, oy = _radiation_size(
        geo.shape, geo.mouth_col, geo.axis_row, ds, baffle_diameter, pml_layers, margin
    )
    kind = np.full((height, width), CellKind.AIR, dtype=np.int8)
    in_tube = np.zeros((height, width), dtype=bool)
    h, w = geo.shape
    kind[oy : oy + h, ox : ox + w] = geo.kind
    in_tube[oy : oy + h, ox : ox + w] = geo.in_tube

    cx = (geo.mouth_col + ox) - radius / ds
    cy = geo.axis_row + oy
    jj, ii = np.mgrid[0:height, 0:width]
    r = np.hypot(ii + 0.5 - cx, jj + 0.5 - cy) * ds
    ring = (r > radius - ds) & (r <= radius) & ~in_tube
    # tube cells in the left half must sit strictly inside the ring
    left_half = in_tube & (ii + 0.5 < cx)
    if np.any(r[left_half] > radius - ds):
        raise GeometryError("tube contour crosses the baffle away from the mouth")
    kind[ring] = CellKind.BAFFLE

    if pml_layers:
        edge = np.minimum.reduce([ii, jj, width - 1 - ii, height - 1 - jj])
        absorbing = edge < pml_layers
        if np.any(absorbing & (kind != CellKind.AIR)):
            raise GeometryError("absorbing layers would overwrite baffle or tube cells")
        kind[absorbing] = CellKind.ABSORBING

    out = replace(
        geo,
        kind=kind,
        beta=_beta_for(kind),
        in_tube=in_tube,
        tube_origin=geo.tube_origin + ox,
        axis_row=cy,
        depth_bar=None,
        depth_x=None,
        depth_y=None,
        pml_layers=pml_layers,
        baffle_center=(cx, cy),
        baffle_radius=radius,
        extras={**geo.extras, "radiation_margin": margin},
    )
    if af is not None:
        out = sample_depths(af, out)
    return out


def compute_domain_size(
    af: AreaFunction,
    ds: float,
    mode: Termination | str = Termination.OPEN_END,
    margins: Margins | None = None,
    baffle_diameter: float = 0.20,
    pml_layers: int = 6,
    radiation_margin: float = 0.01,
) -> tuple[int, int]:
    """``(width M, height N)`` of the smallest domain holding the tube.

    Matches the shape produced by :func:`build_geometry` with the same
    arguments, without allocating the grid.
    """
    mode = Termination(mode)
    if margins is None:
        margins = OPEN_END_MARGINS if mode is Termination.OPEN_END else RADIATION_MARGINS
    layout = TubeLayout.sample(af, ds)
    width, height = _open_region_size(layout, mode, margins)
    if mode is Termination.OPEN_END:
        return width, height
    axis_row = margins.vertical + layout.max_height / 2.0
    w, h, _, _ = _radiation_size(
        (height, width), margins.left + layout.n_cols, axis_row, ds,
        baffle_diameter, pml_layers, radiation_margin,
    )
    return w, h


def build_geometry(
    af: AreaFunction,
    ds: float,
    mode: Termination | str = Termination.OPEN_END,
    margins: Margins | None = None,
    baffle_diameter: float = 0.20,
    pml_layers: int = 6,
    radiation_margin: float = 0.01,
) -> GridGeometry:
    """Rasterize, add the radiation domain if requested, and sample depths."""
    mode = Termination(mode)
    geo = rasterize_tube(af, ds, mode, margins)
    if mode is Termination.RADIATION:
        geo = add_radiation_domain(geo, baffle_diameter, pml_layers, radiation_margin)
    return sample_depths(af, geo)


def dump_geometry(geo: GridGeometry) -> str:
    """Cell kinds as text, one line per grid row, top row first."""
    lut = np.array([_KIND_CHARS[CellKind(k)] for k in range(len(CellKind))])
    chars = lut[geo.kind[::-1]]
    return "\n".join("".join(row) for row in chars) + "\n"


def free_field_geometry(width: int, height: int, ds: float, pml_layers: int = 6, depth: float = 1.0) -> GridGeometry:
    """Empty radiation-mode domain: air everywhere, absorbing rings at the edges.

    Used to characterise the absorbing layers on their own.
    """
    kind = np.full((height, width), CellKind.AIR, dtype=np.int8)
    if pml_layers:
        jj, ii = np.mgrid[0:height, 0:width]
        edge = np.minimum.reduce([ii, jj, width - 1 - ii, height - 1 - jj])
        kind[edge < pml_layers] = CellKind.ABSORBING
    geo = GridGeometry(
        ds=float(ds),
        mode=Termination.RADIATION,
        kind=kind,
        beta=_beta_for(kind),
        in_tube=np.zeros((height, width), dtype=bool),
        tube_origin=width // 2,
        n_tube_cols=0,
        axis_row=height / 2.0,
        column_diameters=np.array([depth]),
        pml_layers=pml_layers,
    )
    return replace(
        geo,
        depth_bar=np.full((height, width), depth),
        depth_x=np.full((height, width + 1), depth),
        depth_y=np.full((height + 1, width), depth),
    )
