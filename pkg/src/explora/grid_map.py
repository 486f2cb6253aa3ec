"""Ternary occupancy grids and the geometric queries built on them.

A grid is an immutable snapshot: the raster array is read-only and every
change produces a new object with a higher ``revision``. Cell ``(row, col)``
covers ``[ox + col*r, ox + (col+1)*r) x [oy + row*r, oy + (row+1)*r)``; rows
grow with +y.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import _kernels

UNKNOWN_MARKER = -1.0


class CellState(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


class GridError(ValueError):
    """Bad grid construction parameters or malformed map files."""


class StaleFieldError(RuntimeError):
    """A distance field was used against a grid revision it was not built from."""


# ---------------------------------------------------------------------------
# sampling boundaries


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GridError(f"degenerate rectangle {self}")

    def contains(self, x, y):
        return (self.xmin <= x) & (x <= self.xmax) & (self.ymin <= y) & (y <= self.ymax)

    def bbox(self):
        return self.xmin, self.ymin, self.xmax, self.ymax


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GridError(f"disc radius must be positive, got {self.radius}")

    def contains(self, x, y):
        return (np.asarray(x) - self.cx) ** 2 + (np.asarray(y) - self.cy) ** 2 <= self.radius**2

    def bbox(self):
        return self.cx - self.radius, self.cy - self.radius, self.cx + self.radius, self.cy + self.radius


SamplingBoundary = Rect | Disc


# ---------------------------------------------------------------------------
# grid and distance field


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    revision: int = 0

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int8, copy=True)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise GridError(f"grid must be a non-empty 2D raster, got shape {cells.shape}")
        if not self.resolution > 0:
            raise GridError(f"resolution must be positive, got {self.resolution}")
        if cells.size and (cells.min() < 0 or cells.max() > 2):
            raise GridError("cell values must be CellState codes 0..2")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @classmethod
    def filled(cls, width, height, resolution, state=CellState.UNKNOWN, origin=(0.0, 0.0)):
        return cls(np.full((height, width), int(state), dtype=np.int8), resolution, origin)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def bounds(self) -> Rect:
        ox, oy = self.origin
        return Rect(ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution)

    def with_cells(self, cells) -> OccupancyGrid:
        """New revision with the given raster; same geometry."""
        return OccupancyGrid(cells, self.resolution, self.origin, self.revision + 1)

    def world_to_cell(self, x, y):
        """(row, col) of the cell containing the world point(s); may be out of bounds."""
        col = np.floor((np.asarray(x, dtype=float) - self.origin[0]) / self.resolution).astype(np.int64)
        row = np.floor((np.asarray(y, dtype=float) - self.origin[1]) / self.resolution).astype(np.int64)
        return row, col

    def cell_center(self, row, col):
        x = self.origin[0] + (np.asarray(col) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(row) + 0.5) * self.resolution
        return x, y

    def in_bounds(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (col >= 0) & (row < self.height) & (col < self.width)

    def state_at(self, x, y):
        """Cell state(s) at world point(s); out-of-bounds reads as UNKNOWN."""
        row, col = self.world_to_cell(x, y)
        inside = self.in_bounds(row, col)
        out = np.zeros(np.shape(row), dtype=np.int8)
        out[inside] = self.cells[row[inside], col[inside]]
        if out.ndim == 0:
            return CellState(int(out))
        return out

    def count(self, state: CellState) -> int:
        return int(np.count_nonzero(self.cells == state))

    def known_area(self) -> float:
        return np.count_nonzero(self.cells != CellState.UNKNOWN) * self.resolution**2

    @cached_property
    def distance_field(self) -> DistanceField:
        return rebuild_distance_field(self)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-cell Euclidean distance (m) from each cell center to the nearest occupied center.

    ``np.inf`` marks "no obstacle"; callers must clamp before doing arithmetic.
    """

    values: np.ndarray
    revision: int
    grid_id: int = field(default=0, repr=False)

    def check(self, grid: OccupancyGrid):
        if self.revision != grid.revision or self.grid_id != id(grid):
            raise StaleFieldError(
                f"distance field built for revision {self.revision}, grid is at {grid.revision}"
            )


def ternarize(prob, free_thresh=0.25, occ_thresh=0.65, resolution=0.05, origin=(0.0, 0.0)) -> OccupancyGrid:
    """Map an occupancy-probability raster onto the three cell states.

    NaN or ``UNKNOWN_MARKER`` entries read as unknown.
    """
    if not (0.0 <= free_thresh < occ_thresh <= 1.0):
        raise GridError(f"need 0 <= free_thresh < occ_thresh <= 1, got {free_thresh}, {occ_thresh}")
    p = np.asarray(prob, dtype=float)
    marker = np.isnan(p) | (p == UNKNOWN_MARKER)
    cells = np.full(p.shape, CellState.UNKNOWN, dtype=np.int8)
    cells[(p < free_thresh) & ~marker] = CellState.FREE
    cells[(p > occ_thresh) & ~marker] = CellState.OCCUPIED
    return OccupancyGrid(cells, resolution, origin)


def rebuild_distance_field(grid: OccupancyGrid) -> DistanceField:
    occupied = grid.cells == CellState.OCCUPIED
    if not occupied.any():
        values = np.full(grid.cells.shape, np.inf)
    else:
        values = distance_transform_edt(~occupied) * grid.resolution
    values.setflags(write=False)
    return DistanceField(values, grid.revision, id(grid))


def min_dist_to_obstacle(p, grid: OccupancyGrid, dist: DistanceField | None = None) -> float:
    """Distance-field value of the cell containing ``p`` (inf outside the grid)."""
    if dist is None:
        dist = grid.distance_field
    else:
        dist.check(grid)
    row, col = grid.world_to_cell(p[0], p[1])
    if not grid.in_bounds(row, col):
        return math.inf
    return float(dist.values[row, col])


def traversability_check(p0, p1, grid: OccupancyGrid, r_robot: float) -> bool:
    """True when every cell touched by the closed segment keeps ``r_robot`` clearance.

    Unknown cells count as free. The test is exact over the cells the segment
    crosses (including corner touches), which is the limit of ever-denser
    point sampling.
    """
    if not r_robot > 0:
        raise ValueError("r_robot must be positive")
    ox, oy = grid.origin
    return bool(
        _kernels.segment_clear(
            grid.distance_field.values, ox, oy, grid.resolution,
            float(p0[0]), float(p0[1]), float(p1[0]), float(p1[1]), float(r_robot),
        )
    )


def traversability_batch(p0, p1, grid: OccupancyGrid, r_robot: float) -> np.ndarray:
    p0 = np.ascontiguousarray(p0, dtype=float).reshape(-1, 2)
    p1 = np.ascontiguousarray(p1, dtype=float).reshape(-1, 2)
    ox, oy = grid.origin
    return _kernels.segments_clear(grid.distance_field.values, ox, oy, grid.resolution, p0, p1, float(r_robot))


def _centers_in(grid: OccupancyGrid, boundary: SamplingBoundary):
    """Row/col index ranges and mask of in-bounds cells whose centers lie in the boundary."""
    xmin, ymin, xmax, ymax = boundary.bbox()
    r = grid.resolution
    ox, oy = grid.origin
    c0 = max(int(math.floor((xmin - ox) / r - 0.5)), 0)
    c1 = min(int(math.ceil((xmax - ox) / r - 0.5)), grid.width - 1)
    r0 = max(int(math.floor((ymin - oy) / r - 0.5)), 0)
    r1 = min(int(math.ceil((ymax - oy) / r - 0.5)), grid.height - 1)
    if c1 < c0 or r1 < r0:
        return None
    xs = ox + (np.arange(c0, c1 + 1) + 0.5) * r
    ys = oy + (np.arange(r0, r1 + 1) + 0.5) * r
    mask = boundary.contains(xs[None, :], ys[:, None])
    return slice(r0, r1 + 1), slice(c0, c1 + 1), mask


def _lattice_points_in_disc(grid: OccupancyGrid, center, radius) -> int:
    """Number of cell centers of the grid's infinite lattice within the disc."""
    r = grid.resolution
    ox, oy = grid.origin
    disc = Disc(float(center[0]), float(center[1]), float(radius))
    rows = np.arange(math.floor((disc.cy - radius - oy) / r - 0.5) - 1, math.ceil((disc.cy + radius - oy) / r - 0.5) + 2)
    ys = oy + (rows + 0.5) * r
    half = np.sqrt(np.maximum(radius**2 - (ys - disc.cy) ** 2, 0.0))
    lo = np.ceil((disc.cx - half - ox) / r - 0.5)
    hi = np.floor((disc.cx + half - ox) / r - 0.5)

    def inside(col):
        return disc.contains(ox + (col + 0.5) * r, ys)

    # the square-root estimate can be off by one cell at either end; settle the
    # ends with the disc's own predicate so counts agree with per-cell tests
    n = np.maximum(hi - lo + 1, 0)
    n -= (n >= 1) & ~inside(lo)
    n -= (n >= 1) & (hi > lo) & ~inside(hi)
    n += inside(lo - 1) + inside(hi + 1)
    return int(n.sum())


def unknown_area_in_disc(center, radius: float, grid: OccupancyGrid) -> float:
    """Unknown area (m^2) whose cell centers fall inside the disc; off-grid cells count as unknown."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    total = _lattice_points_in_disc(grid, center, radius)
    sel = _centers_in(grid, Disc(float(center[0]), float(center[1]), float(radius)))
    known = 0
    if sel is not None:
        rs, cs, mask = sel
        known = int(np.count_nonzero(mask & (grid.cells[rs, cs] != CellState.UNKNOWN)))
    return (total - known) * grid.resolution**2


def free_area_in_boundary(grid: OccupancyGrid, boundary: SamplingBoundary) -> float:
    return free_cells_in_boundary(grid, boundary) * grid.resolution**2


def free_cells_in_boundary(grid: OccupancyGrid, boundary: SamplingBoundary) -> int:
    sel = _centers_in(grid, boundary)
    if sel is None:
        return 0
    rs, cs, mask = sel
    return int(np.count_nonzero(mask & (grid.cells[rs, cs] == CellState.FREE)))


# ---------------------------------------------------------------------------
# PGM + sidecar header


@dataclass(frozen=True)
class GrayMapping:
    occupied_max: int = 63
    free_min: int = 192
    occupied_level: int = 0
    unknown_level: int = 128
    free_level: int = 255

    def __post_init__(self):
        if not (0 <= self.occupied_max < self.free_min <= 255):
            raise GridError("gray mapping needs 0 <= occupied_max < free_min <= 255")
        if not (self.occupied_level <= self.occupied_max < self.unknown_level < self.free_min <= self.free_level):
            raise GridError("canonical gray levels must fall inside their bands")

    def to_states(self, gray):
        gray = np.asarray(gray)
        out = np.full(gray.shape, CellState.UNKNOWN, dtype=np.int8)
        out[gray <= self.occupied_max] = CellState.OCCUPIED
        out[gray >= self.free_min] = CellState.FREE
        return out

    def to_gray(self, cells):
        lut = np.array([self.unknown_level, self.free_level, self.occupied_level], dtype=np.uint8)
        return lut[np.asarray(cells, dtype=np.intp)]


def header_path(pgm_path) -> Path:
    p = Path(pgm_path)
    return p.with_suffix(".txt")


def _read_tokens(data: bytes, count: int, pos: int):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise GridError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Gray raster as stored in the file (row 0 = top of the image)."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _read_tokens(data, 4, 0)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise GridError("only 8-bit PGM is supported")
    if magic == b"P5":
        raw = data[pos + 1 : pos + 1 + w * h]
        if len(raw) != w * h:
            raise GridError("truncated P5 raster")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    if magic == b"P2":
        values = data[pos:].split()
        if len(values) < w * h:
            raise GridError("truncated P2 raster")
        return np.array([int(v) for v in values[: w * h]], dtype=np.uint8).reshape(h, w)
    raise GridError(f"not a PGM file: magic {magic!r}")


def write_pgm(path, gray: np.ndarray, binary: bool = True):
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(gray.tobytes())
        else:
            fh.write(b"P2\n%d %d\n255\n" % (w, h))
            for row in gray:
                fh.write(" ".join(str(int(v)) for v in row).encode() + b"\n")


def _parse_header(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GridError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_map(pgm_path, mapping: GrayMapping | None = None) -> OccupancyGrid:
    """Load a PGM map plus its ``.txt`` sidecar (resolution, origin, gray bands)."""
    hdr = _parse_header(header_path(pgm_path))
    try:
        resolution = float(hdr["resolution"])
    except KeyError:
        raise GridError(f"{header_path(pgm_path)}: missing 'resolution'") from None
    origin = tuple(float(v) for v in hdr.get("origin", "0 0").split())
    if len(origin) != 2:
        raise GridError("origin must have two components")
    if mapping is None:
        mapping = GrayMapping(
            **{k: int(hdr[k]) for k in ("occupied_max", "free_min", "occupied_level", "unknown_level", "free_level") if k in hdr}
        )
    gray = read_pgm(pgm_path)
    return OccupancyGrid(mapping.to_states(gray[::-1]), resolution, origin)


def save_map(grid: OccupancyGrid, pgm_path, mapping: GrayMapping | None = None, binary: bool = True):
    mapping = mapping or GrayMapping()
    pgm_path = Path(pgm_path)
    write_pgm(pgm_path, mapping.to_gray(grid.cells)[::-1], binary=binary)
    ox, oy = grid.origin
    header_path(pgm_path).write_text(
        f"resolution = {grid.resolution!r}\n"
        f"origin = {ox!r} {oy!r}\n"
        f"occupied_max = {mapping.occupied_max}\n"
        f"free_min = {mapping.free_min}\n"
        f"occupied_level = {mapping.occupied_level}\n"
        f"unknown_level = {mapping.unknown_level}\n"
        f"free_level = {mapping.free_level}\n"
    )
