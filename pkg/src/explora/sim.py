"""Ground-truth world with known pose: ray-cast lidar, straight drives, in-place turns."""

from __future__ import annotations

import enum
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid_map import CellState, GridError, OccupancyGrid, traversability_check
from .frontier_select import wrap_angle

HEADING_TOL = 1e-6
FULL_BEAMS = 720


@dataclass
class RobotState:
    x: float
    y: float
    theta: float = 0.0
    r_robot: float = 0.24
    v_max: float = 1.25
    omega_max: float = 1.57

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0 and self.r_robot > 0):
            raise ValueError("speeds and radius must be positive")
        self.theta = wrap_angle(self.theta)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class LidarConfig:
    fov: float = 360.0
    beams: int | None = None
    r_sensing: float = 20.0
    rate: float = 10.0

    def __post_init__(self):
        if not 0 < self.fov <= 360:
            raise ValueError(f"fov must be in (0, 360], got {self.fov}")
        if self.beams is not None and self.beams < 2:
            raise ValueError("beam count must be >= 2")
        if not (self.r_sensing > 0 and self.rate > 0):
            raise ValueError("r_sensing and rate must be positive")

    @property
    def beam_count(self) -> int:
        if self.beams is not None:
            return self.beams
        if self.fov >= 360:
            return FULL_BEAMS
        return max(2, round(FULL_BEAMS * self.fov / 360) + 1)

    def offsets(self) -> np.ndarray:
        """Beam angles relative to the heading, symmetric about zero."""
        n = self.beam_count
        if self.fov >= 360:
            return (np.arange(n) - n // 2) * (2 * math.pi / n)
        half = math.radians(self.fov) / 2
        return np.linspace(-half, half, n)


@dataclass
class SimClock:
    dt: float = 0.05
    ticks: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def t(self) -> float:
        # integer tick count keeps timestamps free of accumulated rounding
        return self.ticks * self.dt

    def advance(self):
        self.ticks += 1


class MotionKind(enum.Enum):
    SEGMENT_DONE = "SegmentDone"
    ROTATION_DONE = "RotationDone"
    COLLISION = "Collision"
    BLOCKED = "Blocked"
    STALL = "Stall"


@dataclass(frozen=True)
class MotionEvent:
    kind: MotionKind
    time: float
    pose: tuple[float, float, float]


class Mode(enum.Enum):
    IDLE = "idle"
    ROTATE = "rotate"
    STRAIGHT = "straight"


@dataclass
class ExtensionLedger:
    """Seconds spent and square meters newly observed, per motion mode."""

    time: dict = field(default_factory=lambda: {Mode.ROTATE: 0.0, Mode.STRAIGHT: 0.0})
    area: dict = field(default_factory=lambda: {Mode.ROTATE: 0.0, Mode.STRAIGHT: 0.0})


def map_extension_rate(report) -> tuple[float | None, float | None]:
    """(m²/s while rotating, m²/s while driving); None for a mode never used."""
    ledger = getattr(report, "extension", report)
    out = []
    for mode in (Mode.ROTATE, Mode.STRAIGHT):
        t = ledger.time.get(mode, 0.0)
        out.append(ledger.area.get(mode, 0.0) / t if t > 0 else None)
    return tuple(out)


# ---------------------------------------------------------------------------
# sensing

_occ_cache: "weakref.WeakKeyDictionary[OccupancyGrid, np.ndarray]" = weakref.WeakKeyDictionary()


def _truth_occupancy(truth: OccupancyGrid) -> np.ndarray:
    occ = _occ_cache.get(truth)
    if occ is None:
        if truth.count(CellState.UNKNOWN):
            raise GridError("truth map must be binary (free/occupied), found unknown cells")
        occ = np.ascontiguousarray(truth.cells == CellState.OCCUPIED)
        _occ_cache[truth] = occ
    return occ


def _beam_angles(pose, cfg: LidarConfig) -> np.ndarray:
    return pose[2] + cfg.offsets()


def _grid_coords(grid: OccupancyGrid, x, y):
    ox, oy = grid.origin
    return (x - ox) / grid.resolution, (y - oy) / grid.resolution


def lidar_scan(pose, cfg: LidarConfig, truth: OccupancyGrid) -> np.ndarray:
    """Range per beam in meters, capped at r_sensing."""
    occ = _truth_occupancy(truth)
    row, col = truth.world_to_cell(pose[0], pose[1])
    if not truth.in_bounds(row, col):
        raise GridError(f"pose {pose[:2]} is outside the map")
    gx, gy = _grid_coords(truth, pose[0], pose[1])
    max_cells = cfg.r_sensing / truth.resolution
    ranges = _kernels.cast_rays(occ, gx, gy, _beam_angles(pose, cfg), max_cells)
    return np.minimum(ranges * truth.resolution, cfg.r_sensing)


def _integrate(cells: np.ndarray, grid: OccupancyGrid, pose, ranges, cfg: LidarConfig):
    gx, gy = _grid_coords(grid, pose[0], pose[1])
    return _kernels.integrate_rays(
        cells, gx, gy, _beam_angles(pose, cfg), np.asarray(ranges, dtype=float) / grid.resolution,
        cfg.r_sensing / grid.resolution,
    )


def integrate_scan(belief: OccupancyGrid, pose, ranges, cfg: LidarConfig) -> OccupancyGrid:
    """New belief revision with the scan applied; occupied cells are never cleared."""
    cells = belief.cells.copy()
    _integrate(cells, belief, pose, ranges, cfg)
    return belief.with_cells(cells)


# ---------------------------------------------------------------------------
# world


@dataclass(frozen=True)
class TruthEdit:
    """Scripted change to the truth map: cells inside the box take ``state`` at ``time``."""

    time: float
    box: tuple[float, float, float, float]
    state: CellState = CellState.OCCUPIED


class Simulator:
    """Single-writer world: owns the clock, robot pose, truth map and belief map."""

    def __init__(self, truth: OccupancyGrid, robot: RobotState, lidar: LidarConfig, dt: float = 0.05,
                 edits=(), record_trajectory: bool = True, prior: OccupancyGrid | None = None):
        _truth_occupancy(truth)
        self.truth = truth
        self.robot = robot
        self.lidar = lidar
        self.clock = SimClock(dt)
        self.scan_every = max(1, round(1.0 / (lidar.rate * dt)))
        self._cells = np.zeros_like(truth.cells)
        if prior is not None:
            # a belief carried over from an earlier visit
            if prior.cells.shape != truth.cells.shape:
                raise GridError("prior belief must match the truth map shape")
            self._cells[:] = prior.cells
        self._snapshot = OccupancyGrid(self._cells, truth.resolution, truth.origin, 0)
        self._dirty = False
        self._revision = 0
        self.known_cells = int(np.count_nonzero(self._cells != CellState.UNKNOWN))
        self.edits = sorted(edits, key=lambda e: e.time)
        self.extension = ExtensionLedger()
        self.record_trajectory = record_trajectory
        self.trajectory: list[tuple] = []
        self.distance = 0.0
        self.rotation = 0.0
        self.scans = 0
        self._check_start()
        self._record(Mode.IDLE)

    def _check_start(self):
        if self.truth_clearance() < self.robot.r_robot:
            raise GridError("start pose is in collision with the truth map")

    # -- state -------------------------------------------------------------
    @property
    def t(self) -> float:
        return self.clock.t

    @property
    def belief(self) -> OccupancyGrid:
        """Immutable snapshot of the current belief map."""
        if self._dirty:
            self._revision += 1
            self._snapshot = OccupancyGrid(self._cells, self.truth.resolution, self.truth.origin, self._revision)
            self._dirty = False
        return self._snapshot

    @property
    def known_area(self) -> float:
        return self.known_cells * self.truth.resolution ** 2

    def truth_clearance(self, x=None, y=None) -> float:
        x = self.robot.x if x is None else x
        y = self.robot.y if y is None else y
        row, col = self.truth.world_to_cell(x, y)
        if not self.truth.in_bounds(row, col):
            return 0.0
        return float(self.truth.distance_field.values[row, col])

    def _record(self, mode: Mode):
        if self.record_trajectory:
            r = self.robot
            self.trajectory.append((self.t, r.x, r.y, r.theta, mode.value, self.known_area))

    # -- sensing -----------------------------------------------------------
    def scan(self, mode: Mode = Mode.IDLE) -> float:
        """Scan and integrate at the current pose; returns newly known area."""
        ranges = lidar_scan(self.robot.pose, self.lidar, self.truth)
        newly, changed = _integrate(self._cells, self.truth, self.robot.pose, ranges, self.lidar)
        self.scans += 1
        if changed:
            self._dirty = True
        self.known_cells += newly
        area = newly * self.truth.resolution ** 2
        if mode in self.extension.area:
            self.extension.area[mode] += area
        return area

    def _apply_edits(self):
        changed = False
        while self.edits and self.edits[0].time <= self.t + 1e-12:
            e = self.edits.pop(0)
            cells = self.truth.cells.copy()
            ox, oy = self.truth.origin
            res = self.truth.resolution
            c0 = max(0, int(math.floor((e.box[0] - ox) / res)))
            r0 = max(0, int(math.floor((e.box[1] - oy) / res)))
            c1 = min(self.truth.width, int(math.ceil((e.box[2] - ox) / res)))
            r1 = min(self.truth.height, int(math.ceil((e.box[3] - oy) / res)))
            cells[r0:r1, c0:c1] = e.state
            self.truth = self.truth.with_cells(cells)
            changed = True
        return changed

    def _tick(self, mode: Mode) -> float:
        self.clock.advance()
        if mode in self.extension.time:
            self.extension.time[mode] += self.clock.dt
        self._apply_edits()
        area = 0.0
        if self.clock.ticks % self.scan_every == 0:
            area = self.scan(mode)
        self._record(mode)
        return area

    def _event(self, kind: MotionKind) -> MotionEvent:
        return MotionEvent(kind, self.t, self.robot.pose)

    # -- motion ------------------------------------------------------------
    def rotate_in_place(self, dtheta: float) -> MotionEvent:
        if abs(dtheta) > 2 * math.pi + 1e-9:
            raise ValueError(f"|dtheta| must be <= 2*pi, got {dtheta}")
        r = self.robot
        start = r.theta
        step = r.omega_max * self.clock.dt
        n = math.ceil(abs(dtheta) / step - 1e-9) if dtheta else 0
        for k in range(1, n + 1):
            done = min(k * step, abs(dtheta))
            r.theta = wrap_angle(start + math.copysign(done, dtheta))
            self._tick(Mode.ROTATE)
        r.theta = wrap_angle(start + dtheta)
        self.rotation += abs(dtheta)
        return self._event(MotionKind.ROTATION_DONE)

    def turn_to(self, heading: float) -> MotionEvent:
        return self.rotate_in_place(wrap_angle(heading - self.robot.theta))

    def execute_segment(self, to, guard: bool = True) -> MotionEvent:
        """Drive straight to ``to``.

        With ``guard`` set, the remaining segment is re-checked against the
        belief after every scan that changed it, and the drive stops early
        with a Blocked event when it is no longer traversable.
        """
        r = self.robot
        x0, y0 = r.x, r.y
        dx, dy = to[0] - x0, to[1] - y0
        dist = math.hypot(dx, dy)
        if dist == 0:
            return self._event(MotionKind.SEGMENT_DONE)
        if abs(wrap_angle(math.atan2(dy, dx) - r.theta)) > HEADING_TOL:
            raise ValueError("heading not aligned with segment")
        step = r.v_max * self.clock.dt
        n = math.ceil(dist / step - 1e-9)
        rev = self.belief.revision
        for k in range(1, n + 1):
            s = min(k * step, dist)
            px, py = r.x, r.y
            r.x = x0 + dx * s / dist
            r.y = y0 + dy * s / dist
            self.distance += math.hypot(r.x - px, r.y - py)
            self._tick(Mode.STRAIGHT)
            if self.truth_clearance() < r.r_robot:
                return self._event(MotionKind.COLLISION)
            if guard and k < n and self._dirty:
                belief = self.belief
                if belief.revision != rev:
                    rev = belief.revision
                    if not traversability_check((r.x, r.y), to, belief, r.r_robot):
                        return self._event(MotionKind.BLOCKED)
        r.x, r.y = float(to[0]), float(to[1])
        return self._event(MotionKind.SEGMENT_DONE)


def rotate_in_place(sim: Simulator, dtheta: float) -> MotionEvent:
    return sim.rotate_in_place(dtheta)


def execute_segment(sim: Simulator, start, to) -> MotionEvent:
    if math.hypot(sim.robot.x - start[0], sim.robot.y - start[1]) > 1e-9:
        raise ValueError("robot is not at the segment start")
    return sim.execute_segment(to)
