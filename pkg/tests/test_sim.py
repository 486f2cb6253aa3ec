import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from explora.grid_map import CellState, GridError, OccupancyGrid
from explora.sim import (
    ExtensionLedger,
    LidarConfig,
    MotionKind,
    Mode,
    RobotState,
    Simulator,
    TruthEdit,
    execute_segment,
    integrate_scan,
    lidar_scan,
    map_extension_rate,
    rotate_in_place,
)

from conftest import free_grid, random_grid, walled

RES = 0.1


def boxed(w=40, h=40, extra=None):
    def cells(c):
        c[0, :] = c[-1, :] = c[:, 0] = c[:, -1] = CellState.OCCUPIED
        if extra:
            extra(c)
    return walled(cells, w, h, RES)


def beam_touches(cell, origin, angle, rng, res):
    """Slab clip of the beam segment against the closed cell square."""
    row, col = cell
    lo = (col * res, row * res)
    hi = ((col + 1) * res, (row + 1) * res)
    d = (math.cos(angle), math.sin(angle))
    t0, t1 = 0.0, rng
    for k in range(2):
        if abs(d[k]) < 1e-15:
            if not lo[k] <= origin[k] <= hi[k]:
                return False
            continue
        a = (lo[k] - origin[k]) / d[k]
        b = (hi[k] - origin[k]) / d[k]
        t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
    return t0 <= t1 + 1e-9


def test_lidar_config_validation_and_beams():
    assert LidarConfig().beam_count == 720
    assert LidarConfig(180).beam_count == 361
    with pytest.raises(ValueError):
        LidarConfig(0)
    with pytest.raises(ValueError):
        LidarConfig(400)
    with pytest.raises(ValueError):
        LidarConfig(beams=1)


def test_offsets_symmetric_about_heading():
    for fov in (90, 180, 270):
        off = LidarConfig(fov).offsets()
        assert np.allclose(off, -off[::-1])
    assert np.any(LidarConfig(360).offsets() == 0)


def test_fov_180_has_no_rear_beams():
    assert np.abs(LidarConfig(180).offsets()).max() <= math.pi / 2 + 1e-12


def test_empty_room_ranges_are_capped():
    g = free_grid(200, 200)
    ranges = lidar_scan((10.0, 10.0, 0.0), LidarConfig(r_sensing=5.0), g)
    assert np.all(ranges == 5.0)


def test_wall_three_meters_ahead():
    def cells(c):
        c[:, 40] = CellState.OCCUPIED
    g = walled(cells, 60, 40, RES)
    cfg = LidarConfig()
    ranges = lidar_scan((1.0, 2.05, 0.0), cfg, g)
    forward = ranges[np.argmin(np.abs(cfg.offsets()))]
    assert forward == pytest.approx(3.0, abs=RES)


def test_truth_with_unknown_is_rejected():
    g = OccupancyGrid.filled(10, 10, RES)
    with pytest.raises(GridError):
        lidar_scan((0.5, 0.5, 0.0), LidarConfig(), g)


def test_capped_wedge_adds_no_occupied():
    g = free_grid(200, 200)
    cfg = LidarConfig(90, r_sensing=3.0)
    pose = (10.0, 10.0, 0.3)
    b = integrate_scan(OccupancyGrid.filled(200, 200, RES), pose, lidar_scan(pose, cfg, g), cfg)
    assert b.count(CellState.OCCUPIED) == 0
    assert b.count(CellState.FREE) > 0


def test_integrate_is_idempotent():
    g = boxed(extra=lambda c: c.__setitem__((slice(10, 14), slice(25, 28)), CellState.OCCUPIED))
    cfg = LidarConfig()
    pose = (1.55, 1.55, 0.0)
    ranges = lidar_scan(pose, cfg, g)
    once = integrate_scan(OccupancyGrid.filled(40, 40, RES), pose, ranges, cfg)
    twice = integrate_scan(once, pose, ranges, cfg)
    assert np.array_equal(once.cells, twice.cells)


def test_single_hit_marks_exactly_the_hit_cell():
    def cells(c):
        c[50, 80] = CellState.OCCUPIED
    g = walled(cells, 100, 100, RES)
    cfg = LidarConfig(r_sensing=4.0)
    pose = (5.05, 5.05, 0.0)
    b = integrate_scan(OccupancyGrid.filled(100, 100, RES), pose, lidar_scan(pose, cfg, g), cfg)
    assert [tuple(x) for x in np.argwhere(b.cells == CellState.OCCUPIED)] == [(50, 80)]


def test_occupied_cells_are_never_cleared():
    g = free_grid(40, 40)
    cells = OccupancyGrid.filled(40, 40, RES).cells.copy()
    cells[20, 30] = CellState.OCCUPIED
    belief = OccupancyGrid(cells, RES)
    cfg = LidarConfig(r_sensing=3.0)
    pose = (2.05, 2.05, 0.0)
    out = integrate_scan(belief, pose, lidar_scan(pose, cfg, g), cfg)
    assert out.cells[20, 30] == CellState.OCCUPIED


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([90.0, 180.0, 270.0, 360.0]))
def test_scan_soundness(seed, fov):
    rng = np.random.default_rng(seed)
    truth = random_grid(rng, 30, 30, p_occ=0.08, res=RES)
    free = np.argwhere(truth.cells == CellState.FREE)
    r, c = free[rng.integers(len(free))]
    pose = ((c + rng.random()) * RES, (r + rng.random()) * RES, float(rng.uniform(-math.pi, math.pi)))
    cfg = LidarConfig(fov, 48, r_sensing=float(rng.uniform(0.5, 4.0)))
    ranges = lidar_scan(pose, cfg, truth)
    b = integrate_scan(OccupancyGrid.filled(30, 30, RES), pose, ranges, cfg)
    assert not np.any((b.cells == CellState.FREE) & (truth.cells == CellState.OCCUPIED))
    assert not np.any((b.cells == CellState.OCCUPIED) & (truth.cells == CellState.FREE))
    angles = pose[2] + cfg.offsets()
    for cell in np.argwhere(b.cells == CellState.FREE):
        assert any(beam_touches(cell, pose[:2], a, rr, RES) for a, rr in zip(angles, ranges))


def test_known_area_is_monotone_and_sound_over_a_drive():
    g = boxed(80, 40, lambda c: c.__setitem__((slice(0, 25), 40), CellState.OCCUPIED))
    sim = Simulator(g, RobotState(1.0, 3.0, 0.0), LidarConfig(180, r_sensing=4.0))
    last = 0
    for goal in ((3.0, 3.0), (6.0, 3.0), (6.0, 1.5)):
        sim.turn_to(math.atan2(goal[1] - sim.robot.y, goal[0] - sim.robot.x))
        assert sim.execute_segment(goal).kind is MotionKind.SEGMENT_DONE
    areas = [row[5] for row in sim.trajectory]
    assert all(b >= a for a, b in zip(areas, areas[1:]))
    belief = sim.belief
    assert not np.any((belief.cells == CellState.FREE) & (g.cells == CellState.OCCUPIED))
    assert belief.known_area() == pytest.approx(sim.known_area)
    assert areas[-1] > last


def test_segment_timing():
    sim = Simulator(free_grid(100, 40), RobotState(1.0, 2.0, 0.0), LidarConfig(r_sensing=3.0))
    ev = sim.execute_segment((3.5, 2.0))
    assert ev.kind is MotionKind.SEGMENT_DONE
    assert ev.time == pytest.approx(2.0, abs=sim.clock.dt)
    assert ev.pose[:2] == (3.5, 2.0)
    assert sim.distance == pytest.approx(2.5)


def test_zero_length_segment():
    sim = Simulator(free_grid(40, 40), RobotState(1.0, 1.0, 0.7), LidarConfig(r_sensing=3.0))
    ev = execute_segment(sim, (1.0, 1.0), (1.0, 1.0))
    assert ev.kind is MotionKind.SEGMENT_DONE and ev.time == 0


def test_segment_into_wall_collides_before_crossing():
    def cells(c):
        c[:, 30] = CellState.OCCUPIED
    g = walled(cells, 60, 40, RES)
    sim = Simulator(g, RobotState(1.0, 2.0, 0.0), LidarConfig(r_sensing=5.0))
    ev = sim.execute_segment((5.0, 2.0), guard=False)
    assert ev.kind is MotionKind.COLLISION
    # dt-sampled clearance oracle: the first sample within r_robot of the wall cell centers
    step = sim.robot.v_max * sim.clock.dt
    k = 1
    while 1.0 + k * step < 3.05 - sim.robot.r_robot:
        k += 1
    assert ev.pose[0] == pytest.approx(1.0 + k * step)
    assert ev.pose[0] < 3.0


def test_guarded_segment_stops_blocked_when_belief_shows_wall():
    def cells(c):
        c[:, 30] = CellState.OCCUPIED
    g = walled(cells, 60, 40, RES)
    sim = Simulator(g, RobotState(1.0, 2.0, 0.0), LidarConfig(r_sensing=1.5))
    ev = sim.execute_segment((5.0, 2.0))
    assert ev.kind is MotionKind.BLOCKED
    assert sim.truth_clearance() >= sim.robot.r_robot


def test_misaligned_heading_raises():
    sim = Simulator(free_grid(40, 40), RobotState(1.0, 1.0, 0.0), LidarConfig(r_sensing=3.0))
    with pytest.raises(ValueError):
        sim.execute_segment((1.0, 2.0))
    with pytest.raises(ValueError):
        execute_segment(sim, (0.0, 0.0), (1.0, 1.0))


def test_full_rotation_takes_four_seconds():
    sim = Simulator(boxed(), RobotState(2.0, 2.0, 0.0), LidarConfig(180, r_sensing=5.0))
    ev = rotate_in_place(sim, 2 * math.pi)
    assert ev.kind is MotionKind.ROTATION_DONE
    assert ev.time == pytest.approx(2 * math.pi / 1.57, abs=sim.clock.dt)
    assert ev.pose[:2] == (2.0, 2.0)
    assert ev.pose[2] == pytest.approx(0.0, abs=1e-9)
    assert sim.rotation == pytest.approx(2 * math.pi)


def test_zero_rotation_is_instant():
    sim = Simulator(boxed(), RobotState(2.0, 2.0, 0.4), LidarConfig(r_sensing=5.0))
    ev = sim.rotate_in_place(0.0)
    assert ev.time == 0 and ev.pose == (2.0, 2.0, 0.4)


def test_rotation_larger_than_full_turn_raises():
    sim = Simulator(boxed(), RobotState(2.0, 2.0, 0.0), LidarConfig(r_sensing=5.0))
    with pytest.raises(ValueError):
        sim.rotate_in_place(7.0)


def test_rotating_narrow_wedge_matches_full_scan():
    g = boxed(extra=lambda c: c.__setitem__((slice(10, 14), slice(25, 28)), CellState.OCCUPIED))
    pose = (1.55, 1.55, 0.3)
    sim = Simulator(g, RobotState(*pose), LidarConfig(90, 360, 20.0))
    sim.rotate_in_place(2 * math.pi)
    full_cfg = LidarConfig(360, None, 20.0)
    full = integrate_scan(OccupancyGrid.filled(40, 40, RES), pose, lidar_scan(pose, full_cfg, g), full_cfg)
    a = sim.belief.cells != CellState.UNKNOWN
    b = full.cells != CellState.UNKNOWN
    # beams sit at different angles, so only cells grazed at a corner may differ
    assert np.count_nonzero(a != b) <= 0.002 * b.sum()
    assert np.array_equal(sim.belief.cells == CellState.OCCUPIED, full.cells == CellState.OCCUPIED)


def test_modes_are_exclusive_in_trajectory():
    sim = Simulator(boxed(), RobotState(1.0, 1.0, 0.0), LidarConfig(r_sensing=5.0))
    sim.rotate_in_place(1.0)
    sim.turn_to(0.0)
    sim.execute_segment((2.5, 1.0))
    rows = sim.trajectory
    for a, b in zip(rows, rows[1:]):
        moved = (a[1], a[2]) != (b[1], b[2])
        turned = a[3] != b[3]
        assert not (moved and turned)
        assert b[4] == (Mode.STRAIGHT.value if moved else Mode.ROTATE.value if turned else b[4])


def test_extension_rate_arithmetic():
    ledger = ExtensionLedger({Mode.ROTATE: 5.0, Mode.STRAIGHT: 10.0}, {Mode.ROTATE: 10.0, Mode.STRAIGHT: 4.0})
    assert map_extension_rate(SimpleNamespace(extension=ledger)) == (2.0, 0.4)


def test_extension_rate_absent_mode():
    ledger = ExtensionLedger({Mode.ROTATE: 0.0, Mode.STRAIGHT: 3.0}, {Mode.ROTATE: 0.0, Mode.STRAIGHT: 1.5})
    assert map_extension_rate(ledger) == (None, 0.5)


def test_extension_ledger_partitions_known_area():
    sim = Simulator(boxed(), RobotState(1.0, 1.0, 0.0), LidarConfig(180, r_sensing=5.0))
    sim.rotate_in_place(math.pi)
    sim.turn_to(math.pi / 4)
    sim.execute_segment((2.5, 2.5))
    ext = sim.extension
    assert ext.area[Mode.ROTATE] + ext.area[Mode.STRAIGHT] == pytest.approx(sim.known_area)
    assert ext.time[Mode.ROTATE] + ext.time[Mode.STRAIGHT] == pytest.approx(sim.t)


def test_truth_edit_closes_box_at_scheduled_time():
    g = free_grid(40, 40)
    sim = Simulator(g, RobotState(0.5, 0.5, 0.0), LidarConfig(r_sensing=3.0), edits=[TruthEdit(0.2, (2.0, 2.0, 2.5, 2.5))])
    sim.rotate_in_place(0.2)
    assert sim.truth.count(CellState.OCCUPIED) == 0
    sim.rotate_in_place(0.2)
    assert sim.truth.cells[20:25, 20:25].min() == CellState.OCCUPIED
    assert sim.truth.count(CellState.OCCUPIED) == 25


def test_start_in_collision_is_rejected():
    with pytest.raises(GridError):
        Simulator(boxed(), RobotState(0.05, 0.05), LidarConfig())


def test_simulation_is_deterministic():
    def run():
        sim = Simulator(boxed(), RobotState(1.0, 1.0, 0.0), LidarConfig(270, r_sensing=5.0))
        sim.rotate_in_place(2 * math.pi)
        sim.turn_to(0.5)
        sim.execute_segment((1.0 + 2 * math.cos(0.5), 1.0 + 2 * math.sin(0.5)))
        return sim.trajectory, sim.belief.cells.tobytes()
    assert run() == run()
