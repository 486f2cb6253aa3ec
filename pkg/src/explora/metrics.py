"""Run metrics: finish rate against a reference map, pooled segment STD, rotation, planner time."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import breadth_first_order

from .grid_map import CellState, OccupancyGrid
from .polyline import clearance_graph
from .sim import LidarConfig, _integrate, lidar_scan

REFERENCE_PITCH = 0.5
# bump when the sensor model changes so cached reference areas are recomputed
REFERENCE_REVISION = 2


def reachable_mask(truth: OccupancyGrid, start, r_robot: float) -> np.ndarray:
    """Cells reachable from ``start`` through cells with clearance >= r_robot."""
    graph, ok = clearance_graph(truth, r_robot)
    row, col = truth.world_to_cell(*start)
    mask = np.zeros(ok.shape, dtype=bool)
    if not truth.in_bounds(row, col) or not ok[row, col]:
        return mask
    order = breadth_first_order(graph, int(row) * truth.width + int(col), return_predecessors=False)
    mask.flat[order] = True
    return mask


def reference_area(truth: OccupancyGrid, start, r_robot: float, r_sensing: float, pitch: float | None = None) -> float:
    """Known area after a full 360° scan from every reachable lattice point."""
    if pitch is None:
        pitch = min(r_sensing / 2, REFERENCE_PITCH)
    reach = reachable_mask(truth, start, r_robot)
    lidar = LidarConfig(360.0, None, r_sensing)
    cells = np.zeros_like(truth.cells)
    ox, oy = truth.origin
    b = truth.bounds
    for y in np.arange(oy + pitch / 2, b.ymax, pitch):
        for x in np.arange(ox + pitch / 2, b.xmax, pitch):
            row, col = truth.world_to_cell(x, y)
            if truth.in_bounds(row, col) and reach[row, col]:
                pose = (float(x), float(y), 0.0)
                _integrate(cells, truth, pose, lidar_scan(pose, lidar, truth), lidar)
    # the start cell is always visited even when it misses the lattice
    pose = (float(start[0]), float(start[1]), 0.0)
    _integrate(cells, truth, pose, lidar_scan(pose, lidar, truth), lidar)
    return float(np.count_nonzero(cells != CellState.UNKNOWN)) * truth.resolution ** 2


def _reference_key(pgm_path: Path, start, r_robot, r_sensing, pitch) -> str:
    h = hashlib.sha256(pgm_path.read_bytes())
    h.update(repr((REFERENCE_REVISION, tuple(map(float, start)), float(r_robot), float(r_sensing), pitch)).encode())
    return h.hexdigest()


def cached_reference_area(pgm_path, truth: OccupancyGrid, start, r_robot: float, r_sensing: float,
                          pitch: float | None = None) -> float:
    """Reference area, cached in ``<map>.ref`` next to the map and keyed by content hash."""
    pgm_path = Path(pgm_path)
    cache = pgm_path.with_suffix(".ref")
    key = _reference_key(pgm_path, start, r_robot, r_sensing, pitch)
    try:
        for line in cache.read_text().splitlines():
            k, _, v = line.partition(" ")
            if k == key:
                return float(v)
    except OSError:
        pass
    area = reference_area(truth, start, r_robot, r_sensing, pitch)
    try:
        with cache.open("a") as fh:
            fh.write(f"{key} {area!r}\n")
    except OSError:
        pass
    return area


# ---------------------------------------------------------------------------


def pooled_std(segment_sets) -> float | None:
    """sqrt(sum (n_i - 1) s_i^2 / sum (n_i - 1)); runs with fewer than 2 segments carry no weight."""
    num = 0.0
    den = 0
    for seg in segment_sets:
        seg = np.asarray(seg, dtype=float)
        if len(seg) < 2:
            continue
        num += (len(seg) - 1) * float(np.var(seg, ddof=1))
        den += len(seg) - 1
    return math.sqrt(num / den) if den else None


def finish_rate_series(times, known_areas, reference: float):
    if not reference > 0:
        raise ValueError("reference known area must be positive")
    rate = np.minimum(np.asarray(known_areas, dtype=float) / reference, 1.0)
    return np.asarray(times, dtype=float), rate


@dataclass
class MetricsBundle:
    finish_rates: list
    final_finish_rates: list
    s_p: float | None
    phi_avg_sum: float | None
    t_calc_avg: float | None
    tallies: dict = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return sum(self.tallies.values())


def compute_metrics(reports, reference: float) -> MetricsBundle:
    from .controller import Outcome

    series = []
    finals = []
    for r in reports:
        t, a = r.known_area_series()
        series.append(finish_rate_series(t, a, reference))
        finals.append(float(series[-1][1][-1]) if len(a) else 0.0)
    tallies = {o.value: 0 for o in Outcome}
    for r in reports:
        tallies[r.outcome.value] += 1
    times = [t for r in reports for t in r.plan_times]
    return MetricsBundle(
        finish_rates=series,
        final_finish_rates=finals,
        s_p=pooled_std([r.segments for r in reports]),
        phi_avg_sum=float(np.mean([r.rotation for r in reports])) if reports else None,
        t_calc_avg=float(np.mean(times)) if times else None,
        tallies=tallies,
    )
