import itertools
import math

import numpy as np
import pytest

from explora.config import MAPS_DIR, Scenario, load_config
from explora.grid_map import CellState, OccupancyGrid


def random_grid(rng, h, w, p_occ=0.15, res=0.1, unknown=0.0):
    cells = np.full((h, w), CellState.FREE, dtype=np.int8)
    u = rng.random((h, w))
    cells[u < p_occ] = CellState.OCCUPIED
    if unknown:
        cells[(u >= p_occ) & (u < p_occ + unknown)] = CellState.UNKNOWN
    return OccupancyGrid(cells, res, (0.0, 0.0))


def brute_distance(grid):
    """Per-cell nearest occupied center distance by exhaustive scan."""
    occ = np.argwhere(grid.cells == CellState.OCCUPIED)
    out = np.full(grid.cells.shape, np.inf)
    if len(occ) == 0:
        return out
    for r in range(grid.height):
        for c in range(grid.width):
            out[r, c] = np.sqrt(((occ - (r, c)) ** 2).sum(axis=1)).min() * grid.resolution
    return out


def dense_clear(p0, p1, grid, field, r_robot, step):
    """Point-sampled clearance check along a segment against a precomputed field."""
    d = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    n = max(1, math.ceil(d / step))
    for k in range(n + 1):
        x = p0[0] + (p1[0] - p0[0]) * k / n
        y = p0[1] + (p1[1] - p0[1]) * k / n
        row, col = grid.world_to_cell(x, y)
        if grid.in_bounds(row, col) and field[row, col] < r_robot:
            return False
    return True


def bellman_ford_cost(grid, r_robot, start_cell, goal_cell):
    """Shortest 8-connected path cost (no corner cutting) by label-correcting relaxation."""
    ok = brute_distance(grid) >= r_robot
    h, w = ok.shape
    dist = np.full((h, w), np.inf)
    dist[start_cell] = 0.0
    changed = True
    while changed:
        changed = False
        for r in range(h):
            for c in range(w):
                if not ok[r, c] or not np.isfinite(dist[r, c]):
                    continue
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        if dr == dc == 0:
                            continue
                        rr, cc = r + dr, c + dc
                        if not (0 <= rr < h and 0 <= cc < w) or not ok[rr, cc]:
                            continue
                        if dr and dc and not (ok[r + dr, c] and ok[r, c + dc]):
                            continue
                        nd = dist[r, c] + grid.resolution * math.hypot(dr, dc)
                        if nd < dist[rr, cc] - 1e-12:
                            dist[rr, cc] = nd
                            changed = True
    return dist[goal_cell]


_brute_cache = {}


def flood_reachable(truth, start, r_robot):
    """Eroded free-space component of the start cell, by explicit BFS."""
    key = truth.cells.tobytes()
    if key not in _brute_cache:
        _brute_cache[key] = brute_distance(truth)
    ok = _brute_cache[key] >= r_robot
    h, w = ok.shape
    seen = np.zeros_like(ok)
    r0, c0 = (int(v) for v in truth.world_to_cell(*start))
    if not ok[r0, c0]:
        return seen
    stack = [(r0, c0)]
    seen[r0, c0] = True
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (dr or dc) and 0 <= rr < h and 0 <= cc < w and ok[rr, cc] and not seen[rr, cc]:
                    if dr and dc and not (ok[r + dr, c] and ok[r, c + dc]):
                        continue
                    seen[rr, cc] = True
                    stack.append((rr, cc))
    return seen


def bundled(name, **changes):
    cfg = load_config(MAPS_DIR / f"{name}.cfg")
    if changes:
        cfg = cfg.replace(**changes)
    return Scenario.from_config(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def free_grid(w, h, res=0.1):
    return OccupancyGrid.filled(w, h, res, CellState.FREE)


def walled(cells_fn, w, h, res=0.1):
    g = free_grid(w, h, res)
    cells = g.cells.copy()
    cells_fn(cells)
    return g.with_cells(cells)


def brute_polyline_best(X, grid, params, r_robot):
    """Maximum objective over every feasible subsequence keeping both endpoints."""
    from explora.grid_map import traversability_check
    from explora.polyline import polyline_objective

    n = len(X) - 1
    ok = np.zeros((n + 1, n + 1), dtype=bool)
    for a in range(n + 1):
        for b in range(a + 1, n + 1):
            length = math.hypot(*(X[b] - X[a]))
            ok[a, b] = 0 < length <= params.d + 1e-9 and traversability_check(X[a], X[b], grid, r_robot)
    best = -np.inf
    for m in range(n):
        for mid in itertools.combinations(range(1, n), m):
            idx = (0, *mid, n)
            if all(ok[i, j] for i, j in zip(idx, idx[1:])):
                best = max(best, polyline_objective(X[list(idx)], params))
    return best


def polyline_corpus(rng, count, max_points=12, size=16, res=0.1, r_robot=0.12):
    """Random (dense path, grid, params) instances with at most ``max_points`` waypoints."""
    from explora.polyline import PolylineParams, dijkstra_path

    out = []
    while len(out) < count:
        grid = random_grid(rng, size, size, p_occ=float(rng.uniform(0.03, 0.15)), res=res)
        free = np.argwhere(grid.distance_field.values >= r_robot)
        if len(free) < 2:
            continue
        a, b = free[rng.choice(len(free), 2, replace=False)]
        dense = dijkstra_path(grid.cell_center(*a), grid.cell_center(*b), grid, r_robot)
        if dense is None or len(dense) < 2:
            continue
        pts = dense.points
        if len(pts) > max_points:
            k = int(rng.integers(0, len(pts) - max_points + 1))
            pts = pts[k:k + max_points]
        params = PolylineParams(d=float(rng.uniform(0.15, 0.6)), k_rot=float(rng.uniform(0, 2)),
                                k_uni=float(rng.uniform(0, 2)))
        out.append((pts, grid, params))
    return out
