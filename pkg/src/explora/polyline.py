"""Polyline path planning: Dijkstra frontend, S-scored DP and greedy bidirectional backends.

A polyline is a subsequence of the dense Dijkstra path whose segments are at
most ``d`` long and traversable. Its objective is the sum of the junction
scores ``S`` plus the length-deviation penalty of the first segment.
"""

from __future__ import annotations

import math
import time
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .frontier_select import dir_diff
from .grid_map import OccupancyGrid, traversability_batch

MAX_WAYPOINTS = 4000
_TIE = 1e-12
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PolylineParams:
    d: float = 1.25
    k_rot: float = 1.0
    k_uni: float = 1.0
    backend: str = "dp"
    max_waypoints: int = MAX_WAYPOINTS

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.k_rot < 0 or self.k_uni < 0:
            raise ValueError("k_rot and k_uni must be >= 0")
        if self.backend not in ("bi", "dp"):
            raise ValueError(f"backend must be 'bi' or 'dp', got {self.backend!r}")


@dataclass(frozen=True, eq=False)
class DensePath:
    points: np.ndarray

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True, eq=False)
class PolylinePath:
    junctions: np.ndarray
    indices: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.junctions)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.junctions, axis=0), axis=1)

    @property
    def rotations(self) -> np.ndarray:
        """Turn angle at every interior junction."""
        j = self.junctions
        return np.array([dir_diff(j[i - 1], j[i], j[i + 1]) for i in range(1, len(j) - 1)])


# ---------------------------------------------------------------------------
# frontend

_graph_cache: "weakref.WeakKeyDictionary[OccupancyGrid, dict]" = weakref.WeakKeyDictionary()


def clearance_graph(grid: OccupancyGrid, r_robot: float):
    """8-connected graph over cells with clearance >= r_robot; no corner cutting.

    Returns (csr matrix, admissible mask). Cached per grid snapshot.
    """
    per_grid = _graph_cache.setdefault(grid, {})
    if r_robot in per_grid:
        return per_grid[r_robot]
    ok = grid.distance_field.values >= r_robot
    h, w = ok.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, costs = [], [], []
    step = grid.resolution
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = ok[r0:r1, c0:c1] & ok[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if dr and dc:
            a &= ok[r0 + dr : r1 + dr, c0:c1] & ok[r0:r1, c0 + dc : c1 + dc]
        src = idx[r0:r1, c0:c1][a]
        dst = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc][a]
        cost = step * (_SQRT2 if dr and dc else 1.0)
        rows += [src, dst]
        cols += [dst, src]
        costs += [np.full(src.size, cost), np.full(src.size, cost)]
    graph = csr_matrix((np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w))
    per_grid[r_robot] = (graph, ok)
    return graph, ok


def _cell_index(grid: OccupancyGrid, p):
    row, col = grid.world_to_cell(p[0], p[1])
    if not grid.in_bounds(row, col):
        return None
    return int(row) * grid.width + int(col)


def dijkstra_path(start, goal, grid: OccupancyGrid, r_robot: float) -> DensePath | None:
    """Shortest clearance-respecting cell path; None when the goal is unreachable.

    Interior waypoints are cell centers; the first and last are the exact
    start and goal points.
    """
    graph, ok = clearance_graph(grid, r_robot)
    s = _cell_index(grid, start)
    g = _cell_index(grid, goal)
    if s is None or g is None or not ok.flat[s] or not ok.flat[g]:
        return None
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if s == g:
        pts = [start] if np.array_equal(start, goal) else [start, goal]
        return DensePath(np.array(pts))
    dist, pred = dijkstra(graph, indices=s, return_predecessors=True)
    if not np.isfinite(dist[g]):
        return None
    chain = [g]
    while chain[-1] != s:
        chain.append(int(pred[chain[-1]]))
    chain.reverse()
    chain = np.array(chain)
    xs, ys = grid.cell_center(chain // grid.width, chain % grid.width)
    pts = np.column_stack((xs, ys))
    pts[0] = start
    pts[-1] = goal
    return DensePath(pts)


def path_cost_matrix(points, grid: OccupancyGrid, r_robot: float) -> np.ndarray:
    """Pairwise Dijkstra path lengths between cells of the given points (inf if unreachable)."""
    graph, ok = clearance_graph(grid, r_robot)
    idx = [_cell_index(grid, p) for p in points]
    out = np.full((len(points), len(points)), np.inf)
    valid = [k for k, i in enumerate(idx) if i is not None and ok.flat[i]]
    if valid:
        dist = dijkstra(graph, indices=[idx[k] for k in valid])
        for a, k in enumerate(valid):
            for l in valid:
                out[k, l] = dist[a, idx[l]]
    return out


# ---------------------------------------------------------------------------
# scoring


def segment_score(x_prev, x_i, x_next, params: PolylineParams) -> float:
    """Rotation reward at x_i minus the deviation of the outgoing segment from d."""
    length = math.hypot(x_next[0] - x_i[0], x_next[1] - x_i[1])
    return params.k_rot * abs(dir_diff(x_prev, x_i, x_next)) - params.k_uni * abs(length - params.d)


def polyline_objective(junctions, params: PolylineParams) -> float:
    j = np.asarray(junctions, dtype=float)
    if len(j) < 2:
        return 0.0
    first = math.hypot(*(j[1] - j[0]))
    total = -params.k_uni * abs(first - params.d)
    for i in range(1, len(j) - 1):
        total += segment_score(j[i - 1], j[i], j[i + 1], params)
    return total


def _better(a_val, a_sec, b_val, b_sec) -> bool:
    if a_val > b_val + _TIE:
        return True
    if a_val < b_val - _TIE:
        return False
    return a_sec < b_sec


# ---------------------------------------------------------------------------
# backends


def _thin(points: np.ndarray, max_waypoints: int) -> np.ndarray:
    n = len(points)
    if n <= max_waypoints:
        return points
    step = math.ceil(n / max_waypoints)
    keep = np.arange(0, n, step)
    if keep[-1] != n - 1:
        keep = np.append(keep, n - 1)
    return points[keep]


def _feasible_pairs(X: np.ndarray, grid, d: float, r_robot: float):
    pairs = np.array(sorted(cKDTree(X).query_pairs(d + 1e-9)), dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    pairs.sort(axis=1)
    lengths = np.linalg.norm(X[pairs[:, 1]] - X[pairs[:, 0]], axis=1)
    pairs = pairs[(lengths > 0) & (lengths <= d + 1e-9)]
    ok = traversability_batch(X[pairs[:, 0]], X[pairs[:, 1]], grid, r_robot)
    pairs = pairs[ok]
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def dp_backend(X, grid: OccupancyGrid, params: PolylineParams, r_robot: float) -> PolylinePath | None:
    """Exact maximum of the polyline objective over feasible subsequences."""
    X = np.asarray(X.points if isinstance(X, DensePath) else X, dtype=float)
    if len(X) == 0:
        raise ValueError("empty dense path")
    n = len(X) - 1
    if n == 0:
        return PolylinePath(X[:1].copy(), np.array([0]))
    pairs = _feasible_pairs(X, grid, params.d, r_robot)
    if len(pairs) == 0:
        return None
    P = len(pairs)
    first, second = pairs[:, 0], pairs[:, 1]
    seg = X[second] - X[first]
    length = np.hypot(seg[:, 0], seg[:, 1])
    dev = length - params.d
    val = np.full(P, -np.inf)
    sec = np.full(P, np.inf)
    back = np.full(P, -1, dtype=np.int64)
    out_start = np.searchsorted(first, np.arange(n + 2))
    in_order = np.lexsort((first, second))
    in_start = np.searchsorted(second[in_order], np.arange(n + 2))

    outs0 = np.arange(out_start[0], out_start[1])
    val[outs0] = -params.k_uni * np.abs(dev[outs0])
    sec[outs0] = dev[outs0] ** 2
    for i in range(1, n):
        outs = np.arange(out_start[i], out_start[i + 1])
        if outs.size == 0:
            continue
        ins = in_order[in_start[i] : in_start[i + 1]]
        ins = ins[np.isfinite(val[ins])]
        if ins.size == 0:
            continue
        a = seg[ins]
        b = seg[outs]
        cross = a[:, None, 0] * b[None, :, 1] - a[:, None, 1] * b[None, :, 0]
        dot = a[:, None, 0] * b[None, :, 0] + a[:, None, 1] * b[None, :, 1]
        cand = val[ins][:, None] + params.k_rot * np.abs(np.arctan2(cross, dot))
        best_val = cand.max(axis=0)
        tied = cand >= best_val[None, :] - _TIE
        sec_c = np.where(tied, sec[ins][:, None], np.inf)
        # ins are ordered by predecessor index, so argmin picks the lowest k among equals
        pick = np.argmin(sec_c, axis=0)
        cols = np.arange(outs.size)
        val[outs] = cand[pick, cols] - params.k_uni * np.abs(dev[outs])
        sec[outs] = sec[ins][pick] + dev[outs] ** 2
        back[outs] = ins[pick]

    finals = in_order[in_start[n] : in_start[n + 1]]
    finals = finals[np.isfinite(val[finals])]
    if finals.size == 0:
        return None
    best = finals[0]
    for p in finals[1:]:
        if _better(val[p], sec[p], val[best], sec[best]):
            best = p
    chain = []
    p = best
    while p >= 0:
        chain.append(p)
        p = back[p]
    chain.reverse()
    idx = np.array([first[chain[0]]] + [second[c] for c in chain])
    return PolylinePath(X[idx], idx)


def _bi_pass(X: np.ndarray, grid, params: PolylineParams, r_robot: float):
    n = len(X) - 1
    anchors = [0]
    a = 0
    prev = None
    while a != n:
        rest = np.arange(a + 1, n + 1)
        dist = np.linalg.norm(X[rest] - X[a], axis=1)
        cand = rest[(dist <= params.d + 1e-9) & (dist > 0)]
        if cand.size:
            ok = traversability_batch(np.repeat(X[a][None, :], cand.size, axis=0), X[cand], grid, r_robot)
            cand = cand[ok]
        if cand.size == 0:
            return None
        lengths = np.linalg.norm(X[cand] - X[a], axis=1)
        scores = -params.k_uni * np.abs(lengths - params.d)
        if prev is not None:
            u = X[a] - X[prev]
            v = X[cand] - X[a]
            scores = scores + params.k_rot * np.abs(np.arctan2(u[0] * v[:, 1] - u[1] * v[:, 0], u[0] * v[:, 0] + u[1] * v[:, 1]))
        nxt = int(cand[np.argmax(scores)])
        prev, a = a, nxt
        anchors.append(a)
    return np.array(anchors)


def bi_backend(X, grid: OccupancyGrid, params: PolylineParams, r_robot: float) -> PolylinePath | None:
    """Greedy S-maximizing vertex reduction run from both ends; keeps the better direction."""
    X = np.asarray(X.points if isinstance(X, DensePath) else X, dtype=float)
    if len(X) == 0:
        raise ValueError("empty dense path")
    n = len(X) - 1
    if n == 0:
        return PolylinePath(X[:1].copy(), np.array([0]))
    fwd = _bi_pass(X, grid, params, r_robot)
    bwd = _bi_pass(X[::-1], grid, params, r_robot)
    if bwd is not None:
        bwd = (n - bwd)[::-1]
    options = [o for o in (fwd, bwd) if o is not None]
    if not options:
        return None
    best = options[0]
    if len(options) == 2:
        v_f = polyline_objective(X[fwd], params)
        v_b = polyline_objective(X[bwd], params)
        if v_b > v_f + _TIE:
            best = bwd
    return PolylinePath(X[best], best)


def validate_polyline(path: PolylinePath, grid: OccupancyGrid, params: PolylineParams, r_robot: float,
                      start=None, goal=None) -> tuple[bool, str]:
    j = np.asarray(path.junctions, dtype=float)
    if len(j) == 0:
        return False, "empty path"
    if start is not None and not np.allclose(j[0], start, atol=1e-9):
        return False, "start mismatch"
    if goal is not None and not np.allclose(j[-1], goal, atol=1e-9):
        return False, "goal mismatch"
    if len(j) == 1:
        return True, "ok"
    eps = grid.resolution / 2
    lengths = np.linalg.norm(np.diff(j, axis=0), axis=1)
    too_long = np.flatnonzero(lengths > params.d + eps)
    ok = traversability_batch(j[:-1], j[1:], grid, r_robot)
    blocked = np.flatnonzero(~ok)
    if too_long.size and (not blocked.size or too_long[0] <= blocked[0]):
        k = int(too_long[0])
        return False, f"segment too long: segment {k} is {lengths[k]:.3f} m > d = {params.d}"
    if blocked.size:
        return False, f"traversability: segment {int(blocked[0])} violates clearance"
    return True, "ok"


@dataclass
class PlanResult:
    path: PolylinePath | None
    dense: DensePath | None
    t_calc: float

    @property
    def ok(self) -> bool:
        return self.path is not None


def run_backend(X, grid, params: PolylineParams, r_robot: float) -> PlanResult:
    dense = X if isinstance(X, DensePath) else DensePath(np.asarray(X, dtype=float))
    pts = _thin(dense.points, params.max_waypoints)
    backend = dp_backend if params.backend == "dp" else bi_backend
    t0 = time.perf_counter()
    path = backend(pts, grid, params, r_robot)
    return PlanResult(path, dense, time.perf_counter() - t0)


def plan_polyline(start, goal, grid: OccupancyGrid, params: PolylineParams, r_robot: float) -> PlanResult:
    t0 = time.perf_counter()
    dense = dijkstra_path(start, goal, grid, r_robot)
    if dense is None:
        return PlanResult(None, None, time.perf_counter() - t0)
    res = run_backend(dense, grid, params, r_robot)
    res.t_calc = time.perf_counter() - t0
    return res


def polyline_metrics(path: PolylinePath, params: PolylineParams) -> dict:
    lengths = path.segment_lengths
    return {
        "objective": polyline_objective(path.junctions, params),
        "segments": len(lengths),
        "segment_std": float(np.std(lengths, ddof=1)) if len(lengths) > 1 else 0.0,
        "cumulative_rotation": float(np.abs(path.rotations).sum()) if len(path) > 2 else 0.0,
    }
