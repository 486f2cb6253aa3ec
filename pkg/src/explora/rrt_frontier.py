"""RRT expansion with adaptive step and traversability gating, plus global pruning.

The local search builds a throw-away tree rooted at the robot inside a disc;
the global search keeps one tree rooted at the mission start inside the map
rectangle, growing it a few hundred samples at a time and pruning it whenever
the belief map changes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .grid_map import (
    CellState,
    Disc,
    OccupancyGrid,
    Rect,
    SamplingBoundary,
    free_cells_in_boundary,
    free_area_in_boundary,
    min_dist_to_obstacle,
    traversability_batch,
)

ITERATION_CAP = 50_000


class SearchError(RuntimeError):
    pass


class FrontierOrigin(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class RrtNode:
    id: int
    position: tuple[float, float]
    parent: int | None


@dataclass(frozen=True)
class FrontierPoint:
    position: tuple[float, float]
    origin: FrontierOrigin
    node_id: int

    @property
    def id(self) -> int:
        return self.node_id


@dataclass(frozen=True)
class SearchParams:
    eta_max: float = 0.5
    r_robot: float = 0.24
    theta_cov: float = 0.95
    theta_fl: int = 5
    downsample_cell: float | None = None  # defaults to 2 * r_robot
    seed: int = 0

    def __post_init__(self):
        if not (self.eta_max >= self.r_robot > 0):
            raise ValueError(f"need eta_max >= r_robot > 0, got {self.eta_max}, {self.r_robot}")
        if not (0 < self.theta_cov <= 1):
            raise ValueError(f"theta_cov must be in (0, 1], got {self.theta_cov}")
        if self.theta_fl < 1:
            raise ValueError(f"theta_fl must be >= 1, got {self.theta_fl}")
        if self.downsample_cell is not None and not self.downsample_cell > 0:
            raise ValueError("downsample_cell must be positive")

    @property
    def frontier_cell(self) -> float:
        return self.downsample_cell if self.downsample_cell is not None else 2.0 * self.r_robot


class RrtTree:
    """Array-backed tree; node ids are insertion indices and parents always precede children.

    Removed nodes keep their id (marked dead) so ids stay stable for frontiers.
    """

    def __init__(self, root, bounds: Rect, capacity: int = 1024, bucket: float = 0.5):
        capacity = max(int(capacity), 16)
        self.bounds = bounds
        self.pos = np.zeros((capacity, 2))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.alive = np.zeros(capacity, dtype=np.bool_)
        self.nxt = np.full(capacity, -1, dtype=np.int64)
        self.bucket = float(bucket)
        self.nn_nx = max(1, math.ceil((bounds.xmax - bounds.xmin) / bucket))
        self.nn_ny = max(1, math.ceil((bounds.ymax - bounds.ymin) / bucket))
        self.head = np.full(self.nn_nx * self.nn_ny, -1, dtype=np.int64)
        self.n = 0
        self.n_alive = 0
        self.root_id = self._insert(root, -1)

    def _bucket_index(self, x, y):
        bx = min(max(int(math.floor((x - self.bounds.xmin) / self.bucket)), 0), self.nn_nx - 1)
        by = min(max(int(math.floor((y - self.bounds.ymin) / self.bucket)), 0), self.nn_ny - 1)
        return by * self.nn_nx + bx

    def _insert(self, p, parent):
        if self.n >= self.pos.shape[0]:
            self.grow()
        i = self.n
        self.pos[i] = p
        self.parent[i] = parent
        self.alive[i] = True
        b = self._bucket_index(p[0], p[1])
        self.nxt[i] = self.head[b]
        self.head[b] = i
        self.n += 1
        self.n_alive += 1
        return i

    def add(self, p, parent: int) -> int:
        if not (0 <= parent < self.n and self.alive[parent]):
            raise SearchError(f"parent {parent} does not resolve")
        return self._insert(p, parent)

    def grow(self):
        cap = self.pos.shape[0] * 2
        for name, fill in (("pos", 0.0), ("parent", -1), ("alive", False), ("nxt", -1)):
            old = getattr(self, name)
            new = np.full((cap,) + old.shape[1:], fill, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def __len__(self):
        return self.n_alive

    def __contains__(self, node_id):
        return 0 <= node_id < self.n and bool(self.alive[node_id])

    def node(self, node_id: int) -> RrtNode:
        if node_id not in self:
            raise SearchError(f"node {node_id} does not resolve")
        p = int(self.parent[node_id])
        return RrtNode(node_id, (float(self.pos[node_id, 0]), float(self.pos[node_id, 1])), None if p < 0 else p)

    def position(self, node_id: int):
        return self.pos[node_id]

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive[: self.n])

    def edges(self):
        """(child ids, parent positions, child positions) for all live non-root nodes."""
        ids = self.alive_ids()
        ids = ids[self.parent[ids] >= 0]
        return ids, self.pos[self.parent[ids]], self.pos[ids]

    def nearest(self, p) -> int:
        if self.n_alive == 0:
            raise SearchError("nearest query on an empty tree")
        return int(
            _kernels.nearest_alive(
                self.pos, self.alive, self.head, self.nxt,
                self.bounds.xmin, self.bounds.ymin, self.bucket, self.nn_nx, self.nn_ny,
                float(p[0]), float(p[1]),
            )
        )

    def remove_subtrees(self, node_ids) -> int:
        """Remove the given nodes and all their descendants. Returns how many died."""
        removed = np.zeros(self.n, dtype=np.bool_)
        node_ids = np.asarray(list(node_ids), dtype=np.int64)
        if node_ids.size == 0:
            return 0
        if np.any(node_ids == self.root_id):
            raise SearchError("the root cannot be removed")
        removed[node_ids] = True
        killed = _kernels.propagate_removal(self.parent, self.alive, removed, self.n)
        self.n_alive -= killed
        return killed

    def is_connected(self) -> bool:
        ids = self.alive_ids()
        if not self.alive[self.root_id]:
            return False
        par = self.parent[ids]
        non_root = ids != self.root_id
        return bool(np.all(par[non_root] >= 0) and np.all(self.alive[par[non_root]]))

    def dump(self) -> str:
        """Edge list ``id parent x y``, root first, parent -1 for the root."""
        lines = []
        for i in self.alive_ids():
            lines.append(f"{i} {int(self.parent[i])} {self.pos[i, 0]!r} {self.pos[i, 1]!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# helper operations


def nearest_node(tree: RrtTree, p) -> RrtNode:
    return tree.node(tree.nearest(p))


def adaptive_expand_dist(p, grid: OccupancyGrid, params: SearchParams) -> float:
    """Expansion step shrinking linearly from eta_max to r_robot as clearance drops."""
    d_obs = min_dist_to_obstacle(p, grid)
    r = params.r_robot
    if d_obs >= 2 * r:
        return params.eta_max
    if d_obs <= r:
        return r
    return r + (params.eta_max - r) * (d_obs - r) / r


def extend_point(p_rand, p_nearest, eta: float):
    if not eta > 0:
        raise ValueError("eta must be positive")
    p_rand = np.asarray(p_rand, dtype=float)
    p_nearest = np.asarray(p_nearest, dtype=float)
    v = p_rand - p_nearest
    dist = math.hypot(v[0], v[1])
    if dist <= eta:
        return p_rand.copy()
    return p_nearest + eta * v / dist


def rrt_coverage(tree: RrtTree | None, boundary: SamplingBoundary, grid: OccupancyGrid) -> float:
    n = 0 if tree is None else len(tree)
    s_free = free_area_in_boundary(grid, boundary)
    if s_free == 0:
        return math.inf
    return n * grid.resolution**2 / s_free


def exploration_completed(tree, boundary, grid, n_frontiers: int, mode: FrontierOrigin, params: SearchParams) -> bool:
    c = rrt_coverage(tree, boundary, grid)
    if c > params.theta_cov:
        return True
    return mode is FrontierOrigin.LOCAL and n_frontiers > params.theta_fl


def uniform_downsample(points, cell: float):
    """Keep the earliest point per lattice bucket of pitch ``cell``; buckets in row-major order."""
    if not cell > 0:
        raise ValueError("cell must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts.copy()
    keys = np.floor(pts / cell).astype(np.int64)
    first = {}
    for i, (bx, by) in enumerate(map(tuple, keys)):
        first.setdefault((by, bx), i)
    order = [first[k] for k in sorted(first)]
    return pts[order]


# ---------------------------------------------------------------------------
# search driver


def _clip_rect(boundary: SamplingBoundary, grid: OccupancyGrid) -> Rect:
    g = grid.bounds
    xmin, ymin, xmax, ymax = boundary.bbox()
    return Rect(max(xmin, g.xmin), max(ymin, g.ymin), min(xmax, g.xmax), min(ymax, g.ymax))


class FrontierSearch:
    """Incremental tree expansion and frontier bookkeeping for one sampling boundary.

    Random points are drawn uniformly from the boundary clipped to the grid
    extent. Frontiers are stored per downsample bucket, earliest first.
    """

    def __init__(self, root, boundary: SamplingBoundary, grid: OccupancyGrid, params: SearchParams,
                 mode: FrontierOrigin, rng: np.random.Generator):
        self.boundary = boundary
        self.params = params
        self.mode = mode
        self.rng = rng
        self.rect = _clip_rect(boundary, grid)
        root = (float(root[0]), float(root[1]))
        if not (self.rect.contains(*root) and bool(boundary.contains(*root))):
            raise SearchError(f"root {root} lies outside the sampling boundary")
        if min_dist_to_obstacle(root, grid) < params.r_robot:
            raise SearchError(f"root {root} is in collision")
        self.tree = RrtTree(root, self.rect, bucket=max(params.eta_max, 4 * grid.resolution))
        cell = params.frontier_cell
        self.fb_size = cell
        self.fb_x0 = math.floor(self.rect.xmin / cell)
        self.fb_y0 = math.floor(self.rect.ymin / cell)
        self.fb_nx = math.floor(self.rect.xmax / cell) - self.fb_x0 + 1
        self.fb_ny = math.floor(self.rect.ymax / cell) - self.fb_y0 + 1
        self.fb_occ = np.full(self.fb_nx * self.fb_ny, -1, dtype=np.int64)
        self.f_node = np.full(256, -1, dtype=np.int64)
        self.f_bucket = np.full(256, -1, dtype=np.int64)
        self.n_frontiers = 0
        self.samples_used = 0
        self._pending = np.zeros((0, 2))
        self.pruned_revision = grid.revision

    # -- sampling
    def _draw(self, count: int) -> np.ndarray:
        r = self.rect
        out = []
        have = 0
        while have < count:
            batch = max(count - have, 64)
            pts = np.column_stack((self.rng.uniform(r.xmin, r.xmax, batch), self.rng.uniform(r.ymin, r.ymax, batch)))
            if isinstance(self.boundary, Disc):
                pts = pts[self.boundary.contains(pts[:, 0], pts[:, 1])]
            out.append(pts)
            have += len(pts)
        return np.concatenate(out)[:count]

    # -- expansion
    def expand(self, grid: OccupancyGrid, max_samples: int) -> bool:
        """Run at most ``max_samples`` samples. Returns True when the termination test holds."""
        p = self.params
        samples = np.ascontiguousarray(self._draw(max_samples))
        s_free = float(free_cells_in_boundary(grid, self.boundary))
        rect = np.array(self.rect.bbox())
        if isinstance(self.boundary, Disc):
            disc = np.array([self.boundary.cx, self.boundary.cy, self.boundary.radius])
            use_disc = True
        else:
            disc = np.zeros(3)
            use_disc = False
        field = grid.distance_field.values
        ox, oy = grid.origin
        t = self.tree
        counts = np.array([t.n, t.n_alive, self.n_frontiers, 0], dtype=np.int64)
        while True:
            status = _kernels.expand(
                t.pos, t.parent, t.alive, counts,
                t.head, t.nxt, t.bounds.xmin, t.bounds.ymin, t.bucket, t.nn_nx, t.nn_ny,
                field, grid.cells, ox, oy, grid.resolution,
                rect, disc, use_disc,
                samples,
                p.r_robot, p.eta_max, p.theta_cov, p.theta_fl, self.mode is FrontierOrigin.LOCAL, s_free,
                self.f_node, self.f_bucket, self.fb_occ, self.fb_x0, self.fb_y0, self.fb_nx, self.fb_ny, self.fb_size,
            )
            t.n, t.n_alive, self.n_frontiers = int(counts[0]), int(counts[1]), int(counts[2])
            if status != 2:
                break
            if t.n >= t.pos.shape[0]:
                t.grow()
            if self.n_frontiers >= self.f_node.shape[0]:
                self.f_node = np.concatenate([self.f_node, np.full_like(self.f_node, -1)])
                self.f_bucket = np.concatenate([self.f_bucket, np.full_like(self.f_bucket, -1)])
        self.samples_used += int(counts[3])
        return status == 0

    def is_completed(self, grid: OccupancyGrid) -> bool:
        return exploration_completed(self.tree, self.boundary, grid, self.n_frontiers, self.mode, self.params)

    def frontiers(self) -> list[FrontierPoint]:
        """Current frontier set, ordered by bucket (row-major)."""
        idx = np.arange(self.n_frontiers)
        order = idx[np.argsort(self.f_bucket[: self.n_frontiers], kind="stable")]
        out = []
        for k in order:
            node = int(self.f_node[k])
            x, y = self.tree.pos[node]
            out.append(FrontierPoint((float(x), float(y)), self.mode, node))
        return out

    def set_frontiers(self, node_ids):
        """Replace the frontier set by the given nodes, keeping their buckets."""
        self.fb_occ[:] = -1
        keep_nodes = []
        keep_buckets = []
        for node in node_ids:
            x, y = self.tree.pos[node]
            b = (math.floor(y / self.fb_size) - self.fb_y0) * self.fb_nx + (math.floor(x / self.fb_size) - self.fb_x0)
            keep_nodes.append(node)
            keep_buckets.append(b)
        self.n_frontiers = len(keep_nodes)
        if self.n_frontiers > self.f_node.shape[0]:
            self.f_node = np.full(2 * self.n_frontiers, -1, dtype=np.int64)
            self.f_bucket = np.full(2 * self.n_frontiers, -1, dtype=np.int64)
        self.f_node[: self.n_frontiers] = keep_nodes
        self.f_bucket[: self.n_frontiers] = keep_buckets
        for k, b in enumerate(keep_buckets):
            self.fb_occ[b] = k

    def prune(self, grid: OccupancyGrid) -> tuple[int, int]:
        """Drop invalid frontiers and untraversable branches for a new map revision.

        Returns (frontiers removed, nodes removed).
        """
        kept, removed_nodes = _prune(self.tree, [int(n) for n in self.f_node[: self.n_frontiers]], grid, self.params)
        dropped = self.n_frontiers - len(kept)
        self.set_frontiers(kept)
        self.pruned_revision = grid.revision
        return dropped, removed_nodes


class SearchResult(NamedTuple):
    tree: RrtTree
    frontiers: list
    timed_out: bool


def expand_and_search(root, boundary: SamplingBoundary, grid: OccupancyGrid, params: SearchParams,
                      rng: np.random.Generator, mode: FrontierOrigin | None = None,
                      max_samples: int = ITERATION_CAP) -> SearchResult:
    """Grow a fresh tree from ``root`` until the termination test holds or the sample cap is hit."""
    if mode is None:
        mode = FrontierOrigin.LOCAL if isinstance(boundary, Disc) else FrontierOrigin.GLOBAL
    search = FrontierSearch(root, boundary, grid, params, mode, rng)
    done = search.is_completed(grid) or search.expand(grid, max_samples)
    return SearchResult(search.tree, search.frontiers(), not done)


# ---------------------------------------------------------------------------
# pruning


def _edge_ok(tree: RrtTree, child: int, grid: OccupancyGrid, r_robot: float) -> bool:
    par = tree.parent[child]
    return bool(traversability_batch(tree.pos[par], tree.pos[child], grid, r_robot)[0])


def _prune(tree: RrtTree, frontier_nodes, grid: OccupancyGrid, params: SearchParams):
    r = params.r_robot
    for node in frontier_nodes:
        if node not in tree:
            raise SearchError(f"frontier node {node} does not resolve in the tree")
    before = tree.n_alive
    kept = []
    for node in frontier_nodes:
        if node not in tree:
            # an earlier frontier's branch removal took this one with it
            continue
        x, y = tree.pos[node]
        if grid.state_at(x, y) != CellState.UNKNOWN:
            tree.remove_subtrees([node])
            continue
        if _edge_ok(tree, node, grid, r):
            kept.append(node)
            continue
        child = node
        while True:
            par = int(tree.parent[child])
            if par < 0 or _edge_ok(tree, child, grid, r):
                break
            tree.remove_subtrees([child])
            child = par
    # sweep the remaining edges so the whole tree is traversable on this map
    ids, p0, p1 = tree.edges()
    if len(ids):
        bad = ids[~traversability_batch(p0, p1, grid, r)]
        if len(bad):
            tree.remove_subtrees(bad)
    kept = [n for n in kept if n in tree]
    return kept, before - tree.n_alive


def prune_global(frontiers, tree: RrtTree, grid: OccupancyGrid, params: SearchParams):
    """Prune a global frontier set and its tree against a new map. ``tree`` is modified in place."""
    by_node = {f.node_id: f for f in frontiers}
    kept, _ = _prune(tree, [f.node_id for f in frontiers], grid, params)
    return [by_node[n] for n in kept], tree
