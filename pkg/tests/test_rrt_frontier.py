import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from explora.grid_map import CellState, Disc, OccupancyGrid, Rect, traversability_batch
from explora.rrt_frontier import (
    FrontierOrigin, FrontierSearch, RrtTree, SearchError, SearchParams, adaptive_expand_dist, expand_and_search,
    exploration_completed, extend_point, nearest_node, prune_global, rrt_coverage, uniform_downsample,
)

from conftest import flood_reachable, free_grid

P = SearchParams()


def _leak_world():
    """Truth and belief for a room sealed off by a 0.3 m slit at x = 4 m."""
    truth = np.full((40, 60), CellState.FREE, dtype=np.int8)
    truth[0, :] = truth[-1, :] = truth[:, 0] = truth[:, -1] = CellState.OCCUPIED
    truth[:, 40] = CellState.OCCUPIED
    truth[19:22, 40] = CellState.FREE
    truth = OccupancyGrid(truth, 0.1)
    belief = truth.cells.copy()
    belief[:, 20:40] = CellState.UNKNOWN
    belief[:, 41:] = CellState.UNKNOWN
    belief[0, :] = belief[-1, :] = CellState.OCCUPIED
    belief[:, 40] = truth.cells[:, 40]
    return truth, OccupancyGrid(belief, 0.1)


def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(eta_max=0.1, r_robot=0.24)
    with pytest.raises(ValueError):
        SearchParams(theta_cov=0.0)
    with pytest.raises(ValueError):
        SearchParams(theta_fl=0)


def test_nearest_node_examples(rng):
    t = RrtTree((0.5, 0.5), Rect(0, 0, 5, 5))
    assert nearest_node(t, (3.0, 3.0)).id == 0
    pts = rng.uniform(0, 5, (50, 2))
    for p in pts:
        t.add(p, int(rng.integers(t.n)))
    assert nearest_node(t, pts[7]).id == 8
    for q in rng.uniform(-1, 6, (200, 2)):
        d = np.hypot(*(t.pos[: t.n] - q).T)
        assert nearest_node(t, q).id == int(np.argmin(d))


def test_nearest_ties_go_to_lowest_id():
    t = RrtTree((0.0, 0.0), Rect(-1, -1, 1, 1))
    t.add((1.0, 0.0), 0)
    t.add((-1.0, 0.0), 0)
    assert nearest_node(t, (0.0, 0.0)).id == 0
    t2 = RrtTree((0.0, 1.0), Rect(-1, -1, 1, 1))
    t2.add((0.0, -1.0), 0)
    assert nearest_node(t2, (0.0, 0.0)).id == 0


def _lone_obstacle_grid():
    cells = np.full((60, 60), CellState.FREE, dtype=np.int8)
    cells[0, 0] = CellState.OCCUPIED
    return OccupancyGrid(cells, 0.01)


def test_adaptive_expand_dist_examples():
    g = _lone_obstacle_grid()
    # cell (0, 48) is 0.48 m = 2 r_robot from the obstacle
    assert adaptive_expand_dist((0.485, 0.005), g, P) == pytest.approx(0.5)
    assert adaptive_expand_dist((0.245, 0.005), g, P) == pytest.approx(0.24)
    assert adaptive_expand_dist((0.365, 0.005), g, P) == pytest.approx(0.37)
    assert adaptive_expand_dist((1.0, 1.0), free_grid(20, 20), P) == 0.5


def test_adaptive_expand_dist_monotone_and_bounded():
    g = _lone_obstacle_grid()
    etas = [adaptive_expand_dist(((k + 0.5) * 0.01, 0.005), g, P) for k in range(60)]
    assert all(a <= b + 1e-12 for a, b in zip(etas, etas[1:]))
    assert min(etas) >= P.r_robot and max(etas) <= P.eta_max


def test_extend_point_examples():
    assert np.allclose(extend_point((0.25, 0), (0, 0), 0.5), (0.25, 0))
    assert np.allclose(extend_point((2, 0), (0, 0), 0.5), (0.5, 0))
    assert np.allclose(extend_point((3, 4), (0, 0), 1.0), (0.6, 0.8))
    assert np.allclose(extend_point((1, 1), (1, 1), 0.5), (1, 1))


def test_coverage_and_completion():
    g = OccupancyGrid.filled(20, 20, 0.05, CellState.FREE)
    assert rrt_coverage(None, g.bounds, g) == 0.0
    t = RrtTree((0.1, 0.1), g.bounds)
    for k in range(199):
        t.add((0.5, 0.5), 0)
    assert rrt_coverage(t, g.bounds, g) == pytest.approx(0.5)
    assert rrt_coverage(t, g.bounds, OccupancyGrid.filled(20, 20, 0.05)) == math.inf
    params = SearchParams(theta_cov=0.95, theta_fl=5)
    assert exploration_completed(t, g.bounds, g, 6, FrontierOrigin.LOCAL, params)
    assert not exploration_completed(t, g.bounds, g, 6, FrontierOrigin.GLOBAL, params)
    assert not exploration_completed(None, g.bounds, g, 0, FrontierOrigin.LOCAL, params)


def test_coverage_above_threshold_completes_global():
    g = OccupancyGrid.filled(10, 10, 0.1, CellState.FREE)
    t = RrtTree((0.5, 0.5), g.bounds)
    for _ in range(95):
        t.add((0.5, 0.5), 0)
    assert rrt_coverage(t, g.bounds, g) == pytest.approx(0.96)
    assert exploration_completed(t, g.bounds, g, 0, FrontierOrigin.GLOBAL, P)


def test_uniform_downsample_examples(rng):
    assert np.allclose(uniform_downsample([(0.1, 0.1), (0.2, 0.2), (0.3, 0.1)], 0.5), [(0.1, 0.1)])
    pts = np.array([(0.25, 0.25), (1.75, 0.25), (0.25, 1.75)])
    assert len(uniform_downsample(pts, 0.5)) == 3
    pts = rng.uniform(0, 5, (100, 2))
    out = uniform_downsample(pts, 0.5)
    keys = {tuple(k) for k in np.floor(out / 0.5).astype(int)}
    assert len(keys) == len(out) == len({tuple(k) for k in np.floor(pts / 0.5).astype(int)})
    for p in out:
        same = np.all(np.floor(pts / 0.5) == np.floor(p / 0.5), axis=1)
        assert np.array_equal(pts[np.argmax(same)], p)


def test_known_boundary_gives_no_frontiers():
    g = free_grid(50, 50)
    res = expand_and_search((2.5, 2.5), Disc(2.5, 2.5, 1.0), g, P, np.random.default_rng(0))
    assert res.frontiers == []
    assert not res.timed_out


def test_root_in_collision_is_rejected():
    cells = np.full((20, 20), CellState.FREE, dtype=np.int8)
    cells[10, 10] = CellState.OCCUPIED
    g = OccupancyGrid(cells, 0.1)
    with pytest.raises(SearchError):
        expand_and_search((1.05, 1.05), g.bounds, g, P, np.random.default_rng(0))


def _check_tree(search, grid):
    t = search.tree
    assert t.is_connected()
    ids, p0, p1 = t.edges()
    assert traversability_batch(p0, p1, grid, P.r_robot).all()
    both_unknown = (grid.state_at(p0[:, 0], p0[:, 1]) == CellState.UNKNOWN) & \
        (grid.state_at(p1[:, 0], p1[:, 1]) == CellState.UNKNOWN)
    assert not both_unknown.any()


def test_frontiers_cross_the_known_boundary():
    cells = np.full((80, 80), CellState.UNKNOWN, dtype=np.int8)
    cells[35:45, 35:45] = CellState.FREE
    g = OccupancyGrid(cells, 0.1)
    res = expand_and_search((4.0, 4.0), Disc(4.0, 4.0, 3.0), g, P, np.random.default_rng(3))
    assert res.frontiers
    for f in res.frontiers:
        assert g.state_at(*f.position) == CellState.UNKNOWN
        parent = res.tree.parent[f.node_id]
        assert g.state_at(*res.tree.pos[parent]) != CellState.UNKNOWN


def test_no_frontier_behind_ray_leak_slit():
    truth, belief = _leak_world()
    reach = flood_reachable(truth, (1.0, 2.0), P.r_robot)
    for seed in range(5):
        s = FrontierSearch((1.0, 2.0), belief.bounds, belief, P, FrontierOrigin.GLOBAL, np.random.default_rng(seed))
        s.expand(belief, 20_000)
        _check_tree(s, belief)
        assert s.frontiers()
        for f in s.frontiers():
            px, py = s.tree.pos[s.tree.parent[f.node_id]]
            row, col = truth.world_to_cell(px, py)
            assert reach[row, col]
            assert f.position[0] < 4.0


def test_search_is_deterministic_per_seed():
    _, belief = _leak_world()
    dumps = []
    for _ in range(2):
        res = expand_and_search((1.0, 2.0), Disc(1.0, 2.0, 3.0), belief, P, np.random.default_rng(42))
        dumps.append((res.tree.dump(), [f.position for f in res.frontiers]))
    assert dumps[0] == dumps[1]


def test_prune_noop_when_nothing_changed():
    _, belief = _leak_world()
    s = FrontierSearch((1.0, 2.0), belief.bounds, belief, P, FrontierOrigin.GLOBAL, np.random.default_rng(1))
    s.expand(belief, 5000)
    before = (s.tree.dump(), s.frontiers())
    kept, tree = prune_global(s.frontiers(), s.tree, belief, P)
    assert kept == before[1] and tree.dump() == before[0]


def test_prune_removes_known_frontiers_and_cut_branches():
    truth, belief = _leak_world()
    s = FrontierSearch((1.0, 2.0), belief.bounds, belief, P, FrontierOrigin.GLOBAL, np.random.default_rng(2))
    s.expand(belief, 20_000)
    assert s.frontiers()
    cells = belief.cells.copy()
    cells[:, 20:40] = truth.cells[:, 20:40]
    # a new wall bisecting the region at x = 3 m
    cells[:, 30] = CellState.OCCUPIED
    newer = belief.with_cells(cells)
    kept, tree = prune_global(s.frontiers(), s.tree, newer, P)
    for f in kept:
        assert newer.state_at(*f.position) == CellState.UNKNOWN
    assert tree.is_connected()
    ids, p0, p1 = tree.edges()
    assert traversability_batch(p0, p1, newer, P.r_robot).all()
    assert not np.any(tree.pos[tree.alive_ids()][:, 0] > 2.9)
    assert np.any(tree.pos[tree.alive_ids()][:, 0] < 1.5)


def test_prune_rejects_dangling_frontier():
    _, belief = _leak_world()
    s = FrontierSearch((1.0, 2.0), belief.bounds, belief, P, FrontierOrigin.GLOBAL, np.random.default_rng(1))
    s.expand(belief, 2000)
    from explora.rrt_frontier import FrontierPoint
    with pytest.raises(SearchError):
        prune_global([FrontierPoint((0.0, 0.0), FrontierOrigin.GLOBAL, 10**6)], s.tree, belief, P)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tree_invariants_hold_after_expansion(seed):
    rng = np.random.default_rng(seed)
    cells = np.full((50, 50), CellState.UNKNOWN, dtype=np.int8)
    cells[10:40, 10:40] = CellState.FREE
    cells[rng.random((50, 50)) < 0.03] = CellState.OCCUPIED
    cells[24:27, 24:27] = CellState.FREE
    cells[20:31, 20:31][np.ix_([0, 10], range(11))] = CellState.FREE
    g = OccupancyGrid(cells, 0.1)
    from explora.grid_map import min_dist_to_obstacle
    if min_dist_to_obstacle((2.55, 2.55), g) < P.r_robot:
        return
    res = expand_and_search((2.55, 2.55), Disc(2.55, 2.55, 2.0), g, P, rng, max_samples=3000)
    t = res.tree
    assert t.is_connected()
    ids, p0, p1 = t.edges()
    assert traversability_batch(p0, p1, g, P.r_robot).all()
    for f in res.frontiers:
        assert g.state_at(*f.position) == CellState.UNKNOWN
