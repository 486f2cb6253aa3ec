"""Frontier scoring: information gain, heading continuity, distance and openness."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .grid_map import OccupancyGrid, min_dist_to_obstacle, unknown_area_in_disc


@dataclass(frozen=True)
class SelectionWeights:
    w_info: float = 1.0
    w_dir: float = 1.0
    w_dist: float = 0.5
    w_free: float = 2.0

    def __post_init__(self):
        for name in ("w_info", "w_dir", "w_dist", "w_free"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def scaled(self, k: float) -> SelectionWeights:
        return SelectionWeights(self.w_info * k, self.w_dir * k, self.w_dist * k, self.w_free * k)


@dataclass(frozen=True)
class SelectionContext:
    p_last: tuple[float, float]
    p_robot: tuple[float, float]
    r_sensing: float = 20.0

    def __post_init__(self):
        if not self.r_sensing > 0:
            raise ValueError("r_sensing must be positive")


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


def dir_diff(p0, p1, p2) -> float:
    """Signed turn from direction p0->p1 to direction p1->p2, in (-pi, pi].

    Coincident points give 0.
    """
    ax, ay = p1[0] - p0[0], p1[1] - p0[1]
    bx, by = p2[0] - p1[0], p2[1] - p1[1]
    if (ax == 0 and ay == 0) or (bx == 0 and by == 0):
        return 0.0
    ang = math.atan2(ax * by - ay * bx, ax * bx + ay * by)
    # atan2 returns -pi for an exact reversal with a -0.0 cross product
    return math.pi if ang == -math.pi else ang


def info_gain(f, grid: OccupancyGrid, r_sensing: float) -> float:
    return unknown_area_in_disc(f, r_sensing, grid)


def score_terms(f, ctx: SelectionContext, grid: OccupancyGrid):
    """Normalized (info, direction, distance, openness) terms for one frontier position."""
    r = ctx.r_sensing
    info = info_gain(f, grid, r) / (math.pi * r * r)
    direction = math.pi - abs(dir_diff(ctx.p_last, ctx.p_robot, f))
    dist = math.hypot(ctx.p_robot[0] - f[0], ctx.p_robot[1] - f[1]) / r
    clearance = min(min_dist_to_obstacle(f, grid), r) / r
    return info, direction, dist, clearance


def frontier_score(f, ctx: SelectionContext, grid: OccupancyGrid, w: SelectionWeights) -> float:
    info, direction, dist, clearance = score_terms(f, ctx, grid)
    return w.w_info * info + w.w_dir * direction + w.w_dist * dist + w.w_free * clearance


def select_best_frontier(frontiers, ctx: SelectionContext, grid: OccupancyGrid, w: SelectionWeights):
    """Highest-scoring frontier; ties go to the lowest id."""
    if not frontiers:
        raise LookupError("no frontier to select from")
    best = None
    best_key = None
    for f in frontiers:
        key = (frontier_score(f.position, ctx, grid, w), -f.id)
        if best_key is None or key > best_key:
            best, best_key = f, key
    return best
