"""Closed-loop exploration: scan, search locally, select, drive; fall back to the global tree.

Everything runs in one task. The global frontier tree advances a fixed number
of samples at every decision point, so a seed fully determines a mission.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .config import Scenario, ScenarioConfig
from .frontier_select import SelectionContext, select_best_frontier, wrap_angle
from .grid_map import CellState, Disc, OccupancyGrid, traversability_check
from .polyline import dijkstra_path, path_cost_matrix, plan_polyline
from .rrt_frontier import ITERATION_CAP, FrontierOrigin, FrontierSearch, uniform_downsample
from .sim import MotionKind, Simulator


class ExplorationPhase(enum.Enum):
    PRE_SCAN = "PreScanRotation"
    LOCAL_SEARCH = "LocalSearch"
    LOCAL_NAVIGATE = "LocalNavigate"
    GLOBAL_SELECT = "GlobalSelect"
    RETRACE_NAVIGATE = "RetraceNavigate"
    GLOBAL_NAVIGATE = "GlobalNavigate"
    RETURN_HOME = "ReturnHome"
    DONE = "Done"


_NEXT = {
    ExplorationPhase.PRE_SCAN: {ExplorationPhase.LOCAL_SEARCH},
    ExplorationPhase.LOCAL_SEARCH: {ExplorationPhase.LOCAL_NAVIGATE, ExplorationPhase.GLOBAL_SELECT},
    ExplorationPhase.LOCAL_NAVIGATE: {ExplorationPhase.PRE_SCAN},
    ExplorationPhase.GLOBAL_SELECT: {ExplorationPhase.RETRACE_NAVIGATE, ExplorationPhase.RETURN_HOME},
    ExplorationPhase.RETRACE_NAVIGATE: {ExplorationPhase.GLOBAL_NAVIGATE},
    ExplorationPhase.GLOBAL_NAVIGATE: {ExplorationPhase.PRE_SCAN},
    ExplorationPhase.RETURN_HOME: {ExplorationPhase.DONE},
    ExplorationPhase.DONE: set(),
}


class NavMode(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"
    RETRACE = "retrace"
    HOME = "home"


class NavResult(enum.Enum):
    REACHED = "Reached"
    UNREACHABLE = "Unreachable"
    COLLISION = "Collision"


class Outcome(enum.Enum):
    FINISHED = "Finished"
    COLLISION = "Collision"
    STALL = "Stall"
    TIMEOUT = "Timeout"


class MissionAbort(Exception):
    def __init__(self, outcome: Outcome, reason: str):
        super().__init__(reason)
        self.outcome = outcome
        self.reason = reason


@dataclass(frozen=True)
class SaSchedule:
    t_initial: float | None = None
    t_final: float | None = None
    cooling: float = 0.95
    iterations: int | None = None
    seed: int = 0
    final_ratio: float = 0.01
    iterations_per_point: int = 200

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ValueError("cooling must be in (0, 1)")
        if self.t_initial is not None and self.t_final is not None and not self.t_initial > self.t_final > 0:
            raise ValueError("need t_initial > t_final > 0")


# ---------------------------------------------------------------------------
# waypoint ordering


def tour_cost(order, cost: np.ndarray) -> float:
    """Cost of start -> points[order] -> end where row/col 0 is start and -1 is end."""
    stops = [0, *(k + 1 for k in order), cost.shape[0] - 1]
    return float(sum(cost[a, b] for a, b in zip(stops[:-1], stops[1:])))


def leg_costs(stops, grid: OccupancyGrid | None, r_robot: float) -> np.ndarray:
    pts = np.asarray(stops, dtype=float)
    euclid = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    if grid is None:
        return euclid
    paths = path_cost_matrix(pts, grid, r_robot)
    paths = np.minimum(paths, paths.T)
    return np.where(np.isfinite(paths), paths, euclid)


def _two_opt_polish(order: list, cost: np.ndarray) -> list:
    n = len(order)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                trial = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                if tour_cost(trial, cost) < tour_cost(order, cost) - 1e-12:
                    order = trial
                    improved = True
    return order


def sa_order_waypoints(points, start, end, schedule: SaSchedule, grid: OccupancyGrid | None = None,
                       r_robot: float = 0.24, cost: np.ndarray | None = None) -> list:
    """Order ``points`` for a tour start -> points -> end with 2-opt simulated annealing.

    Leg costs are clearance-graph path lengths, or straight-line distance when
    a leg has no path (or no grid is given).
    """
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    if n == 0:
        return []
    if cost is None:
        cost = leg_costs([start, *pts, end], grid, r_robot)
    if n == 1:
        return pts
    rng = np.random.default_rng(schedule.seed)
    idx = [0, *range(1, n + 1), n + 1]
    legs = [cost[a, b] for a, b in zip(idx[:-1], idx[1:])]
    t0 = schedule.t_initial if schedule.t_initial is not None else max(float(np.mean(legs)), 1e-9)
    t_end = schedule.t_final if schedule.t_final is not None else t0 * schedule.final_ratio
    budget = schedule.iterations or schedule.iterations_per_point * n
    levels = max(1, math.ceil(math.log(t_end / t0) / math.log(schedule.cooling)))
    per_level = max(1, budget // levels)

    order = list(range(n))
    cur = tour_cost(order, cost)
    best, best_cost = order[:], cur
    temp = t0
    done = 0
    while done < budget:
        for _ in range(per_level):
            i, j = sorted(rng.choice(n, 2, replace=False))
            a = 0 if i == 0 else order[i - 1] + 1
            b = n + 1 if j == n - 1 else order[j + 1] + 1
            ti, tj = order[i] + 1, order[j] + 1
            delta = cost[a, tj] + cost[ti, b] - cost[a, ti] - cost[tj, b]
            if delta < 0 or rng.random() < math.exp(-delta / temp):
                order[i : j + 1] = order[i : j + 1][::-1]
                cur = tour_cost(order, cost)
                if cur < best_cost - 1e-12:
                    best, best_cost = order[:], cur
            done += 1
            if done >= budget:
                break
        temp *= schedule.cooling
    best = _two_opt_polish(best, cost)
    return [pts[k] for k in best]


# ---------------------------------------------------------------------------
# mission


@dataclass
class MissionReport:
    outcome: Outcome
    reason: str
    total_time: float
    distance: float
    rotation: float
    events: list
    belief: OccupancyGrid
    trajectory: list
    segments: list
    junction_turns: list
    plan_times: list
    extension: object
    start: tuple
    final_pose: tuple
    tree_edges: tuple = ((), ())
    frontiers: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    @property
    def finished(self) -> bool:
        return self.outcome is Outcome.FINISHED

    def known_area_series(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.array([row[0] for row in self.trajectory])
        a = np.array([row[5] for row in self.trajectory])
        return t, a


class EventLog:
    def __init__(self, clock):
        self.clock = clock
        self.lines: list[str] = []
        self.phase = ExplorationPhase.PRE_SCAN

    def emit(self, event: str, **fields):
        parts = [f"t={self.clock.t:.2f}", f"phase={self.phase.value}", f"event={event}"]
        for k, v in fields.items():
            if isinstance(v, float):
                v = f"{v:.3f}"
            elif isinstance(v, tuple):
                v = ",".join(f"{c:.3f}" for c in v)
            parts.append(f"{k}={v}")
        self.lines.append(" ".join(parts))


def _fmt(p) -> tuple:
    return (float(p[0]), float(p[1]))


class Mission:
    """One exploration run. ``observer`` (optional) is called as observer(kind, mission, payload)."""

    def __init__(self, scenario: Scenario, seed: int, observer=None):
        cfg = scenario.config
        self.cfg: ScenarioConfig = cfg
        self.scenario = scenario
        self.seed = seed
        self.observer = observer
        seq = np.random.SeedSequence(seed)
        local_seq, global_seq, sa_seq = seq.spawn(3)
        self.local_rng = np.random.default_rng(local_seq)
        self.sa_rng = np.random.default_rng(sa_seq)
        self.sim = Simulator(scenario.truth, cfg.robot(), cfg.lidar(), cfg.dt, edits=cfg.truth_edits())
        self.log = EventLog(self.sim.clock)
        self.search_params = cfg.search()
        self.plan_params = cfg.polyline()
        self.weights = cfg.weights()
        self.start = (cfg.start_x, cfg.start_y)
        self.global_search = FrontierSearch(self.start, scenario.truth.bounds, self.sim.belief, self.search_params,
                                            FrontierOrigin.GLOBAL, np.random.default_rng(global_seq))
        self.global_frontiers = []
        self.visited: list[tuple[tuple[float, float], float]] = []
        self.blacklist: list[tuple[float, float]] = []
        self.segments: list[float] = []
        self.junction_turns: list[float] = []
        self.plan_times: list[float] = []
        self.p_last = (cfg.start_x - math.cos(cfg.start_theta), cfg.start_y - math.sin(cfg.start_theta))
        self.budget = cfg.time_budget or cfg.budget_factor * scenario.free_area / (cfg.v_max * 2 * cfg.r_robot)
        self.counters = {"decisions": 0, "replans": 0, "global_episodes": 0, "blacklisted": 0, "retrace_points": 0}
        self._stall_ref = (0.0, self.sim.robot.x, self.sim.robot.y, 0.0)
        self._last_heading = None

    # -- bookkeeping -------------------------------------------------------
    def _enter(self, phase: ExplorationPhase):
        if phase not in _NEXT[self.log.phase] and phase is not self.log.phase:
            raise RuntimeError(f"illegal transition {self.log.phase.value} -> {phase.value}")
        self.log.phase = phase
        self.log.emit("enter")

    def _notify(self, kind, payload=None):
        if self.observer is not None:
            self.observer(kind, self, payload)

    def _check_budget(self):
        sim = self.sim
        if sim.t > self.budget:
            raise MissionAbort(Outcome.TIMEOUT, f"sim time {sim.t:.1f} s exceeded budget {self.budget:.1f} s")
        t0, x0, y0, a0 = self._stall_ref
        if math.hypot(sim.robot.x - x0, sim.robot.y - y0) >= self.cfg.stall_displacement or \
                sim.known_area - a0 >= self.cfg.stall_area:
            self._stall_ref = (sim.t, sim.robot.x, sim.robot.y, sim.known_area)
        elif sim.t - t0 >= self.cfg.stall_window:
            raise MissionAbort(Outcome.STALL, f"no progress for {sim.t - t0:.1f} s")

    def _blacklisted(self, p) -> bool:
        r = self.cfg.blacklist_radius
        return any(math.hypot(p[0] - q[0], p[1] - q[1]) < r for q in self.blacklist)

    def _ban(self, p, why: str):
        self.blacklist.append(_fmt(p))
        self.counters["blacklisted"] += 1
        self.log.emit("blacklist", at=_fmt(p), reason=why)

    # -- global task -------------------------------------------------------
    def global_step(self):
        gs = self.global_search
        belief = self.sim.belief
        if gs.pruned_revision != belief.revision:
            gs.prune(belief)
            self._notify("prune", gs)
        gs.expand(belief, self.cfg.global_samples)
        self.global_frontiers = gs.frontiers()

    # -- motion ------------------------------------------------------------
    def _rotate_to(self, heading: float):
        dtheta = wrap_angle(heading - self.sim.robot.theta)
        if dtheta:
            self.sim.rotate_in_place(dtheta)
            self._check_budget()
        return abs(dtheta)

    def _plan(self, goal):
        r = self.sim.robot
        res = plan_polyline(r.position, goal, self.sim.belief, self.plan_params, r.r_robot)
        if res.ok:
            self.plan_times.append(res.t_calc)
        return res.path

    def navigate_to(self, goal, mode: NavMode) -> NavResult:
        sim = self.sim
        robot = sim.robot
        goal = _fmt(goal)
        tol = 2 * sim.truth.resolution
        self.log.emit("nav_start", mode=mode.value, goal=goal)
        if math.hypot(robot.x - goal[0], robot.y - goal[1]) <= tol:
            self.log.emit("nav_end", result=NavResult.REACHED.value, goal=goal)
            return NavResult.REACHED
        path = self._plan(goal)
        if path is None:
            self.log.emit("nav_end", result=NavResult.UNREACHABLE.value, goal=goal, reason="no_path")
            return NavResult.UNREACHABLE
        replans = 0
        junctions = [_fmt(p) for p in path.junctions]
        i = 1
        while True:
            if i >= len(junctions):
                self.log.emit("nav_end", result=NavResult.REACHED.value, goal=goal)
                return NavResult.REACHED
            nxt = junctions[i]
            seg = math.hypot(nxt[0] - robot.x, nxt[1] - robot.y)
            blocked = False
            if seg > 0:
                heading = math.atan2(nxt[1] - robot.y, nxt[0] - robot.x)
                turn = self._rotate_to(heading)
                if self._last_heading is not None:
                    self.junction_turns.append(turn)
                blocked = not traversability_check(robot.position, nxt, sim.belief, robot.r_robot)
                if not blocked:
                    seg_start = robot.position
                    ev = sim.execute_segment(nxt)
                    if ev.kind is MotionKind.COLLISION:
                        self.log.emit("collision", at=_fmt(ev.pose))
                        self.log.emit("nav_end", result=NavResult.COLLISION.value, goal=goal)
                        return NavResult.COLLISION
                    self._check_budget()
                    self._last_heading = heading
                    if ev.kind is MotionKind.SEGMENT_DONE:
                        self.p_last = seg_start
                        self.segments.append(seg)
                        if mode in (NavMode.LOCAL, NavMode.GLOBAL):
                            self.visited.append((nxt, sim.t))
                    else:
                        blocked = True
            if not blocked:
                i += 1
                continue
            replans += 1
            self.counters["replans"] += 1
            self.log.emit("replan", at=robot.position, goal=goal)
            path = self._plan(goal) if replans <= self.cfg.max_replans else None
            if path is None:
                self.log.emit("nav_end", result=NavResult.UNREACHABLE.value, goal=goal, reason="replan_failed")
                return NavResult.UNREACHABLE
            junctions = [_fmt(p) for p in path.junctions]
            i = 1

    def _standoff(self, target):
        """Last clearance-path point before the path enters unknown space."""
        robot = self.sim.robot
        belief = self.sim.belief
        dense = dijkstra_path(robot.position, target, belief, robot.r_robot)
        if dense is None:
            return None
        pts = dense.points
        for k in range(1, len(pts)):
            if belief.state_at(pts[k][0], pts[k][1]) == CellState.UNKNOWN:
                return _fmt(pts[k - 1])
        return _fmt(pts[-1])

    def _go_frontier(self, frontier, mode: NavMode) -> NavResult:
        robot = self.sim.robot
        goal = self._standoff(frontier.position)
        if goal is None:
            self._ban(frontier.position, "unreachable")
            return NavResult.UNREACHABLE
        if math.hypot(goal[0] - robot.x, goal[1] - robot.y) <= 2 * self.sim.truth.resolution:
            self._ban(frontier.position, "no_motion")
            return NavResult.UNREACHABLE
        result = self.navigate_to(goal, mode)
        if result is NavResult.UNREACHABLE:
            self._ban(frontier.position, "unreachable")
        return result

    # -- phases ------------------------------------------------------------
    def _local_frontiers(self):
        robot = self.sim.robot
        belief = self.sim.belief
        search = FrontierSearch(robot.position, Disc(robot.x, robot.y, self.cfg.r_sensing), belief,
                                self.search_params, FrontierOrigin.LOCAL, self.local_rng)
        if not search.is_completed(belief):
            search.expand(belief, ITERATION_CAP)
        found = search.frontiers()
        self._notify("local", search)
        kept = [f for f in found if not self._blacklisted(f.position)]
        self.log.emit("local_search", nodes=len(search.tree), frontiers=len(kept), raw=len(found))
        return kept

    def _select(self, frontiers):
        robot = self.sim.robot
        ctx = SelectionContext(self.p_last, robot.position, self.cfg.r_sensing)
        f = select_best_frontier(frontiers, ctx, self.sim.belief, self.weights)
        self.log.emit("select", origin=f.origin.value, node=f.node_id, at=f.position)
        return f

    def _retrace(self, frontier):
        pts = [p for p, _ in self.visited]
        self.visited = []
        if not pts:
            self.log.emit("retrace", points=0)
            return NavResult.REACHED
        reduced = uniform_downsample(pts, self.cfg.visited_cell)
        sched = SaSchedule(cooling=self.cfg.sa_cooling, final_ratio=self.cfg.sa_final_ratio,
                           iterations_per_point=self.cfg.sa_iterations_per_point,
                           seed=int(self.sa_rng.integers(2**31)))
        robot = self.sim.robot
        order = sa_order_waypoints(reduced, robot.position, frontier.position, sched, self.sim.belief, robot.r_robot)
        self.counters["retrace_points"] += len(order)
        self.log.emit("retrace", points=len(order))
        for wp in order:
            res = self.navigate_to(wp, NavMode.RETRACE)
            if res is NavResult.COLLISION:
                return res
            if res is NavResult.UNREACHABLE:
                self.log.emit("skip_waypoint", at=_fmt(wp))
        return NavResult.REACHED

    def _go_home(self) -> bool:
        for attempt in range(2):
            res = self.navigate_to(self.start, NavMode.HOME)
            if res is NavResult.COLLISION:
                raise MissionAbort(Outcome.COLLISION, "collision on the way home")
            if res is NavResult.REACHED:
                return True
            self.sim.rotate_in_place(2 * math.pi)
            self._check_budget()
        return False

    def _loop(self):
        sim = self.sim
        while True:
            self.counters["decisions"] += 1
            if self.counters["decisions"] > self.cfg.max_decisions:
                raise MissionAbort(Outcome.TIMEOUT, "decision cap reached")
            self._enter(ExplorationPhase.PRE_SCAN)
            sim.rotate_in_place(2 * math.pi)
            self._check_budget()
            self.global_step()
            self._enter(ExplorationPhase.LOCAL_SEARCH)
            local = self._local_frontiers()
            if local:
                target = self._select(local)
                self._enter(ExplorationPhase.LOCAL_NAVIGATE)
                if self._go_frontier(target, NavMode.LOCAL) is NavResult.COLLISION:
                    raise MissionAbort(Outcome.COLLISION, "collision during local navigation")
                continue
            self._enter(ExplorationPhase.GLOBAL_SELECT)
            self.global_step()
            candidates = [f for f in self.global_frontiers if not self._blacklisted(f.position)]
            self.log.emit("global_frontiers", count=len(candidates), nodes=len(self.global_search.tree))
            if not candidates:
                self._enter(ExplorationPhase.RETURN_HOME)
                return self._go_home()
            target = self._select(candidates)
            self.counters["global_episodes"] += 1
            self._enter(ExplorationPhase.RETRACE_NAVIGATE)
            if self._retrace(target) is NavResult.COLLISION:
                raise MissionAbort(Outcome.COLLISION, "collision during retrace")
            self._enter(ExplorationPhase.GLOBAL_NAVIGATE)
            if self._go_frontier(target, NavMode.GLOBAL) is NavResult.COLLISION:
                raise MissionAbort(Outcome.COLLISION, "collision during global navigation")

    def run(self) -> MissionReport:
        sim = self.sim
        self.log.emit("mission_start", seed=self.seed, at=self.start)
        try:
            home = self._loop()
            dist_home = math.hypot(sim.robot.x - self.start[0], sim.robot.y - self.start[1])
            if home and dist_home <= 2 * sim.truth.resolution:
                outcome, reason = Outcome.FINISHED, "explored"
            else:
                outcome, reason = Outcome.STALL, "could not return home"
        except MissionAbort as abort:
            outcome, reason = abort.outcome, abort.reason
        self.log.phase = ExplorationPhase.DONE
        self.log.emit("mission_end", outcome=outcome.value, reason=reason.replace(" ", "_"))
        ids, p0, p1 = self.global_search.tree.edges()
        return MissionReport(
            outcome=outcome, reason=reason, total_time=sim.t, distance=sim.distance, rotation=sim.rotation,
            events=self.log.lines, belief=sim.belief, trajectory=sim.trajectory, segments=self.segments,
            junction_turns=self.junction_turns, plan_times=self.plan_times, extension=sim.extension,
            start=self.start, final_pose=sim.robot.pose, tree_edges=(p0, p1),
            frontiers=[f.position for f in self.global_frontiers], counters=dict(self.counters),
        )


def run_mission(scenario: Scenario, seed: int, observer=None) -> MissionReport:
    return Mission(scenario, seed, observer).run()


def navigate_to(mission: Mission, goal, mode: NavMode) -> NavResult:
    return mission.navigate_to(goal, mode)
