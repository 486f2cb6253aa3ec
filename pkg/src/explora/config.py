"""Scenario files: line-oriented ``key = value`` with ``#`` comments."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .frontier_select import SelectionWeights
from .grid_map import CellState, OccupancyGrid, load_map
from .polyline import PolylineParams
from .rrt_frontier import SearchParams
from .sim import LidarConfig, RobotState, TruthEdit

MAPS_DIR = Path(__file__).parent / "maps"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    map: str = ""
    start_x: float = 0.0
    start_y: float = 0.0
    start_theta: float = 0.0
    # robot
    r_robot: float = 0.24
    v_max: float = 1.25
    omega_max: float = 1.57
    # lidar
    fov: float = 360.0
    beams: int = 0
    r_sensing: float = 20.0
    scan_rate: float = 10.0
    # frontier search
    eta_max: float = 0.5
    theta_cov: float = 0.95
    theta_fl: int = 5
    # polyline planner
    d: float = 1.25
    k_rot: float = 1.0
    k_uni: float = 1.0
    backend: str = "dp"
    max_waypoints: int = 4000
    # frontier selection
    w_info: float = 1.0
    w_dir: float = 1.0
    w_dist: float = 0.5
    w_free: float = 2.0
    # mission
    dt: float = 0.05
    global_samples: int = 200
    visited_cell: float = 2.0
    blacklist_radius: float = 0.5
    stall_window: float = 30.0
    stall_displacement: float = 0.05
    stall_area: float = 0.01
    budget_factor: float = 20.0
    time_budget: float = 0.0
    max_decisions: int = 2000
    max_replans: int = 20
    sa_cooling: float = 0.95
    sa_final_ratio: float = 0.01
    sa_iterations_per_point: int = 200
    # batch
    seed: int = 1
    runs: int = 1
    edits: tuple = field(default=())
    base_dir: str = "."

    # -- derived parameter objects
    def robot(self) -> RobotState:
        return RobotState(self.start_x, self.start_y, self.start_theta, self.r_robot, self.v_max, self.omega_max)

    def lidar(self) -> LidarConfig:
        return LidarConfig(self.fov, self.beams or None, self.r_sensing, self.scan_rate)

    def search(self) -> SearchParams:
        return SearchParams(eta_max=self.eta_max, r_robot=self.r_robot, theta_cov=self.theta_cov, theta_fl=self.theta_fl)

    def polyline(self) -> PolylineParams:
        return PolylineParams(self.d, self.k_rot, self.k_uni, self.backend, self.max_waypoints)

    def weights(self) -> SelectionWeights:
        return SelectionWeights(self.w_info, self.w_dir, self.w_dist, self.w_free)

    def truth_edits(self) -> list[TruthEdit]:
        return [TruthEdit(e[0], tuple(e[1:5])) for e in self.edits]

    def map_path(self) -> Path:
        p = Path(self.map)
        if not p.is_absolute():
            local = Path(self.base_dir) / p
            p = local if local.exists() else MAPS_DIR / p
        return p

    def replace(self, **changes) -> ScenarioConfig:
        return validate(dataclasses.replace(self, **changes))


_FIELDS = {f.name: f for f in fields(ScenarioConfig) if f.name not in ("edits", "base_dir")}


def _convert(name: str, raw: str):
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} ({exc})") from None


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Build every owning parameter type so constraint violations surface with a field name."""
    checks = [
        ("robot", cfg.robot), ("lidar", cfg.lidar), ("search", cfg.search),
        ("planner", cfg.polyline), ("weights", cfg.weights),
    ]
    for label, build in checks:
        try:
            build()
        except ValueError as exc:
            raise ConfigError(f"{label}: {exc}") from None
    positive = ("dt", "visited_cell", "blacklist_radius", "stall_window", "budget_factor", "sa_final_ratio")
    for name in positive:
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name}: must be positive")
    if not 0 < cfg.sa_cooling < 1:
        raise ConfigError("sa_cooling: must be in (0, 1)")
    if not cfg.sa_final_ratio < 1:
        raise ConfigError("sa_final_ratio: must be < 1")
    for name in ("global_samples", "runs", "max_decisions", "max_replans", "sa_iterations_per_point"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be >= 1")
    if cfg.time_budget < 0:
        raise ConfigError("time_budget: must be >= 0")
    if not cfg.map:
        raise ConfigError("map: missing")
    if not cfg.map_path().exists():
        raise ConfigError(f"map: file not found: {cfg.map_path()}")
    return cfg


def parse_config(text: str, base_dir=".") -> ScenarioConfig:
    values = {}
    edits = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "edit":
            try:
                nums = [float(v) for v in raw.split()]
            except ValueError:
                raise ConfigError(f"edit: cannot parse {raw!r}") from None
            if len(nums) != 5:
                raise ConfigError("edit: expected 't xmin ymin xmax ymax'")
            edits.append(tuple(nums))
            continue
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown key (line {lineno})")
        values[key] = _convert(key, raw)
    return validate(ScenarioConfig(**values, edits=tuple(edits), base_dir=str(base_dir)))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        bundled = MAPS_DIR / path.name
        if bundled.exists():
            path = bundled
        else:
            raise ConfigError(f"config: file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    truth: OccupancyGrid

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> Scenario:
        return cls(cfg, load_map(cfg.map_path()))

    @classmethod
    def load(cls, path) -> Scenario:
        return cls.from_config(load_config(path))

    @property
    def free_area(self) -> float:
        return self.truth.count(CellState.FREE) * self.truth.resolution ** 2


def bundled_configs() -> list[Path]:
    return sorted(MAPS_DIR.glob("*.cfg"))
