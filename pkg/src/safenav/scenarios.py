"""Scenario configs, the built-in scenario families, and world construction.

Config file schema (JSON, unknown keys rejected):

    {
      "scenario_name": "sparse_4",
      "bounds": [xmin, ymin, xmax, ymax],
      "robots": [{"start": [x, y, theta] or "random",
                  "goal":  [x, y] or "random"}, ...],
      "obstacles": [{"shape": "circle", "center": [x, y], "size": radius},
                    {"shape": "rect",   "center": [x, y], "size": [w, h]}],
      "seed": 7,
      "time_cap_steps": 400
    }

The built-in families mirror the three evaluation scenarios: sparse_4
(4 robots, 4 sparse obstacles), dense_4 (4 robots, 10 obstacles) and
empty_8 (8 robots on an antipodal circle, no obstacles). Family builders
produce fully explicit configs from a seed, so every scenario a run sees
can be serialized and replayed exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .world import (
    Box,
    Circle,
    Obstacle,
    Rect,
    RobotState,
    WorldParams,
    WorldState,
    obstacle_clearance,
    wrap_angle,
)

DEFAULT_ROBOT_RADIUS = 0.2

# spawn-sampling margins (meters); generous so the refiner is never asked
# to start inside its own safety radius
START_OBSTACLE_CLEARANCE = 0.6
GOAL_OBSTACLE_CLEARANCE = 0.7
START_SEPARATION = 1.2
GOAL_SEPARATION = 0.8
MIN_TRAVEL = 1.5
MAX_SAMPLE_ATTEMPTS = 5000


class ScenarioError(ValueError):
    """Raised when a scenario config fails validation."""


@dataclass(frozen=True)
class RobotSpec:
    start: tuple[float, float, float] | None = None  # None means random
    goal: tuple[float, float] | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_name: str
    bounds: Rect
    robots: tuple[RobotSpec, ...]
    obstacles: tuple[Obstacle, ...]
    seed: int
    time_cap_steps: int

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))


def build_scenario(name: str, seed: int) -> ScenarioConfig:
    """Build a fully explicit config for one of the built-in families."""
    try:
        builder = _FAMILIES[name]
    except KeyError:
        raise ScenarioError(
            f"unknown scenario family {name!r}; known: {sorted(_FAMILIES)}") from None
    return builder(int(seed))


def scenario_names() -> list[str]:
    return sorted(_FAMILIES)


def _sparse_4(seed: int) -> ScenarioConfig:
    bounds = Rect(-5.0, -5.0, 5.0, 5.0)
    obstacles = _sample_obstacles(
        seed, bounds, count=4, circle_radius=(0.3, 0.5), box_side=(0.5, 1.0),
        separation=1.4)
    return ScenarioConfig(
        scenario_name="sparse_4",
        bounds=bounds,
        robots=tuple(RobotSpec() for _ in range(4)),
        obstacles=obstacles,
        seed=seed,
        time_cap_steps=400,
    )


def _dense_4(seed: int) -> ScenarioConfig:
    bounds = Rect(-5.0, -5.0, 5.0, 5.0)
    obstacles = _sample_obstacles(
        seed, bounds, count=10, circle_radius=(0.25, 0.4), box_side=(0.4, 0.8),
        separation=1.2)
    return ScenarioConfig(
        scenario_name="dense_4",
        bounds=bounds,
        robots=tuple(RobotSpec() for _ in range(4)),
        obstacles=obstacles,
        seed=seed,
        time_cap_steps=400,
    )


def _empty_8(seed: int) -> ScenarioConfig:
    bounds = Rect(-10.0, -10.0, 10.0, 10.0)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xE8])
    offset = float(rng.uniform(0.0, 2.0 * math.pi))
    circle_r = 7.0
    robots = []
    for k in range(8):
        ang = offset + 2.0 * math.pi * k / 8.0
        sx = circle_r * math.cos(ang)
        sy = circle_r * math.sin(ang)
        heading = wrap_angle(ang + math.pi)  # face the center
        robots.append(RobotSpec(start=(sx, sy, heading), goal=(-sx, -sy)))
    return ScenarioConfig(
        scenario_name="empty_8",
        bounds=bounds,
        robots=tuple(robots),
        obstacles=(),
        seed=seed,
        time_cap_steps=1200,
    )


_FAMILIES = {
    "sparse_4": _sparse_4,
    "dense_4": _dense_4,
    "empty_8": _empty_8,
}


def _sample_obstacles(seed, bounds, count, circle_radius, box_side, separation):
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x0B])
    margin = 1.0  # keep obstacles off the arena edges
    placed: list[Obstacle] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > MAX_SAMPLE_ATTEMPTS:
            raise ScenarioError(
                f"could not place {count} obstacles with separation {separation}")
        cx = float(rng.uniform(bounds.xmin + margin, bounds.xmax - margin))
        cy = float(rng.uniform(bounds.ymin + margin, bounds.ymax - margin))
        if rng.random() < 0.5:
            cand: Obstacle = Circle(cx, cy, float(rng.uniform(*circle_radius)))
        else:
            w = float(rng.uniform(*box_side))
            h = float(rng.uniform(*box_side))
            cand = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        if all(_surface_gap(cand, other) >= separation for other in placed):
            placed.append(cand)
    return tuple(placed)


def _surface_gap(a: Obstacle, b: Obstacle) -> float:
    """Approximate surface-to-surface gap between two obstacles."""
    ax, ay, ar = _bounding_circle(a)
    bx, by, br = _bounding_circle(b)
    return math.hypot(ax - bx, ay - by) - ar - br


def _bounding_circle(obs: Obstacle) -> tuple[float, float, float]:
    if isinstance(obs, Circle):
        return (obs.cx, obs.cy, obs.radius)
    cx = (obs.xmin + obs.xmax) / 2
    cy = (obs.ymin + obs.ymax) / 2
    return (cx, cy, math.hypot(obs.xmax - cx, obs.ymax - cy))


def load_scenario(config: ScenarioConfig,
                  params: WorldParams | None = None,
                  robot_radius: float = DEFAULT_ROBOT_RADIUS) -> WorldState:
    """Validate a config and construct the initial WorldState.

    Deterministic for a fixed config (the embedded seed drives every
    random start/goal draw).
    """
    _validate(config, robot_radius)
    if params is None:
        params = WorldParams()
    params = replace(params, time_cap_s=config.time_cap_steps * params.dt)

    rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 0x5A])
    starts: list[tuple[float, float, float]] = []
    for i, spec in enumerate(config.robots):
        if spec.start is not None:
            starts.append(spec.start)
        else:
            starts.append(_sample_start(rng, config, starts, robot_radius, i))
    goals: list[tuple[float, float]] = []
    for i, spec in enumerate(config.robots):
        if spec.goal is not None:
            goals.append(spec.goal)
        else:
            goals.append(_sample_goal(rng, config, starts[i], goals, i))

    robots = [
        RobotState(
            x=s[0], y=s[1], theta=wrap_angle(s[2]),
            goal_x=g[0], goal_y=g[1],
            radius=robot_radius,
        )
        for s, g in zip(starts, goals)
    ]
    return WorldState(
        robots=robots,
        obstacles=config.obstacles,
        arena=config.bounds,
        params=params,
        time=0.0,
        rng_seed=config.seed,
        scenario_name=config.scenario_name,
    )


def _sample_start(rng, config, placed, radius, index):
    b = config.bounds
    margin = radius + 0.05
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        x = float(rng.uniform(b.xmin + margin, b.xmax - margin))
        y = float(rng.uniform(b.ymin + margin, b.ymax - margin))
        theta = float(rng.uniform(-math.pi, math.pi))
        if any(obstacle_clearance(x, y, o) < START_OBSTACLE_CLEARANCE
               for o in config.obstacles):
            continue
        if any(math.hypot(x - px, y - py) < START_SEPARATION for px, py, _ in placed):
            continue
        return (x, y, theta)
    raise ScenarioError(
        f"could not sample a start for robot {index} in {config.scenario_name!r} "
        f"(seed {config.seed})")


def _sample_goal(rng, config, start, placed_goals, index):
    b = config.bounds
    margin = 0.3
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        x = float(rng.uniform(b.xmin + margin, b.xmax - margin))
        y = float(rng.uniform(b.ymin + margin, b.ymax - margin))
        if any(obstacle_clearance(x, y, o) < GOAL_OBSTACLE_CLEARANCE
               for o in config.obstacles):
            continue
        if any(math.hypot(x - gx, y - gy) < GOAL_SEPARATION for gx, gy in placed_goals):
            continue
        if math.hypot(x - start[0], y - start[1]) < MIN_TRAVEL:
            continue
        return (x, y)
    raise ScenarioError(
        f"could not sample a goal for robot {index} in {config.scenario_name!r} "
        f"(seed {config.seed})")


def _validate(config: ScenarioConfig, robot_radius: float) -> None:
    if len(config.robots) < 1:
        raise ScenarioError("scenario must define at least one robot")
    if config.time_cap_steps < 1:
        raise ScenarioError(f"time_cap_steps must be >= 1, got {config.time_cap_steps}")
    b = config.bounds
    if not (b.xmin < b.xmax and b.ymin < b.ymax):
        raise ScenarioError(f"degenerate bounds {b}")
    fixed_starts = [(i, s.start) for i, s in enumerate(config.robots) if s.start is not None]
    for i, (ix, s) in enumerate(fixed_starts):
        if not b.contains(s[0], s[1], margin=robot_radius):
            raise ScenarioError(f"robot {ix} start {s[:2]} outside bounds")
        for o in config.obstacles:
            if obstacle_clearance(s[0], s[1], o) < robot_radius:
                raise ScenarioError(
                    f"robot {ix} start {s[:2]} overlaps an obstacle")
        for jx, other in fixed_starts[i + 1:]:
            if math.hypot(s[0] - other[0], s[1] - other[1]) < 2 * robot_radius:
                raise ScenarioError(
                    f"robots {ix} and {jx} have overlapping starts")
    for i, spec in enumerate(config.robots):
        if spec.goal is None:
            continue
        gx, gy = spec.goal
        if not b.contains(gx, gy):
            raise ScenarioError(f"robot {i} goal {spec.goal} outside bounds")
        for o in config.obstacles:
            if obstacle_clearance(gx, gy, o) < robot_radius:
                raise ScenarioError(
                    f"robot {i} goal {spec.goal} is inside or too close to an obstacle "
                    f"(needs {robot_radius} m clearance)")


# ---------------------------------------------------------------------------
# config file round-tripping

_TOP_KEYS = {"scenario_name", "bounds", "robots", "obstacles", "seed", "time_cap_steps"}
_ROBOT_KEYS = {"start", "goal"}
_OBSTACLE_KEYS = {"shape", "center", "size"}


def config_to_dict(config: ScenarioConfig) -> dict:
    robots = []
    for spec in config.robots:
        robots.append({
            "start": "random" if spec.start is None else list(spec.start),
            "goal": "random" if spec.goal is None else list(spec.goal),
        })
    obstacles = []
    for o in config.obstacles:
        if isinstance(o, Circle):
            obstacles.append({"shape": "circle", "center": [o.cx, o.cy], "size": o.radius})
        else:
            obstacles.append({
                "shape": "rect",
                "center": [(o.xmin + o.xmax) / 2, (o.ymin + o.ymax) / 2],
                "size": [o.xmax - o.xmin, o.ymax - o.ymin],
            })
    return {
        "scenario_name": config.scenario_name,
        "bounds": [config.bounds.xmin, config.bounds.ymin,
                   config.bounds.xmax, config.bounds.ymax],
        "robots": robots,
        "obstacles": obstacles,
        "seed": config.seed,
        "time_cap_steps": config.time_cap_steps,
    }


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario config must be an object, got {type(data).__name__}")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario config keys: {sorted(unknown)}")
    missing = _TOP_KEYS - set(data)
    if missing:
        raise ScenarioError(f"missing scenario config keys: {sorted(missing)}")
    bounds = data["bounds"]
    if not (isinstance(bounds, (list, tuple)) and len(bounds) == 4):
        raise ScenarioError(f"bounds must be [xmin, ymin, xmax, ymax], got {bounds!r}")
    robots = []
    for i, r in enumerate(data["robots"]):
        unknown = set(r) - _ROBOT_KEYS
        if unknown:
            raise ScenarioError(f"robot {i}: unknown keys {sorted(unknown)}")
        start = r.get("start", "random")
        goal = r.get("goal", "random")
        if start == "random":
            start_t = None
        elif isinstance(start, (list, tuple)) and len(start) == 3:
            start_t = (float(start[0]), float(start[1]), float(start[2]))
        else:
            raise ScenarioError(f"robot {i}: start must be [x, y, theta] or 'random'")
        if goal == "random":
            goal_t = None
        elif isinstance(goal, (list, tuple)) and len(goal) == 2:
            goal_t = (float(goal[0]), float(goal[1]))
        else:
            raise ScenarioError(f"robot {i}: goal must be [x, y] or 'random'")
        robots.append(RobotSpec(start=start_t, goal=goal_t))
    obstacles: list[Obstacle] = []
    for i, o in enumerate(data["obstacles"]):
        unknown = set(o) - _OBSTACLE_KEYS
        if unknown:
            raise ScenarioError(f"obstacle {i}: unknown keys {sorted(unknown)}")
        shape = o.get("shape")
        center = o.get("center")
        size = o.get("size")
        if not (isinstance(center, (list, tuple)) and len(center) == 2):
            raise ScenarioError(f"obstacle {i}: center must be [x, y]")
        cx, cy = float(center[0]), float(center[1])
        if shape == "circle":
            obstacles.append(Circle(cx, cy, float(size)))
        elif shape == "rect":
            if not (isinstance(size, (list, tuple)) and len(size) == 2):
                raise ScenarioError(f"obstacle {i}: rect size must be [w, h]")
            w, h = float(size[0]), float(size[1])
            obstacles.append(Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        else:
            raise ScenarioError(f"obstacle {i}: shape must be 'circle' or 'rect'")
    return ScenarioConfig(
        scenario_name=str(data["scenario_name"]),
        bounds=Rect(*(float(v) for v in bounds)),
        robots=tuple(robots),
        obstacles=tuple(obstacles),
        seed=int(data["seed"]),
        time_cap_steps=int(data["time_cap_steps"]),
    )


def config_to_file(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def config_from_file(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario config {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
