"""Deterministic 2D multi-robot world with differential-drive kinematics.

Conventions used throughout the package:
  - World frame: x east, y north, heading theta measured CCW from +x,
    wrapped to (-pi, pi].
  - Robot frame: x forward (along heading), y to the left.
  - First-order unicycle plant with instantaneous velocity tracking:
    the commanded (clamped) action is the realized velocity, so the
    costmap CBF's velocity projection stays meaningful.
  - Euler integration per step:  x += v*cos(theta)*dt, y += v*sin(theta)*dt,
    theta += w*dt.

All operations are pure functions of their inputs plus the embedded seed;
distinct episodes can run concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

STATUS_ACTIVE = "active"
STATUS_REACHED = "reached"
STATUS_COLLIDED = "collided"
STATUS_TIMEOUT = "timeout"

TERMINAL_STATUSES = (STATUS_REACHED, STATUS_COLLIDED, STATUS_TIMEOUT)


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Action:
    linear: float   # m/s
    angular: float  # rad/s

    def as_array(self) -> np.ndarray:
        return np.array([self.linear, self.angular], dtype=float)


@dataclass(frozen=True)
class ActionBounds:
    """Componentwise action box [a_min, a_max]."""
    linear_min: float = 0.0
    linear_max: float = 1.0
    angular_min: float = -1.0
    angular_max: float = 1.0

    def __post_init__(self):
        if not (self.linear_min < self.linear_max and self.angular_min < self.angular_max):
            raise ValueError("action bounds must satisfy a_min < a_max componentwise")

    @property
    def low(self) -> np.ndarray:
        return np.array([self.linear_min, self.angular_min], dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.array([self.linear_max, self.angular_max], dtype=float)

    def clamp(self, action: Action) -> Action:
        return Action(
            linear=min(max(action.linear, self.linear_min), self.linear_max),
            angular=min(max(action.angular, self.angular_min), self.angular_max),
        )

    def contains(self, action: Action, tol: float = 0.0) -> bool:
        return (self.linear_min - tol <= action.linear <= self.linear_max + tol
                and self.angular_min - tol <= action.angular <= self.angular_max + tol)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle obstacle."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float


Obstacle = Circle | Box


@dataclass(frozen=True)
class Rect:
    """Axis-aligned world bounds."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (self.xmin + margin <= x <= self.xmax - margin
                and self.ymin + margin <= y <= self.ymax - margin)


@dataclass
class RobotState:
    x: float
    y: float
    theta: float
    v_linear: float = 0.0
    v_angular: float = 0.0
    goal_x: float = 0.0
    goal_y: float = 0.0
    radius: float = 0.2
    status: str = STATUS_ACTIVE

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    @property
    def active(self) -> bool:
        return self.status == STATUS_ACTIVE

    def goal_distance(self) -> float:
        return math.hypot(self.goal_x - self.x, self.goal_y - self.y)

    def copy(self) -> "RobotState":
        return replace(self)


@dataclass(frozen=True)
class WorldParams:
    dt: float = 0.1                # s per simulation step
    bounds: ActionBounds = field(default_factory=ActionBounds)
    goal_tolerance: float = 0.2    # m
    time_cap_s: float = 40.0       # episode cap in simulated seconds
    lidar_beams: int = 360
    lidar_max_range: float = 4.0   # m
    lidar_angle_min: float = -math.pi
    lidar_angle_max: float = math.pi


@dataclass
class WorldState:
    robots: list[RobotState]
    obstacles: tuple[Obstacle, ...]
    arena: Rect
    params: WorldParams
    time: float = 0.0
    rng_seed: int = 0
    scenario_name: str = ""

    def copy(self) -> "WorldState":
        return WorldState(
            robots=[r.copy() for r in self.robots],
            obstacles=self.obstacles,
            arena=self.arena,
            params=self.params,
            time=self.time,
            rng_seed=self.rng_seed,
            scenario_name=self.scenario_name,
        )

    def all_terminal(self) -> bool:
        return all(not r.active for r in self.robots)


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray      # (beams,) meters, each in (0, max_range]
    angle_min: float
    angle_max: float
    max_range: float

    @property
    def angles(self) -> np.ndarray:
        return np.linspace(self.angle_min, self.angle_max, len(self.ranges))


def step_world(world: WorldState, actions: Sequence[Action], dt: float | None = None) -> WorldState:
    """Advance every active robot one Euler step under clamped actions.

    Terminal robots hold pose; statuses are re-evaluated after integration.
    """
    if dt is None:
        dt = world.params.dt
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if len(actions) != len(world.robots):
        raise ValueError(
            f"expected {len(world.robots)} actions (one per robot), got {len(actions)}")

    bounds = world.params.bounds
    nxt = world.copy()
    nxt.time = world.time + dt
    for robot, action in zip(nxt.robots, actions):
        if not robot.active:
            robot.v_linear = 0.0
            robot.v_angular = 0.0
            continue
        a = bounds.clamp(action)
        if not (math.isfinite(a.linear) and math.isfinite(a.angular)):
            raise ValueError(f"non-finite action {action}")
        robot.x += a.linear * math.cos(robot.theta) * dt
        robot.y += a.linear * math.sin(robot.theta) * dt
        robot.theta = wrap_angle(robot.theta + a.angular * dt)
        robot.x = min(max(robot.x, nxt.arena.xmin), nxt.arena.xmax)
        robot.y = min(max(robot.y, nxt.arena.ymin), nxt.arena.ymax)
        robot.v_linear = a.linear
        robot.v_angular = a.angular
    _update_statuses(nxt)
    return nxt


def check_status(world: WorldState) -> list[str]:
    """Evaluate per-robot status without mutating the world.

    Collision dominates arrival; arrival dominates timeout. Terminal
    statuses are absorbing.
    """
    probe = world.copy()
    _update_statuses(probe)
    return [r.status for r in probe.robots]


def _update_statuses(world: WorldState) -> None:
    params = world.params
    robots = world.robots
    collided = [False] * len(robots)
    for i, r in enumerate(robots):
        for obs in world.obstacles:
            if _disc_hits_obstacle(r.x, r.y, r.radius, obs):
                collided[i] = True
                break
    for i in range(len(robots)):
        for j in range(i + 1, len(robots)):
            ri, rj = robots[i], robots[j]
            if math.hypot(ri.x - rj.x, ri.y - rj.y) < ri.radius + rj.radius:
                collided[i] = True
                collided[j] = True
    # small slack so accumulated dt roundoff at exactly the cap is not a timeout
    timed_out = world.time > params.time_cap_s + 1e-9
    for i, r in enumerate(robots):
        if not r.active:
            continue
        if collided[i]:
            r.status = STATUS_COLLIDED
        elif r.goal_distance() <= params.goal_tolerance:
            r.status = STATUS_REACHED
        elif timed_out:
            r.status = STATUS_TIMEOUT


def _disc_hits_obstacle(x: float, y: float, radius: float, obs: Obstacle) -> bool:
    if isinstance(obs, Circle):
        return math.hypot(x - obs.cx, y - obs.cy) < radius + obs.radius
    cx = min(max(x, obs.xmin), obs.xmax)
    cy = min(max(y, obs.ymin), obs.ymax)
    return math.hypot(x - cx, y - cy) < radius


def obstacle_clearance(x: float, y: float, obs: Obstacle) -> float:
    """Distance from a point to the obstacle surface (negative inside)."""
    if isinstance(obs, Circle):
        return math.hypot(x - obs.cx, y - obs.cy) - obs.radius
    cx = min(max(x, obs.xmin), obs.xmax)
    cy = min(max(y, obs.ymin), obs.ymax)
    d = math.hypot(x - cx, y - cy)
    if d > 0.0:
        return d
    # inside the box: negative distance to the closest edge
    return -min(x - obs.xmin, obs.xmax - x, y - obs.ymin, obs.ymax - y)


def raycast_lidar(world: WorldState, robot_index: int) -> LidarScan:
    """Cast uniformly spaced beams from a robot center in its own frame.

    Each beam returns the distance to the nearest obstacle boundary or
    other-robot disc, capped at max_range. Other robots appear purely as
    discs regardless of status; the casting robot's own disc is excluded.
    """
    robot = world.robots[robot_index]
    if not robot.active:
        raise ValueError(f"robot {robot_index} is not active (status={robot.status})")
    params = world.params
    n = params.lidar_beams
    angles = np.linspace(params.lidar_angle_min, params.lidar_angle_max, n) + robot.theta
    dx = np.cos(angles)
    dy = np.sin(angles)
    ranges = np.full(n, params.lidar_max_range, dtype=float)
    ox, oy = robot.x, robot.y
    for obs in world.obstacles:
        if isinstance(obs, Circle):
            t = _ray_circle(ox, oy, dx, dy, obs.cx, obs.cy, obs.radius)
        else:
            t = _ray_box(ox, oy, dx, dy, obs)
        np.minimum(ranges, t, out=ranges)
    for j, other in enumerate(world.robots):
        if j == robot_index:
            continue
        t = _ray_circle(ox, oy, dx, dy, other.x, other.y, other.radius)
        np.minimum(ranges, t, out=ranges)
    np.clip(ranges, 1e-9, params.lidar_max_range, out=ranges)
    return LidarScan(
        ranges=ranges,
        angle_min=params.lidar_angle_min,
        angle_max=params.lidar_angle_max,
        max_range=params.lidar_max_range,
    )


def _ray_circle(ox, oy, dx, dy, cx, cy, radius) -> np.ndarray:
    """Smallest positive ray parameter hitting the circle, inf on miss."""
    mx = cx - ox
    my = cy - oy
    b = dx * mx + dy * my
    disc = b * b - (mx * mx + my * my - radius * radius)
    t = np.full_like(b, np.inf)
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = b - sq
    t_far = b + sq
    # entering hit in front of the origin, else exit (origin inside circle)
    t = np.where(hit & (t_near > 0.0), t_near, t)
    t = np.where(hit & (t_near <= 0.0) & (t_far > 0.0), t_far, t)
    return t


def _ray_box(ox, oy, dx, dy, box: Box) -> np.ndarray:
    """Slab-method ray/AABB intersection, inf on miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_x = 1.0 / dx
        inv_y = 1.0 / dy
        tx1 = (box.xmin - ox) * inv_x
        tx2 = (box.xmax - ox) * inv_x
        ty1 = (box.ymin - oy) * inv_y
        ty2 = (box.ymax - oy) * inv_y
    txmin = np.minimum(tx1, tx2)
    txmax = np.maximum(tx1, tx2)
    tymin = np.minimum(ty1, ty2)
    tymax = np.maximum(ty1, ty2)
    # beams parallel to an axis get +/-inf slabs, which the min/max handle
    txmin = np.where(np.isnan(txmin), -np.inf, txmin)
    txmax = np.where(np.isnan(txmax), np.inf, txmax)
    tymin = np.where(np.isnan(tymin), -np.inf, tymin)
    tymax = np.where(np.isnan(tymax), np.inf, tymax)
    t_enter = np.maximum(txmin, tymin)
    t_exit = np.minimum(txmax, tymax)
    hit = (t_enter <= t_exit) & (t_exit > 0.0)
    t = np.where(hit & (t_enter > 0.0), t_enter, np.inf)
    t = np.where(hit & (t_enter <= 0.0), t_exit, t)
    return t


def relative_pose(prev_pose: tuple[float, float, float],
                  new_pose: tuple[float, float, float]) -> tuple[float, float, float]:
    """Express new_pose in the frame of prev_pose (SE(2) relative motion)."""
    px, py, pt = prev_pose
    nx, ny, nt = new_pose
    wx = nx - px
    wy = ny - py
    c = math.cos(-pt)
    s = math.sin(-pt)
    return (c * wx - s * wy, s * wx + c * wy, wrap_angle(nt - pt))
