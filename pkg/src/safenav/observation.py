"""Egocentric costmaps, frame alignment, and observation assembly.

Grid convention (used by every module):
  - grids are robot-centered with the robot heading aligned to grid "up";
  - grid axes are x-right / y-up: column j grows to the robot's right,
    row i grows toward the robot's front;
  - robot-frame coordinates (x forward, y left) map to grid coordinates
    as  u(right) = -y,  v(up) = x;
  - cell (i, j) is centered at u = (j - W//2)*cs, v = (i - H//2)*cs, so
    the robot sits exactly at the center of cell (H//2, W//2) and points
    bin to the nearest cell center.

Costmaps are binary endpoint maps: each lidar return strictly below
max_range marks the cell containing the hit point; there is no ray-traced
free-space carving. Affine warps between robot frames use bilinear
sampling followed by re-binarization at threshold 0.5, which is exact for
translations by integer cell multiples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .world import LidarScan, RobotState, wrap_angle

BINARIZE_THRESHOLD = 0.5


@dataclass(frozen=True)
class GridSpec:
    height: int = 48
    width: int = 48
    cell_size: float = 0.1  # m per cell

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Robot-frame (x, y) coordinates of every cell center, shape (H, W)."""
        rows = np.arange(self.height, dtype=float)
        cols = np.arange(self.width, dtype=float)
        v = (rows - self.height // 2) * self.cell_size
        u = (cols - self.width // 2) * self.cell_size
        uu, vv = np.meshgrid(u, v)
        return vv.copy(), -uu  # x = v (up), y = -u (right is -y)

    @cached_property
    def radius_grid(self) -> np.ndarray:
        x, y = self.cell_centers
        return np.hypot(x, y)

    @cached_property
    def forward_over_radius(self) -> np.ndarray:
        """x / r per cell; the projection factor of a forward velocity.

        The degenerate center cell takes the head-on limit 1.0, the
        conservative (most dangerous) projection.
        """
        x, _ = self.cell_centers
        r = self.radius_grid
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0.0, x / np.where(r > 0.0, r, 1.0), 1.0)
        return out

    def empty_grid(self) -> np.ndarray:
        return np.zeros((self.height, self.width), dtype=np.uint8)

    def point_to_index(self, x, y):
        """Nearest-cell indices of robot-frame points; may fall off the grid."""
        u = -np.asarray(y, dtype=float)
        v = np.asarray(x, dtype=float)
        j = np.rint(u / self.cell_size).astype(int) + self.width // 2
        i = np.rint(v / self.cell_size).astype(int) + self.height // 2
        return i, j

    def fractional_index(self, x, y):
        """Continuous (row, col) sampling coordinates of robot-frame points."""
        u = -np.asarray(y, dtype=float)
        v = np.asarray(x, dtype=float)
        fc = u / self.cell_size + self.width // 2
        fr = v / self.cell_size + self.height // 2
        return fr, fc


DEFAULT_GRID = GridSpec()
DEFAULT_FRAME_COUNT = 3


@dataclass(frozen=True)
class EgoMotion:
    """Displacement of the robot frame between two ticks.

    (dx, dy) is the new origin expressed in the old frame; dtheta is the
    heading change. Composition follows SE(2).
    """
    dx: float
    dy: float
    dtheta: float

    def compose(self, later: "EgoMotion") -> "EgoMotion":
        c = math.cos(self.dtheta)
        s = math.sin(self.dtheta)
        return EgoMotion(
            dx=self.dx + c * later.dx - s * later.dy,
            dy=self.dy + s * later.dx + c * later.dy,
            dtheta=wrap_angle(self.dtheta + later.dtheta),
        )

    @staticmethod
    def identity() -> "EgoMotion":
        return EgoMotion(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Costmap:
    grid: np.ndarray  # (H, W) uint8, 1 = obstacle
    spec: GridSpec

    def occupied_count(self) -> int:
        return int(self.grid.sum())


@dataclass(frozen=True)
class Observation:
    """A robot's local view: aligned frame stack, relative goal, velocity."""
    frames: tuple[Costmap, ...]          # oldest first, newest last
    goal_rel: tuple[float, float]        # robot frame, meters
    velocity: tuple[float, float]        # (linear m/s, angular rad/s)

    @property
    def newest(self) -> Costmap:
        return self.frames[-1]

    @property
    def spec(self) -> GridSpec:
        return self.frames[-1].spec


def scan_to_costmap(scan: LidarScan, spec: GridSpec = DEFAULT_GRID) -> Costmap:
    """Bin lidar returns into a binary endpoint map.

    Returns exactly at max_range are misses and mark nothing.
    """
    ranges = scan.ranges
    angles = scan.angles
    hit = ranges < scan.max_range
    grid = spec.empty_grid()
    if hit.any():
        r = ranges[hit]
        a = angles[hit]
        x = r * np.cos(a)
        y = r * np.sin(a)
        i, j = spec.point_to_index(x, y)
        ok = (i >= 0) & (i < spec.height) & (j >= 0) & (j < spec.width)
        grid[i[ok], j[ok]] = 1
    return Costmap(grid=grid, spec=spec)


def bilinear_sample(src: np.ndarray, fr: np.ndarray, fc: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Bilinear interpolation with constant fill outside the source grid.

    fr/fc may have any shape (the refiner batches them over actions).
    """
    h, w = src.shape
    r0 = np.floor(fr).astype(int)
    c0 = np.floor(fc).astype(int)
    wr = fr - r0
    wc = fc - c0
    out = np.zeros(fr.shape, dtype=float)
    for dr, dc, weight in (
        (0, 0, (1.0 - wr) * (1.0 - wc)),
        (0, 1, (1.0 - wr) * wc),
        (1, 0, wr * (1.0 - wc)),
        (1, 1, wr * wc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = src[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        out += weight * np.where(valid, vals, fill)
    return out


def warp_source_coords(spec: GridSpec, motion: EgoMotion, mode: str):
    """Source-frame robot coordinates sampled by each output cell.

    forward: re-express an old-frame grid in the frame displaced by motion
             (a physical point at new-frame q has old-frame coords
             d + R(dtheta) q).
    inverse: re-express a new-frame grid back in the old frame.
    """
    x, y = spec.cell_centers
    c = math.cos(motion.dtheta)
    s = math.sin(motion.dtheta)
    if mode == "forward":
        sx = motion.dx + c * x - s * y
        sy = motion.dy + s * x + c * y
    elif mode == "inverse":
        rx = x - motion.dx
        ry = y - motion.dy
        sx = c * rx + s * ry
        sy = -s * rx + c * ry
    else:
        raise ValueError(f"mode must be 'forward' or 'inverse', got {mode!r}")
    return sx, sy


def warp_field(field: np.ndarray, spec: GridSpec, motion: EgoMotion, mode: str,
               fill: float = 0.0) -> np.ndarray:
    """Warp a scalar per-cell field between robot frames (no binarization)."""
    sx, sy = warp_source_coords(spec, motion, mode)
    fr, fc = spec.fractional_index(sx, sy)
    return bilinear_sample(np.asarray(field, dtype=float), fr, fc, fill=fill)


def affine_transform(costmap: Costmap, motion: EgoMotion, mode: str) -> Costmap:
    """Re-express a binary costmap in a displaced robot frame.

    Bilinear sampling then re-binarization at 0.5; cells sampling outside
    the source grid become 0. inverse(forward(m, g), g) restores m up to
    boundary and interpolation loss.
    """
    warped = warp_field(costmap.grid, costmap.spec, motion, mode, fill=0.0)
    grid = (warped >= BINARIZE_THRESHOLD).astype(np.uint8)
    return Costmap(grid=grid, spec=costmap.spec)


def goal_in_robot_frame(robot: RobotState) -> tuple[float, float]:
    wx = robot.goal_x - robot.x
    wy = robot.goal_y - robot.y
    c = math.cos(-robot.theta)
    s = math.sin(-robot.theta)
    return (c * wx - s * wy, s * wx + c * wy)


def align_frames(costmaps: Sequence[Costmap], motions: Sequence[EgoMotion],
                 frame_count: int) -> tuple[Costmap, ...]:
    """Warp older frames into the newest frame and pad to frame_count.

    motions[t] carries frame t's pose relative to frame t-1, so
    len(motions) == len(costmaps) - 1. Each older frame is warped once,
    by the composition of the motions separating it from the newest frame.
    When fewer than frame_count frames exist, the oldest aligned frame
    repeats.
    """
    if len(motions) != len(costmaps) - 1:
        raise ValueError(
            f"history mismatch: {len(costmaps)} costmaps need "
            f"{len(costmaps) - 1} ego-motions, got {len(motions)}")
    if not costmaps:
        raise ValueError("history must contain at least one scan")
    costmaps = list(costmaps[-frame_count:])
    motions = list(motions[len(motions) - (len(costmaps) - 1):])
    aligned: list[Costmap] = [costmaps[-1]]
    to_current = EgoMotion.identity()
    for idx in range(len(costmaps) - 2, -1, -1):
        to_current = motions[idx].compose(to_current)
        aligned.append(affine_transform(costmaps[idx], to_current, "forward"))
    aligned.reverse()  # oldest first
    while len(aligned) < frame_count:
        aligned.insert(0, aligned[0])
    return tuple(aligned)


def build_observation(scans: Sequence[LidarScan], motions: Sequence[EgoMotion],
                      robot: RobotState,
                      spec: GridSpec = DEFAULT_GRID,
                      frame_count: int = DEFAULT_FRAME_COUNT) -> Observation:
    """Assemble the observation from raw scan history plus ego-motions."""
    costmaps = [scan_to_costmap(s, spec) for s in scans]
    frames = align_frames(costmaps, motions, frame_count)
    return Observation(
        frames=frames,
        goal_rel=goal_in_robot_frame(robot),
        velocity=(robot.v_linear, robot.v_angular),
    )


class ObservationBuilder:
    """Per-robot rolling history of costmaps and ego-motions.

    Caches the scan-to-costmap conversion so each scan is binned once; the
    alignment itself is recomputed per tick from the raw frames (older
    frames are warped once from their original frame, never re-warped).
    """

    def __init__(self, spec: GridSpec = DEFAULT_GRID,
                 frame_count: int = DEFAULT_FRAME_COUNT):
        self.spec = spec
        self.frame_count = frame_count
        self._costmaps: list[Costmap] = []
        self._motions: list[EgoMotion] = []

    def push(self, scan: LidarScan, motion: EgoMotion | None) -> None:
        """Append a tick. motion is None only for the first tick."""
        if motion is None:
            if self._costmaps:
                raise ValueError("motion may be omitted only on the first tick")
        else:
            self._motions.append(motion)
        self._costmaps.append(scan_to_costmap(scan, self.spec))
        if len(self._costmaps) > self.frame_count:
            self._costmaps.pop(0)
            self._motions.pop(0)

    def observe(self, robot: RobotState) -> Observation:
        frames = align_frames(self._costmaps, self._motions, self.frame_count)
        return Observation(
            frames=frames,
            goal_rel=goal_in_robot_frame(robot),
            velocity=(robot.v_linear, robot.v_angular),
        )


def costmap_to_pgm(costmap: Costmap, path: str | Path) -> None:
    """Dump a costmap as binary PGM (0 free, 255 occupied), top row = front."""
    grid = np.flipud(costmap.grid)  # row 0 of the image is the robot's front
    data = (grid.astype(np.uint8) * 255).tobytes()
    header = f"P5\n{costmap.spec.width} {costmap.spec.height}\n255\n".encode()
    Path(path).write_bytes(header + data)


def pgm_to_grid(path: str | Path) -> np.ndarray:
    """Read back a PGM written by costmap_to_pgm (for tests and tooling)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)
    return np.flipud((img >= 128).astype(np.uint8))
