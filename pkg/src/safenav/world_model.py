"""One-step look-ahead observation predictors M(s, a).

Two interchangeable predictors share the decomposition
    predicted map = ego_warp( content_map(observation), ego_motion(action) ):

  - StaticPredictor: quasi-static assumption; the content map is simply
    the newest frame, so prediction is a pure affine warp induced by the
    action. Used as the warm-start model early in training.
  - FlowPredictor: obstacle motion estimated from the aligned frame
    stack by per-blob centroid matching; occupied cells are advected by
    their blob's flow before the ego warp. Non-ego dynamics are assumed
    constant-velocity.

Only single-horizon predictions are exposed; the ego motion is integrated
with the same Euler sub-stepping the simulator uses, so a prediction's
ego_motion matches the realized displacement for the same action.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .observation import Costmap, EgoMotion, Observation, affine_transform
from .world import Action, ActionBounds, wrap_angle

DEFAULT_FLOW_CAP = 3.0  # cells/step; larger centroid jumps are not matched

_BLOB_STRUCTURE = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class TransitionPrediction:
    costmap: Costmap                 # predicted map, in the predicted robot frame
    velocity: tuple[float, float]    # predicted (linear, angular)
    ego_motion: EgoMotion            # displacement induced by the action


@dataclass(frozen=True)
class FlowModel:
    flow: np.ndarray     # (H, W, 2) per-cell (drow, dcol) displacement, cells/step
    confidence: float    # matched fraction of newest-frame blobs


def integrate_ego_motion(action: Action, bounds: ActionBounds,
                         delta_t: float, dt: float) -> EgoMotion:
    """Euler sub-stepped unicycle displacement of a clamped action."""
    a = bounds.clamp(action)
    steps = max(1, round(delta_t / dt))
    x = y = th = 0.0
    for _ in range(steps):
        x += a.linear * math.cos(th) * dt
        y += a.linear * math.sin(th) * dt
        th += a.angular * dt
    return EgoMotion(x, y, wrap_angle(th))


class StaticPredictor:
    """Quasi-static model: everything but the ego robot is frozen."""

    name = "static"

    def __init__(self, bounds: ActionBounds, dt: float):
        self.bounds = bounds
        self.dt = dt

    def content_map(self, obs: Observation, delta_t: float) -> Costmap:
        return obs.newest

    def cell_tracks(self, obs: Observation, delta_t: float):
        """Current and predicted robot-frame positions of each occupied cell.

        Returns (current (N, 2), predicted (N, 2)) in meters; the predicted
        positions carry the obstacle's own estimated motion over delta_t
        (identical to current under the quasi-static assumption). The ego
        motion is not applied here; the constraint evaluator handles it.
        """
        spec = obs.spec
        cells = np.argwhere(obs.newest.grid == 1)
        x, y = spec.cell_centers
        cur = np.column_stack([x[cells[:, 0], cells[:, 1]],
                               y[cells[:, 0], cells[:, 1]]])
        return cur, cur

    def predict(self, obs: Observation, action: Action,
                delta_t: float) -> TransitionPrediction:
        if len(obs.frames) < 1:
            raise ValueError("observation must contain at least one frame")
        clamped = self.bounds.clamp(action)
        ego = integrate_ego_motion(action, self.bounds, delta_t, self.dt)
        predicted = affine_transform(self.content_map(obs, delta_t), ego, "forward")
        return TransitionPrediction(
            costmap=predicted,
            velocity=(clamped.linear, clamped.angular),
            ego_motion=ego,
        )


class FlowPredictor(StaticPredictor):
    """Constant-velocity obstacle model on top of the quasi-static warp."""

    name = "flow"

    def __init__(self, bounds: ActionBounds, dt: float,
                 flow_cap: float = DEFAULT_FLOW_CAP):
        super().__init__(bounds, dt)
        self.flow_cap = flow_cap

    def content_map(self, obs: Observation, delta_t: float) -> Costmap:
        if len(obs.frames) < 2:
            raise ValueError("flow prediction needs at least 2 frames")
        model = estimate_flow(obs.frames, flow_cap=self.flow_cap)
        steps = delta_t / self.dt
        return advect(obs.newest, model.flow, steps)

    def cell_tracks(self, obs: Observation, delta_t: float):
        if len(obs.frames) < 2:
            raise ValueError("flow prediction needs at least 2 frames")
        spec = obs.spec
        cells = np.argwhere(obs.newest.grid == 1)
        x, y = spec.cell_centers
        cur = np.column_stack([x[cells[:, 0], cells[:, 1]],
                               y[cells[:, 0], cells[:, 1]]])
        model = estimate_flow(obs.frames, flow_cap=self.flow_cap)
        steps = delta_t / self.dt
        disp_cells = model.flow[cells[:, 0], cells[:, 1]] * steps  # (drow, dcol)
        # grid rows grow along +x (forward), columns along -y (rightward)
        disp_xy = np.column_stack([disp_cells[:, 0], -disp_cells[:, 1]])
        return cur, cur + disp_xy * spec.cell_size


def predict_static(obs: Observation, action: Action, delta_t: float,
                   bounds: ActionBounds, dt: float) -> TransitionPrediction:
    return StaticPredictor(bounds, dt).predict(obs, action, delta_t)


def predict_flow(obs: Observation, action: Action, delta_t: float,
                 bounds: ActionBounds, dt: float,
                 flow_cap: float = DEFAULT_FLOW_CAP) -> TransitionPrediction:
    return FlowPredictor(bounds, dt, flow_cap).predict(obs, action, delta_t)


def _blobs(grid: np.ndarray):
    """Connected components: list of (centroid (row, col), size, cell indices)."""
    labels, count = ndimage.label(grid, structure=_BLOB_STRUCTURE)
    out = []
    for lbl in range(1, count + 1):
        cells = np.argwhere(labels == lbl)
        out.append((cells.mean(axis=0), len(cells), cells))
    return out


def _greedy_match(cur, prev, cap: float) -> dict[int, int]:
    """Nearest-first greedy association within the flow cap.

    Distance ties break toward larger blobs so persistent structure wins.
    """
    candidates = []
    for ci, (cc, cs, _) in enumerate(cur):
        for pi, (pc, ps, _) in enumerate(prev):
            d = float(np.linalg.norm(cc - pc))
            if d <= cap:
                candidates.append((d, -min(cs, ps), ci, pi))
    candidates.sort()
    matches: dict[int, int] = {}
    used_prev: set[int] = set()
    for _, _, ci, pi in candidates:
        if ci in matches or pi in used_prev:
            continue
        matches[ci] = pi
        used_prev.add(pi)
    return matches


_FLOW_CONSISTENCY = 1.0  # max spread (cells/step) between chained displacements


def estimate_flow(frames: Sequence[Costmap],
                  flow_cap: float = DEFAULT_FLOW_CAP) -> FlowModel:
    """Per-blob displacement field from an aligned frame stack.

    Blobs in the newest frame are chained backward through every
    consecutive frame pair by greedy centroid matching; the per-step
    displacements along a chain are averaged. A blob only receives nonzero
    flow when it matches through the whole chain with mutually consistent
    displacements; arc wobble of static obstacles and blob merges
    otherwise produce spurious motion. Unmatched blobs get zero flow;
    confidence is the matched fraction of newest-frame blobs (1.0 when
    there are none).
    """
    if len(frames) < 2:
        raise ValueError("flow estimation needs at least 2 frames")
    spec = frames[-1].spec
    blob_sets = [_blobs(f.grid) for f in frames]
    newest = blob_sets[-1]
    flow = np.zeros((spec.height, spec.width, 2), dtype=float)
    if not newest:
        return FlowModel(flow=flow, confidence=1.0)

    pair_matches = [
        _greedy_match(blob_sets[t], blob_sets[t - 1], flow_cap)
        for t in range(1, len(blob_sets))
    ]
    matched = 0
    for ci, (_, _, cells) in enumerate(newest):
        displacements = []
        idx = ci
        full_chain = True
        for t in range(len(blob_sets) - 1, 0, -1):
            matches = pair_matches[t - 1]
            if idx not in matches:
                full_chain = False
                break
            prev_idx = matches[idx]
            displacements.append(blob_sets[t][idx][0] - blob_sets[t - 1][prev_idx][0])
            idx = prev_idx
        if not displacements or not full_chain:
            continue
        matched += 1
        steps = np.array(displacements)
        if len(steps) > 1:
            spread = np.abs(steps - steps.mean(axis=0)).max()
            if spread > _FLOW_CONSISTENCY:
                continue  # inconsistent evidence: fall back to zero flow
        step = steps.mean(axis=0)
        norm = float(np.linalg.norm(step))
        if norm > flow_cap:
            step = step * (flow_cap / norm)
        flow[cells[:, 0], cells[:, 1]] = step
    return FlowModel(flow=flow, confidence=matched / len(newest))


def advect(costmap: Costmap, flow: np.ndarray, steps: float) -> Costmap:
    """Shift occupied cells by their per-cell flow times steps (rounded)."""
    grid = costmap.grid
    occ = np.argwhere(grid == 1)
    if len(occ) == 0:
        return costmap
    disp = np.rint(flow[occ[:, 0], occ[:, 1]] * steps).astype(int)
    if not disp.any():
        return costmap
    target = occ + disp
    h, w = grid.shape
    ok = ((target[:, 0] >= 0) & (target[:, 0] < h)
          & (target[:, 1] >= 0) & (target[:, 1] < w))
    out = np.zeros_like(grid)
    out[target[ok, 0], target[ok, 1]] = 1
    return Costmap(grid=out, spec=costmap.spec)


def occupancy_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary grids; both-empty counts as 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def prediction_error(predictor: StaticPredictor,
                     transitions: Iterable[tuple[Observation, Action, Observation]],
                     delta_t: float | None = None) -> float:
    """Mean normalized symmetric difference between predicted and actual maps.

    Per transition the error is |predicted XOR actual| / |predicted OR
    actual| (= 1 - IoU), so perfect predictions score 0 and fully disjoint
    maps score 1. The horizon defaults to the predictor's simulation step,
    matching the one-step spacing of replay transitions.
    """
    if delta_t is None:
        delta_t = predictor.dt
    errors = []
    for obs, action, next_obs in transitions:
        pred = predictor.predict(obs, action, delta_t)
        errors.append(1.0 - occupancy_iou(pred.costmap.grid, next_obs.newest.grid))
    if not errors:
        raise ValueError("prediction_error needs a non-empty dataset")
    return float(np.mean(errors))
