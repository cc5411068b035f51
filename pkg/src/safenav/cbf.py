"""Pixel-wise costmap control barrier field and constraint evaluation.

Per occupied cell at robot-frame displacement d with range r = |d|:

    h = r - v_proj * delta_t - r_min        (occupied, r <= r_max)
    h = r_max                               (otherwise)

where v_proj is the robot's translational velocity projected on the cell
direction; here the translational velocity vector is (linear, 0) in the
robot frame, so v_proj = linear * x / r. Angular motion affects safety
through the predicted map's warp, not through v_proj, so each effect is
represented exactly once. h < 0 marks cells the robot would reach within
delta_t at its current speed, h >= 0 marks safe cells.

Constraint convention: every constraint value is clipped with min{., 0},
so entries are <= 0 and zero means satisfied. The derivative condition
compares the current field against a predicted field that has already
been inverse-aligned, so cells correspond to the same physical obstacles.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .observation import Costmap, GridSpec
from .world import Action, ActionBounds


@dataclass(frozen=True)
class CbfParams:
    r_min: float = 0.4     # minimum safe distance, m
    r_max: float = 2.0     # maximum considered distance, m
    delta_t: float = 0.5   # look-ahead horizon, s
    alpha: float = 0.4     # linear class-K gain on h
    epsilon: float = 0.01  # constraint relaxation ensuring solvability

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.delta_t <= 0.0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")


@dataclass(frozen=True)
class CbfField:
    h: np.ndarray          # (H, W) barrier values, meters
    occupied: np.ndarray   # (H, W) bool, cells contributing to safety
    spec: GridSpec
    r_max: float

    def min_h(self) -> float:
        """Smallest barrier value over contributing cells (r_max if none)."""
        if self.occupied.any():
            return float(self.h[self.occupied].min())
        return float(self.r_max)


@dataclass(frozen=True)
class ConstraintEval:
    """Constraint values at one action; every entry <= 0, 0 = satisfied."""
    c_cbf: np.ndarray      # (H, W) min{dh + alpha*h + eps, 0}
    c_dyn_up: np.ndarray   # (2,)   min{a_max - a, 0}
    c_dyn_low: np.ndarray  # (2,)   min{a - a_min, 0}
    gamma: float = 1.0

    def max_violation(self) -> float:
        worst = 0.0
        if self.c_cbf.size:
            worst = min(worst, float(self.c_cbf.min()))
        if self.c_dyn_up.size:
            worst = min(worst, float(self.c_dyn_up.min()))
        if self.c_dyn_low.size:
            worst = min(worst, float(self.c_dyn_low.min()))
        return -worst


def h_from_occupancy(occupied, v_linear: float, spec: GridSpec,
                     params: CbfParams) -> np.ndarray:
    """Barrier values from an occupancy mask; broadcasts over leading axes.

    Cells beyond r_max are treated as unoccupied (h = r_max) so distant
    obstacles never enter the constraints.
    """
    r = spec.radius_grid
    v_proj = np.asarray(v_linear)[..., None, None] * spec.forward_over_radius
    eligible = np.asarray(occupied, dtype=bool) & (r <= params.r_max)
    h_occ = r - v_proj * params.delta_t - params.r_min
    return np.where(eligible, h_occ, params.r_max)


def evaluate_h(costmap: Costmap, velocity: tuple[float, float],
               params: CbfParams) -> CbfField:
    """Evaluate the barrier field on a costmap at the given velocity."""
    occ = costmap.grid.astype(bool)
    eligible = occ & (costmap.spec.radius_grid <= params.r_max)
    h = h_from_occupancy(occ, float(velocity[0]), costmap.spec, params)
    return CbfField(h=h, occupied=eligible, spec=costmap.spec, r_max=params.r_max)


def cbf_violation(h_current, h_predicted_aligned, params: CbfParams) -> np.ndarray:
    """min{dh + alpha*h + eps, 0} per cell; broadcasts over leading axes."""
    dh = h_predicted_aligned - h_current
    return np.minimum(dh + params.alpha * h_current + params.epsilon, 0.0)


def derivative_condition(current: CbfField, predicted_aligned: CbfField,
                         params: CbfParams, gamma: float = 1.0) -> ConstraintEval:
    """CBF derivative constraints from a current and an aligned predicted field.

    The predicted field must already be expressed in the current robot
    frame (inverse alignment applied), so per-cell differences compare the
    same physical obstacles. Cells unoccupied in both fields hold h = r_max
    in both and contribute exactly zero.
    """
    if current.h.shape != predicted_aligned.h.shape:
        raise ValueError(
            f"field shape mismatch: {current.h.shape} vs {predicted_aligned.h.shape}")
    c = cbf_violation(current.h, predicted_aligned.h, params)
    return ConstraintEval(
        c_cbf=c,
        c_dyn_up=np.zeros(2),
        c_dyn_low=np.zeros(2),
        gamma=gamma,
    )


def dynamic_constraints(action: Action, bounds: ActionBounds,
                        gamma: float = 1.0) -> ConstraintEval:
    """Action-box constraints; boundary values count as satisfied."""
    a = action.as_array()
    c_up = np.minimum(bounds.high - a, 0.0)
    c_low = np.minimum(a - bounds.low, 0.0)
    return ConstraintEval(
        c_cbf=np.zeros((0, 0)),
        c_dyn_up=c_up,
        c_dyn_low=c_low,
        gamma=gamma,
    )


def combine(cbf_part: ConstraintEval, dyn_part: ConstraintEval) -> ConstraintEval:
    return ConstraintEval(
        c_cbf=cbf_part.c_cbf,
        c_dyn_up=dyn_part.c_dyn_up,
        c_dyn_low=dyn_part.c_dyn_low,
        gamma=dyn_part.gamma,
    )


def field_to_pgm(field: CbfField, path: str | Path) -> None:
    """Debug dump of a barrier field; brighter cells are more dangerous.

    Values are normalized from [min h, r_max] to [255, 0], i.e. brightness
    is inverted relative to h.
    """
    h_min = float(field.h.min())
    span = field.r_max - h_min
    if span <= 0.0:
        img = np.zeros_like(field.h)
    else:
        img = (field.r_max - field.h) / span
    img_u8 = np.flipud(np.clip(img * 255.0, 0.0, 255.0).astype(np.uint8))
    header = f"P5\n{field.spec.width} {field.spec.height}\n255\n".encode()
    Path(path).write_bytes(header + img_u8.tobytes())
