"""Decentralized policies: a proportional goal-seeker and a trainable MLP.

The trainable policy is a two-layer perceptron over a compact feature
vector standing in for a convolutional encoder:

    [ 6x6 max-pooled newest costmap | 6x6 max-pooled (newest - oldest)
      frame difference | goal distance, goal bearing | linear, angular ]

All features live in [-1, 1]. Outputs are squashed into the action box,
so dynamic constraints at nominal actions from a trained policy are
always satisfied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .observation import Observation
from .world import Action, ActionBounds

POOLED = 6  # pooled map side; feature dim = 2*POOLED^2 + 4
GOAL_DISTANCE_SCALE = 10.0  # m mapped to feature value 1.0


@dataclass(frozen=True)
class RewardParams:
    k_distance: float = 10.0   # per meter of progress
    r_arrive: float = 20.0
    r_collide: float = 20.0    # only charged when the collision penalty is on
    k_time: float = 0.05       # per-step cost


@dataclass
class PolicyParams:
    w1: np.ndarray  # (hidden, features)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (2, hidden)
    b2: np.ndarray  # (2,)

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @staticmethod
    def dim(feature_dim: int, hidden_dim: int) -> int:
        return hidden_dim * feature_dim + hidden_dim + 2 * hidden_dim + 2

    @staticmethod
    def from_vector(vec: np.ndarray, feature_dim: int, hidden_dim: int) -> "PolicyParams":
        expected = PolicyParams.dim(feature_dim, hidden_dim)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (expected,):
            raise ValueError(f"expected parameter vector of length {expected}, "
                             f"got shape {vec.shape}")
        k = 0
        w1 = vec[k:k + hidden_dim * feature_dim].reshape(hidden_dim, feature_dim)
        k += hidden_dim * feature_dim
        b1 = vec[k:k + hidden_dim]
        k += hidden_dim
        w2 = vec[k:k + 2 * hidden_dim].reshape(2, hidden_dim)
        k += 2 * hidden_dim
        b2 = vec[k:k + 2]
        return PolicyParams(w1=w1, b1=b1, w2=w2, b2=b2)

    @staticmethod
    def zeros(feature_dim: int, hidden_dim: int) -> "PolicyParams":
        return PolicyParams.from_vector(
            np.zeros(PolicyParams.dim(feature_dim, hidden_dim)),
            feature_dim, hidden_dim)


def _max_pool(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    if h % POOLED or w % POOLED:
        raise ValueError(f"grid {grid.shape} not divisible into {POOLED}x{POOLED} blocks")
    return grid.reshape(POOLED, h // POOLED, POOLED, w // POOLED).max(axis=(1, 3))


def featurize(obs: Observation, bounds: ActionBounds) -> np.ndarray:
    """Fixed-length feature vector, every entry within [-1, 1]."""
    newest = obs.newest.grid.astype(float)
    oldest = obs.frames[0].grid.astype(float)
    content = _max_pool(newest).ravel()
    diff = _max_pool(newest - oldest).ravel()
    gx, gy = obs.goal_rel
    dist = math.hypot(gx, gy)
    bearing = math.atan2(gy, gx)
    lin_scale = max(abs(bounds.linear_min), abs(bounds.linear_max))
    ang_scale = max(abs(bounds.angular_min), abs(bounds.angular_max))
    tail = np.array([
        min(dist / GOAL_DISTANCE_SCALE, 1.0),
        bearing / math.pi,
        np.clip(obs.velocity[0] / lin_scale, -1.0, 1.0),
        np.clip(obs.velocity[1] / ang_scale, -1.0, 1.0),
    ])
    return np.concatenate([content, diff, tail])


def feature_dim() -> int:
    return 2 * POOLED * POOLED + 4


def policy_forward(params: PolicyParams, features: np.ndarray,
                   bounds: ActionBounds) -> Action:
    """Deterministic perceptron pass, output squashed into the action box."""
    features = np.asarray(features, dtype=float)
    if features.shape != (params.feature_dim,):
        raise ValueError(f"expected features of shape ({params.feature_dim},), "
                         f"got {features.shape}")
    hidden = np.tanh(params.w1 @ features + params.b1)
    raw = params.w2 @ hidden + params.b2
    squashed = (np.tanh(raw) + 1.0) / 2.0
    low = bounds.low
    high = bounds.high
    out = low + (high - low) * squashed
    return Action(float(out[0]), float(out[1]))


def nominal_policy(obs: Observation, bounds: ActionBounds,
                   goal_tolerance: float = 0.2,
                   k_linear: float = 1.5, k_angular: float = 2.0) -> Action:
    """Proportional goal seeking: turn toward the goal, slow while misaligned."""
    gx, gy = obs.goal_rel
    dist = math.hypot(gx, gy)
    if dist < goal_tolerance:
        return Action(0.0, 0.0)
    bearing = math.atan2(gy, gx)
    angular = min(max(k_angular * bearing, bounds.angular_min), bounds.angular_max)
    align = max(0.0, 1.0 - abs(bearing) / (math.pi / 2.0))
    linear = min(max(k_linear * dist * align, bounds.linear_min), bounds.linear_max)
    return Action(linear, angular)


class NominalPolicy:
    """Callable wrapper so the harness can treat policies uniformly."""

    name = "nominal"

    def __init__(self, bounds: ActionBounds, goal_tolerance: float = 0.2):
        self.bounds = bounds
        self.goal_tolerance = goal_tolerance

    def __call__(self, obs: Observation) -> Action:
        return nominal_policy(obs, self.bounds, self.goal_tolerance)


class MlpPolicy:
    name = "mlp"

    def __init__(self, params: PolicyParams, bounds: ActionBounds):
        self.params = params
        self.bounds = bounds

    def __call__(self, obs: Observation) -> Action:
        return policy_forward(self.params, featurize(obs, self.bounds), self.bounds)


def goal_reward(prev, next_state, reached: bool, collided: bool,
                params: RewardParams = RewardParams(),
                collision_penalty: bool = True) -> float:
    """Dense progress reward plus arrival bonus, collision penalty, step cost.

    prev/next_state are the robot states across one step. The collision
    penalty is dropped when training with the CBF reward, which takes over
    as the safety signal.
    """
    progress = prev.goal_distance() - next_state.goal_distance()
    r = params.k_distance * progress - params.k_time
    if reached:
        r += params.r_arrive
    if collided and collision_penalty:
        r -= params.r_collide
    return r


def save_policy(params: PolicyParams, path: str | Path) -> None:
    np.savez(path, w1=params.w1, b1=params.b1, w2=params.w2, b2=params.b2)


def load_policy(path: str | Path) -> PolicyParams:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"policy file not found: {p}")
    data = np.load(p)
    return PolicyParams(w1=data["w1"], b1=data["b1"], w2=data["w2"], b2=data["b2"])
