"""Decentralized multi-robot navigation with costmap-CBF action refinement.

The stack: a 2D differential-drive simulator with raycast lidar
(`world`, `scenarios`), egocentric costmap observations with ego-motion
alignment (`observation`), a pixel-wise barrier field (`cbf`), one-step
world transition predictors (`world_model`), an augmented-Lagrangian
action refiner with CBF reward feedback (`refiner`), a joint training
loop (`training`), and the evaluation harness plus CLI (`harness`,
`cli`).
"""

from .cbf import CbfField, CbfParams, ConstraintEval, evaluate_h
from .observation import Costmap, EgoMotion, GridSpec, Observation
from .refiner import AlmParams, RefineResult, cbf_reward, refine_action
from .world import Action, ActionBounds, RobotState, WorldParams, WorldState
from .world_model import FlowPredictor, StaticPredictor, TransitionPrediction

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionBounds",
    "AlmParams",
    "CbfField",
    "CbfParams",
    "ConstraintEval",
    "Costmap",
    "EgoMotion",
    "FlowPredictor",
    "GridSpec",
    "Observation",
    "RefineResult",
    "RobotState",
    "StaticPredictor",
    "TransitionPrediction",
    "WorldParams",
    "WorldState",
    "cbf_reward",
    "evaluate_h",
    "refine_action",
    "__version__",
]
