"""Built-in invariant battery backing the `check` CLI subcommand.

Fast spot checks of the core contracts: barrier arithmetic, multiplier
updates, warp round-trips, simulator determinism, and the feasible
fixed point of the refiner. Each check returns (name, ok, detail).
"""
from __future__ import annotations

import numpy as np

from .cbf import CbfParams, ConstraintEval, evaluate_h
from .harness import EpisodeTask, episode_to_jsonl, run_task
from .observation import Costmap, EgoMotion, GridSpec, affine_transform
from .refiner import AlmParams, Multipliers, update_multipliers
from .scenarios import build_scenario
from .world import Action, ActionBounds


def run_battery(seed: int = 0):
    checks = [
        ("barrier formula", _check_barrier),
        ("multiplier update", _check_multipliers),
        ("warp round trip", _check_warp),
        ("episode determinism", lambda: _check_determinism(seed)),
        ("feasible fixed point", lambda: _check_fixed_point(seed)),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results


def _check_barrier():
    spec = GridSpec()
    grid = spec.empty_grid()
    grid[spec.height // 2 + 20, spec.width // 2] = 1  # 2.0 m dead ahead
    cm = Costmap(grid=grid, spec=spec)
    params = CbfParams(r_min=0.3, r_max=2.5, delta_t=0.5, alpha=0.5)
    h = evaluate_h(cm, (1.0, 0.0), params).h[spec.height // 2 + 20, spec.width // 2]
    expect = 2.0 - 1.0 * 0.5 - 0.3
    ok = abs(h - expect) < 1e-9
    return ok, f"h={h:.9f} expected {expect:.9f}"


def _check_multipliers():
    c = ConstraintEval(c_cbf=np.array([[-0.5]]), c_dyn_up=np.zeros(2),
                       c_dyn_low=np.zeros(2), gamma=1.0)
    mult = Multipliers(cbf=np.array([[1.0]]), dyn_up=0.0, dyn_low=0.0)
    new, sigma = update_multipliers(mult, 2.0, c, AlmParams(rho=2.0))
    ok = new.cbf[0, 0] == 2.0 and sigma == 4.0
    return ok, f"lambda'={new.cbf[0, 0]} sigma'={sigma}"


def _check_warp():
    spec = GridSpec()
    grid = spec.empty_grid()
    grid[26, 22:27] = 1
    cm = Costmap(grid=grid, spec=spec)
    motion = EgoMotion(0.2, 0.0, 0.0)
    back = affine_transform(affine_transform(cm, motion, "forward"),
                            motion, "inverse")
    ok = np.array_equal(back.grid, cm.grid)
    return ok, f"recovered {int((back.grid & cm.grid).sum())}/{int(cm.grid.sum())} cells"


def _base_task(seed: int) -> EpisodeTask:
    return EpisodeTask(config=build_scenario("sparse_4", seed),
                       action_seed=seed)


def _check_determinism(seed: int):
    a = episode_to_jsonl(run_task(_base_task(seed)))
    b = episode_to_jsonl(run_task(_base_task(seed)))
    ok = a == b
    return ok, f"{len(a)} log bytes {'match' if ok else 'differ'}"


def _check_fixed_point(seed: int):
    from .harness import make_predictor
    from .observation import Observation
    from .refiner import refine_action
    from .world import WorldParams

    spec = GridSpec()
    empty = Costmap(grid=spec.empty_grid(), spec=spec)
    obs = Observation(frames=(empty, empty, empty), goal_rel=(2.0, 0.0),
                      velocity=(0.3, 0.0))
    world = WorldParams()
    predictor = make_predictor("static", world)
    a_nom = Action(0.7, 0.1)
    res = refine_action(obs, a_nom, predictor, CbfParams(), AlmParams())
    ok = (res.converged and res.r_c == 0.0
          and abs(res.action.linear - a_nom.linear) < 1e-9
          and abs(res.action.angular - a_nom.angular) < 1e-9)
    return ok, f"a*=({res.action.linear:.4f}, {res.action.angular:.4f}) r_c={res.r_c}"
