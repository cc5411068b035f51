"""Action refinement by an Augmented Lagrangian solve of the barrier QP.

The constrained problem per decision:

    min_a ||a - a_nom||^2
    s.t.  h_pred_ij - h_ij >= -alpha * h_ij - eps   for every cell
          a_min <= a <= a_max

is solved through the unconstrained augmented Lagrangian

    L_sigma = ||a - a_nom||^2
              - (sum_ij lam_ij C_cbf + lam1 g |C_up| + lam2 g |C_low|)
              + sigma/2 (sum_ij C_cbf^2 + (g |C_up|)^2 + (g |C_low|)^2)

with C terms <= 0 (zero when satisfied), |.| the 2-norm over action
components and g the dynamic-constraint normalization. Multipliers and
penalty update between outer iterations as

    lam_ij <- lam_ij - sigma C_cbf
    lam1   <- lam1 - sigma g |C_up|      (drifts negative under violation,
    lam2   <- lam2 - sigma g |C_low|      keeping -lam g |C| a penalty)
    sigma  <- min(rho sigma, sigma_max)

The inner minimization is projected descent over the 2-D action box using
central finite differences with backtracking, which the tests audit
against a dense grid-search oracle. Multipliers are fresh per call; no
state persists across timesteps.

Alignment note: the constraint needs T^-1[h(M(s, a))], the predicted
barrier field re-expressed in the current frame. Because the predictors
decompose into content-map advection followed by the action's ego warp,
the warp and its inverse cancel analytically: the aligned field equals h
evaluated on the content map's own cells with distances taken from the
robot's predicted pose. The evaluator computes that closed form directly,
which is exact (no resampling loss; a one-cell-wide obstacle can never be
interpolated away) and touches only occupied cells. Cells unoccupied in
both maps hold r_max in both fields and contribute exactly zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cbf import CbfParams, ConstraintEval, cbf_violation, evaluate_h
from .observation import Observation
from .world import Action
from .world_model import StaticPredictor


@dataclass(frozen=True)
class AlmParams:
    sigma0: float = 1.0        # initial penalty
    rho: float = 3.0           # penalty growth, > 1
    sigma_max: float = 2048.0  # penalty cap (guards against blow-up)
    lambda0: float = 0.0       # initial multipliers
    gamma: float = 1.0         # dynamic-constraint normalization
    outer_iters: int = 10
    inner_iters: int = 25
    inner_step: float = 0.25   # initial line-search step, action units
    tol: float = 1e-3          # max-violation stopping tolerance
    fd_step: float = 1e-3      # finite-difference step for action gradients
    eval_budget: int | None = None  # cap on constraint evaluations ("fixed steps")

    def __post_init__(self):
        if self.rho <= 1.0:
            raise ValueError(f"rho must exceed 1, got {self.rho}")
        if self.sigma0 <= 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.lambda0 < 0.0:
            raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")


@dataclass
class Multipliers:
    cbf: np.ndarray   # (H, W) per-cell multipliers
    dyn_up: float
    dyn_low: float

    def max_abs(self) -> float:
        cells = float(np.abs(self.cbf).max()) if self.cbf.size else 0.0
        return max(cells, abs(self.dyn_up), abs(self.dyn_low))


def init_multipliers(shape: tuple[int, int], lambda0: float) -> Multipliers:
    return Multipliers(cbf=np.full(shape, lambda0, dtype=float),
                       dyn_up=lambda0, dyn_low=lambda0)


@dataclass(frozen=True)
class OuterTrace:
    outer: int
    sigma: float
    max_multiplier: float
    objective: float       # ||a - a_nom||^2 at the iterate
    max_violation: float

    def as_line(self) -> str:
        return (f"outer={self.outer} sigma={self.sigma:.6g} "
                f"max_lambda={self.max_multiplier:.6g} "
                f"objective={self.objective:.6g} "
                f"max_violation={self.max_violation:.6g}")


@dataclass(frozen=True)
class RefineResult:
    action: Action
    r_c: float
    converged: bool
    max_violation: float
    iterations: int
    trace: tuple[OuterTrace, ...] = ()

    def trace_lines(self) -> list[str]:
        return [t.as_line() for t in self.trace]


@dataclass(frozen=True)
class BatchConstraints:
    """Constraint values for a batch of candidate actions.

    CBF values are stored only at the content map's occupied cells (the
    only cells whose constraint can be nonzero); `cells` holds their grid
    indices so single() can scatter back to the full grid.
    """
    c_cells: np.ndarray    # (A, N) CBF constraint values at occupied cells
    cells: np.ndarray      # (N, 2) grid indices of those cells
    shape: tuple[int, int]
    c_dyn_up: np.ndarray   # (A, 2)
    c_dyn_low: np.ndarray  # (A, 2)
    gamma: float

    def max_violation(self) -> np.ndarray:
        if self.c_cells.shape[1]:
            worst = self.c_cells.min(axis=1)
        else:
            worst = np.zeros(len(self.c_cells))
        worst = np.minimum(worst, self.c_dyn_up.min(axis=1))
        worst = np.minimum(worst, self.c_dyn_low.min(axis=1))
        return -np.minimum(worst, 0.0)

    def single(self, index: int = 0) -> ConstraintEval:
        grid = np.zeros(self.shape)
        if self.cells.size:
            grid[self.cells[:, 0], self.cells[:, 1]] = self.c_cells[index]
        return ConstraintEval(
            c_cbf=grid,
            c_dyn_up=self.c_dyn_up[index],
            c_dyn_low=self.c_dyn_low[index],
            gamma=self.gamma,
        )


class ConstraintEvaluator:
    """Constraint pipeline for one decision, batched over candidate actions.

    The decay condition is enforced per physical obstacle cell: each
    occupied cell of the newest frame is tracked from its current position
    q to its model-predicted position p (identical under the quasi-static
    assumption, advected by the estimated flow otherwise). Per candidate
    action with integrated ego displacement (d, dtheta), the inverse-
    aligned predicted barrier of that cell is evaluated in closed form:

        r' = |p - d|
        h' = r' - v_pred * (R(dtheta) e_x) . (p - d) / r' * delta_t - r_min

    and c = min{h' - h + alpha h + eps, 0} with h the cell's current
    barrier value. This realizes the inverse alignment exactly (the same
    physical obstacle is compared against itself, never against an empty
    grid address), so no resampling loss or occupancy mismatch can mask or
    fabricate a violation. Cells currently beyond r_max are excluded from
    the constraints entirely.

    Estimated obstacle motion is fused conservatively: h' is evaluated at
    both the static and the flow-predicted cell positions and the smaller
    value wins per cell, so the model can anticipate danger but an
    erroneous flow estimate can never unlock speed.

    refine_action and the test oracle both run through this evaluator, so
    they optimize the identical constraint function.
    """

    def __init__(self, obs: Observation, predictor: StaticPredictor,
                 params: CbfParams, gamma: float = 1.0):
        self.spec = obs.spec
        self.params = params
        self.bounds = predictor.bounds
        self.dt = predictor.dt
        self.gamma = gamma
        self.field_now = evaluate_h(obs.newest, obs.velocity, params)
        cur, pred = predictor.cell_tracks(obs, params.delta_t)
        cells = np.argwhere(obs.newest.grid == 1)
        eligible = self.field_now.occupied[cells[:, 0], cells[:, 1]]
        self.cells = cells[eligible]
        # both static and flow-predicted positions per tracked cell (N, 2, xy)
        self._positions = np.stack([cur[eligible], pred[eligible]], axis=1)
        self._h_now = self.field_now.h[self.cells[:, 0], self.cells[:, 1]]
        self.evals = 0

    def _ego_motion_batch(self, clamped: np.ndarray):
        """Vectorized Euler sub-stepping; matches world_model.integrate_ego_motion."""
        steps = max(1, round(self.params.delta_t / self.dt))
        lin = clamped[:, 0]
        ang = clamped[:, 1]
        x = np.zeros(len(clamped))
        y = np.zeros(len(clamped))
        th = np.zeros(len(clamped))
        for _ in range(steps):
            x = x + lin * np.cos(th) * self.dt
            y = y + lin * np.sin(th) * self.dt
            th = th + ang * self.dt
        return x, y, th

    def constraints_batch(self, actions: np.ndarray) -> BatchConstraints:
        """Evaluate constraints at raw candidate actions, shape (A, 2)."""
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        self.evals += len(actions)
        clamped = np.clip(actions, self.bounds.low, self.bounds.high)
        dx, dy, dth = self._ego_motion_batch(clamped)
        if self.cells.size:
            # (A, N, 2 positions): cell minus predicted ego pose
            qx = self._positions[None, :, :, 0] - dx[:, None, None]
            qy = self._positions[None, :, :, 1] - dy[:, None, None]
            r = np.hypot(qx, qy)
            # forward velocity of the predicted pose projected on each cell;
            # the degenerate r=0 case takes the head-on limit 1 (conservative)
            head_x = np.cos(dth)[:, None, None]
            head_y = np.sin(dth)[:, None, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                proj = np.where(r > 0.0, (head_x * qx + head_y * qy)
                                / np.where(r > 0.0, r, 1.0), 1.0)
            h_aligned = np.where(
                r <= self.params.r_max,
                r - clamped[:, 0:1, None] * proj * self.params.delta_t
                - self.params.r_min,
                self.params.r_max).min(axis=2)
            c_cells = cbf_violation(self._h_now[None, :], h_aligned, self.params)
        else:
            c_cells = np.zeros((len(actions), 0))
        c_up = np.minimum(self.bounds.high - actions, 0.0)
        c_low = np.minimum(actions - self.bounds.low, 0.0)
        return BatchConstraints(c_cells=c_cells, cells=self.cells,
                                shape=self.field_now.h.shape,
                                c_dyn_up=c_up, c_dyn_low=c_low,
                                gamma=self.gamma)

    def evaluate(self, action: Action) -> ConstraintEval:
        return self.constraints_batch(action.as_array()[None, :]).single(0)


def lagrangian_value(action: Action, nominal: Action, multipliers: Multipliers,
                     sigma: float, constraints: ConstraintEval) -> float:
    """The augmented Lagrangian at one action (constraints evaluated there)."""
    da = action.as_array() - nominal.as_array()
    dev = float((da ** 2).sum())
    if constraints.c_cbf.size:
        lin_cbf = float((multipliers.cbf * constraints.c_cbf).sum())
        quad_cbf = float((constraints.c_cbf ** 2).sum())
    else:
        lin_cbf = 0.0
        quad_cbf = 0.0
    g = constraints.gamma
    up_norm = g * float(np.linalg.norm(constraints.c_dyn_up))
    low_norm = g * float(np.linalg.norm(constraints.c_dyn_low))
    linear = lin_cbf + multipliers.dyn_up * up_norm + multipliers.dyn_low * low_norm
    quad = quad_cbf + up_norm ** 2 + low_norm ** 2
    return dev - linear + 0.5 * sigma * quad


def lagrangian_batch(actions: np.ndarray, nominal: np.ndarray,
                     multipliers: Multipliers, sigma: float,
                     constraints: BatchConstraints) -> np.ndarray:
    """Same Lagrangian over a batch; multipliers sampled at the support cells."""
    dev = ((actions - nominal[None, :]) ** 2).sum(axis=1)
    if constraints.c_cells.shape[1]:
        lam = multipliers.cbf[constraints.cells[:, 0], constraints.cells[:, 1]]
        lin_cbf = (lam[None, :] * constraints.c_cells).sum(axis=1)
        quad_cbf = (constraints.c_cells ** 2).sum(axis=1)
    else:
        lin_cbf = np.zeros(len(actions))
        quad_cbf = np.zeros(len(actions))
    g = constraints.gamma
    up_norm = g * np.linalg.norm(constraints.c_dyn_up, axis=1)
    low_norm = g * np.linalg.norm(constraints.c_dyn_low, axis=1)
    linear = lin_cbf + multipliers.dyn_up * up_norm + multipliers.dyn_low * low_norm
    quad = quad_cbf + up_norm ** 2 + low_norm ** 2
    return dev - linear + 0.5 * sigma * quad


def update_multipliers(multipliers: Multipliers, sigma: float,
                       constraints: ConstraintEval,
                       params: AlmParams) -> tuple[Multipliers, float]:
    """Periodic multiplier/penalty update between outer iterations."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = constraints.gamma
    up_norm = g * float(np.linalg.norm(constraints.c_dyn_up))
    low_norm = g * float(np.linalg.norm(constraints.c_dyn_low))
    new = Multipliers(
        cbf=multipliers.cbf - sigma * constraints.c_cbf,
        dyn_up=multipliers.dyn_up - sigma * up_norm,
        dyn_low=multipliers.dyn_low - sigma * low_norm,
    )
    return new, min(params.rho * sigma, params.sigma_max)


def cbf_reward(obs: Observation, a_nom: Action, predictor: StaticPredictor,
               cbf_params: CbfParams, alm: AlmParams) -> float:
    """Negated initial Lagrangian value at the nominal action.

    Zero exactly when the nominal action violates nothing; increasingly
    negative with the violation magnitude, so it penalizes danger when fed
    back as reward.
    """
    evaluator = ConstraintEvaluator(obs, predictor, cbf_params, alm.gamma)
    c0 = evaluator.evaluate(a_nom)
    return _reward_from_constraints(a_nom, c0, alm)


def _reward_from_constraints(a_nom: Action, c0: ConstraintEval,
                             alm: AlmParams) -> float:
    mult = init_multipliers(c0.c_cbf.shape, alm.lambda0)
    value = lagrangian_value(a_nom, a_nom, mult, alm.sigma0, c0)
    return -value if value != 0.0 else 0.0


def refine_action(obs: Observation, a_nom: Action, predictor: StaticPredictor,
                  cbf_params: CbfParams, alm: AlmParams,
                  keep_trace: bool = False) -> RefineResult:
    """Refine a nominal action to the minimally deviating safe action.

    Outer loop: inner minimization of L_sigma, then the multiplier/penalty
    update, until the worst violation falls under tol or iterations (or
    the optional evaluation budget) run out. On non-convergence the best
    iterate wins: lowest max violation, ties by lower deviation from the
    nominal action (equal to L on the feasible set). The returned action
    is always inside the action box.
    """
    if not (math.isfinite(a_nom.linear) and math.isfinite(a_nom.angular)):
        raise ValueError(f"nominal action must be finite, got {a_nom}")
    evaluator = ConstraintEvaluator(obs, predictor, cbf_params, alm.gamma)
    c0 = evaluator.evaluate(a_nom)
    r_c = _reward_from_constraints(a_nom, c0, alm)
    v0 = c0.max_violation()
    if v0 <= alm.tol:
        return RefineResult(action=predictor.bounds.clamp(a_nom), r_c=r_c,
                            converged=True, max_violation=v0, iterations=0)

    nominal = a_nom.as_array()
    low = predictor.bounds.low
    high = predictor.bounds.high
    a = np.clip(nominal, low, high)
    mult = init_multipliers(c0.c_cbf.shape, alm.lambda0)
    sigma = alm.sigma0

    if np.array_equal(a, nominal):
        best_viol, best_obj, best_a = v0, 0.0, a.copy()
    else:
        cb = evaluator.constraints_batch(a[None, :])
        best_viol = float(cb.max_violation()[0])
        best_obj = float(((a - nominal) ** 2).sum())
        best_a = a.copy()

    def budget_left() -> bool:
        return alm.eval_budget is None or evaluator.evals < alm.eval_budget

    trace: list[OuterTrace] = []
    converged = False
    iterations = 0
    stalled = 0
    for outer in range(alm.outer_iters):
        iterations = outer + 1
        a = _inner_minimize(evaluator, a, nominal, mult, sigma, low, high, alm,
                            budget_left)
        ck = evaluator.evaluate(Action(float(a[0]), float(a[1])))
        viol = ck.max_violation()
        obj = float(((a - nominal) ** 2).sum())
        if viol < best_viol - 0.1 * alm.tol:
            stalled = 0
        else:
            stalled += 1  # plateau: likely infeasible, stop burning evals
        if (viol, obj) < (best_viol, best_obj):
            best_viol, best_obj, best_a = viol, obj, a.copy()
        if keep_trace:
            trace.append(OuterTrace(outer=outer, sigma=sigma,
                                    max_multiplier=mult.max_abs(),
                                    objective=obj, max_violation=viol))
        if viol <= alm.tol:
            converged = True
            break
        if not budget_left() or stalled >= 2:
            break
        mult, sigma = update_multipliers(mult, sigma, ck, alm)

    return RefineResult(
        action=Action(float(best_a[0]), float(best_a[1])),
        r_c=r_c,
        converged=converged,
        max_violation=best_viol,
        iterations=iterations,
        trace=tuple(trace),
    )


_SEED_GRID = 7  # coarse L scan seeding each inner solve (one batched eval)


def _inner_minimize(evaluator: ConstraintEvaluator, a0: np.ndarray,
                    nominal: np.ndarray, mult: Multipliers, sigma: float,
                    low: np.ndarray, high: np.ndarray, alm: AlmParams,
                    budget_left) -> np.ndarray:
    """Projected descent on L_sigma over the action box.

    L is multimodal near contact (the deviation and penalty terms compete),
    so each solve first scans a coarse action grid and descends from the
    best seed; the box is only 2-D, so the scan is a single cheap batch.
    """

    def values(actions: np.ndarray) -> np.ndarray:
        batch = evaluator.constraints_batch(actions)
        return lagrangian_batch(actions, nominal, mult, sigma, batch)

    lin_seeds = np.linspace(low[0], high[0], _SEED_GRID)
    ang_seeds = np.linspace(low[1], high[1], _SEED_GRID)
    seeds = np.array([[l, g] for l in lin_seeds for g in ang_seeds]
                     + [[a0[0], a0[1]]])
    seed_values = values(seeds)
    best = int(np.argmin(seed_values))
    a = seeds[best].copy()
    f_cur = float(seed_values[best])
    step = alm.inner_step
    fd = alm.fd_step
    for _ in range(alm.inner_iters):
        if not budget_left():
            break
        probes = np.array([
            [a[0] + fd, a[1]],
            [a[0] - fd, a[1]],
            [a[0], a[1] + fd],
            [a[0], a[1] - fd],
        ])
        fp = values(probes)
        grad = np.array([(fp[0] - fp[1]) / (2 * fd), (fp[2] - fp[3]) / (2 * fd)])
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(gnorm) or gnorm < 1e-10:
            break
        direction = -grad / gnorm
        accepted = None
        s = step
        while s >= 1e-6 and budget_left():
            # speculative batch of three shrinking steps per evaluation round
            scales = np.array([s, s * 0.5, s * 0.25])
            cands = np.clip(a[None, :] + scales[:, None] * direction[None, :],
                            low, high)
            fc = values(cands)
            improved = fc < f_cur - 1e-12
            if improved.any():
                pick = int(np.argmax(improved))
                accepted = (cands[pick], float(fc[pick]), float(scales[pick]))
                break
            s *= 0.125
        if accepted is None:
            break
        new_a, f_new, s_used = accepted
        moved = float(np.linalg.norm(new_a - a))
        a = new_a
        f_cur = f_new
        step = min(max(s_used * 2.0, 1e-4), 1.0)
        if moved < 1e-7:
            break
    return a
