"""Joint training loop: refine-and-reward-feedback with a CEM policy search.

Per epoch, matching the joint training algorithm's skeleton:
  1. collect K environment steps on the training scenario with the current
     mean policy (random actions while the global step count is below the
     warmup threshold E), refining every action and logging transitions
     (s, a, a*, s', r) with r = r_g + r_c into the dataset D;
  2. evaluate both predictors on held-out transitions sampled from D; the
     flow model takes over from the quasi-static warm-start model at epoch
     M or once its prediction error undercuts the static model's,
     whichever happens later, and keeps the role from then on;
  3. run one cross-entropy-method generation: sample parameter
     perturbations around the mean, score each by mean episodic return
     with refinement active, and refit mean/std on the elite fraction.

Two reward modes: "cbf" scores with r_g (collision penalty dropped)
plus the weighted CBF reward, "collision" scores with the classic goal
reward including the collision penalty and ignores r_c. Stored records
always keep r = r_g + r_c exactly regardless of mode.

The CEM update is skipped while the step count is below E, so the policy
network is never queried before the warmup completes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cbf import CbfParams
from .harness import EpisodeRecord, EpisodeTask, run_task
from .observation import DEFAULT_FRAME_COUNT, DEFAULT_GRID
from .parallel import parallel_map
from .policy import PolicyParams, RewardParams, feature_dim
from .refiner import AlmParams
from .replay import ReplayDataset
from .scenarios import build_scenario
from .world import STATUS_COLLIDED, STATUS_REACHED, WorldParams
from .world_model import FlowPredictor, StaticPredictor, prediction_error

REWARD_MODES = ("cbf", "collision")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60               # N
    steps_per_epoch: int = 120     # K environment steps collected per epoch
    warmup_steps: int = 120        # E: random actions while total steps < E
    static_epochs: int = 3         # M: quasi-static model warm start
    population: int = 6
    elite_frac: float = 0.34
    eval_episodes: int = 1         # episodes per candidate score
    seed: int = 0
    scenario: str = "sparse_4"
    reward_mode: str = "cbf"
    cbf_weight: float = 1.0        # w_c applied to r_c at scoring time
    hidden_dim: int = 32
    cem_init_std: float = 0.5
    cem_min_std: float = 0.05
    model_eval_samples: int = 48

    def __post_init__(self):
        if self.warmup_steps > self.epochs * self.steps_per_epoch:
            raise ValueError("warmup_steps cannot exceed total training steps")
        if self.static_epochs > self.epochs:
            raise ValueError("static_epochs cannot exceed epochs")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.population < 2 * self.elite_count:
            raise ValueError(
                f"population {self.population} must be at least twice the "
                f"elite count {self.elite_count}")

    @property
    def elite_count(self) -> int:
        return max(1, int(np.ceil(self.population * self.elite_frac)))


@dataclass
class EpochLog:
    epoch: int
    success_rate: float
    collision_rate: float
    mean_return: float
    pred_error: float
    wall_time_s: float
    model: str
    total_steps: int
    elite_return: float
    population_return: float


@dataclass
class TrainResult:
    params: PolicyParams
    vector: np.ndarray
    log: list[EpochLog]
    dataset: ReplayDataset
    best_return: float


def episode_return(record: EpisodeRecord, include_cbf: bool,
                   cbf_weight: float) -> float:
    """Per-robot mean episodic return from the step logs."""
    robots = max(1, len(record.outcomes))
    total = sum(sum(step.r_goal) for step in record.steps)
    if include_cbf:
        total += cbf_weight * sum(sum(step.r_cbf) for step in record.steps)
    return total / robots


def _outcome_rates(records: list[EpisodeRecord]) -> tuple[float, float]:
    outcomes = [s for r in records for s in r.outcomes]
    if not outcomes:
        return 0.0, 0.0
    reached = sum(1 for s in outcomes if s == STATUS_REACHED)
    collided = sum(1 for s in outcomes if s == STATUS_COLLIDED)
    return reached / len(outcomes), collided / len(outcomes)


def train_joint(cfg: TrainConfig,
                world: WorldParams = WorldParams(),
                cbf: CbfParams = CbfParams(),
                alm: AlmParams = AlmParams(),
                workers: int | None = None,
                progress=None) -> TrainResult:
    """Run the joint training loop; deterministic for a fixed config."""
    rng = np.random.default_rng(cfg.seed)
    dim = PolicyParams.dim(feature_dim(), cfg.hidden_dim)
    mean = np.zeros(dim)
    std = np.full(dim, cfg.cem_init_std)
    include_cbf = cfg.reward_mode == "cbf"
    collision_penalty = cfg.reward_mode == "collision"

    dataset = ReplayDataset(DEFAULT_GRID, DEFAULT_FRAME_COUNT)
    logs: list[EpochLog] = []
    total_steps = 0
    flow_active = False
    best_return = -np.inf
    best_vector = mean.copy()

    base_task = EpisodeTask(
        config=build_scenario(cfg.scenario, 0),
        world=world, cbf=cbf, alm=alm,
        reward=RewardParams(),
        refine=True,
        policy="mlp",
        hidden_dim=cfg.hidden_dim,
        collision_penalty=collision_penalty,
    )

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model_name = "flow" if flow_active else "static"

        # ---- data collection (Alg. 1 step loop) ----
        collect_records: list[EpisodeRecord] = []
        steps_this_epoch = 0
        while steps_this_epoch < cfg.steps_per_epoch:
            ep_seed = int(rng.integers(0, 2**31 - 1))
            task = replace(
                base_task,
                config=build_scenario(cfg.scenario, ep_seed),
                model=model_name,
                policy_vector=mean.copy(),
                collect=True,
                random_steps=max(0, cfg.warmup_steps - total_steps),
                action_seed=ep_seed,
            )
            record = run_task(task)
            collect_records.append(record)
            steps_this_epoch += len(record.steps)
            total_steps += len(record.steps)
            for rec in record.replay:
                dataset.append(rec)

        # ---- predictor selection on held-out transitions ----
        pred_error = float("nan")
        if len(dataset) >= 2:
            n_eval = min(cfg.model_eval_samples, len(dataset))
            sample = dataset.sample(n_eval, seed=cfg.seed + 7919 * (epoch + 1))
            transitions = list(dataset.transitions(sample))
            static_err = prediction_error(
                StaticPredictor(world.bounds, world.dt), transitions)
            flow_err = prediction_error(
                FlowPredictor(world.bounds, world.dt), transitions)
            if not flow_active and epoch + 1 >= cfg.static_epochs and flow_err < static_err:
                flow_active = True
            pred_error = flow_err if flow_active else static_err

        # ---- CEM generation (skipped until the warmup completes) ----
        elite_ret = float("nan")
        pop_ret = float("nan")
        gen_records: list[EpisodeRecord] = collect_records
        if total_steps >= cfg.warmup_steps:
            candidates = mean[None, :] + std[None, :] * rng.standard_normal(
                (cfg.population, dim))
            episode_seeds = [int(rng.integers(0, 2**31 - 1))
                             for _ in range(cfg.eval_episodes)]
            tasks = []
            for cand in candidates:
                for s in episode_seeds:
                    tasks.append(replace(
                        base_task,
                        config=build_scenario(cfg.scenario, s),
                        model="flow" if flow_active else "static",
                        policy_vector=cand,
                        action_seed=s,
                    ))
            results = parallel_map(run_task, tasks, workers=workers)
            gen_records = results
            returns = np.array([
                np.mean([episode_return(results[c * cfg.eval_episodes + e],
                                        include_cbf, cfg.cbf_weight)
                         for e in range(cfg.eval_episodes)])
                for c in range(cfg.population)
            ])
            order = np.argsort(returns)[::-1]
            elites = candidates[order[:cfg.elite_count]]
            elite_ret = float(returns[order[:cfg.elite_count]].mean())
            pop_ret = float(returns.mean())
            mean = elites.mean(axis=0)
            std = np.maximum(elites.std(axis=0), cfg.cem_min_std)
            top = order[0]
            if returns[top] > best_return:
                best_return = float(returns[top])
                best_vector = candidates[top].copy()

        success, collision = _outcome_rates(gen_records)
        logs.append(EpochLog(
            epoch=epoch,
            success_rate=success,
            collision_rate=collision,
            mean_return=pop_ret if not np.isnan(pop_ret) else float(np.mean(
                [episode_return(r, include_cbf, cfg.cbf_weight)
                 for r in collect_records])),
            pred_error=pred_error,
            wall_time_s=time.perf_counter() - t0,
            model=model_name,
            total_steps=total_steps,
            elite_return=elite_ret,
            population_return=pop_ret,
        ))
        if progress is not None:
            progress(logs[-1])

    if not np.isfinite(best_return):
        best_vector = mean.copy()
    params = PolicyParams.from_vector(best_vector, feature_dim(), cfg.hidden_dim)
    return TrainResult(params=params, vector=best_vector, log=logs,
                       dataset=dataset, best_return=best_return)


def training_log_csv(logs: list[EpochLog]) -> str:
    out = ["epoch,success_rate,collision_rate,mean_return,pred_error,wall_time_s"]
    for row in logs:
        out.append(f"{row.epoch},{row.success_rate!r},{row.collision_rate!r},"
                   f"{row.mean_return!r},{row.pred_error!r},{row.wall_time_s!r}")
    return "\n".join(out) + "\n"


def save_training_log(logs: list[EpochLog], path: str | Path) -> None:
    Path(path).write_text(training_log_csv(logs))
