"""Episode runner, evaluation metrics, and result emission.

Every active robot each tick: build observation -> policy action ->
(optional) refinement -> all refined actions applied simultaneously.
A collision terminates only the robots involved; the rest continue.
Episode logs capture per-step poses, nominal and refined actions, reward
components, and the min barrier value over occupied cells, which feeds
the forward-invariance checks.

Trajectory logs serialize as JSON lines (schema_version 1): one header
line with the scenario layout and outcomes, then one line per step. Wall
time is kept in memory only, so identical (config, seed) runs produce
byte-identical logs.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .cbf import CbfParams, evaluate_h
from .observation import (
    DEFAULT_FRAME_COUNT,
    DEFAULT_GRID,
    EgoMotion,
    GridSpec,
    ObservationBuilder,
    costmap_to_pgm,
)
from .policy import (
    MlpPolicy,
    NominalPolicy,
    PolicyParams,
    RewardParams,
    feature_dim,
    goal_reward,
)
from .refiner import AlmParams, refine_action
from .replay import ObservationDigest, ReplayRecord
from .scenarios import RobotSpec, ScenarioConfig, config_to_dict, load_scenario
from .world import (
    Action,
    STATUS_COLLIDED,
    STATUS_REACHED,
    STATUS_TIMEOUT,
    WorldParams,
    raycast_lidar,
    relative_pose,
    step_world,
)
from .world_model import FlowPredictor, StaticPredictor

SCHEMA_VERSION = 1


@dataclass
class StepLog:
    poses: list[tuple[float, float, float]]       # post-step
    a_nom: list[tuple[float, float]]
    a_star: list[tuple[float, float]]
    r_goal: list[float]
    r_cbf: list[float]
    min_h: list[float]
    statuses: list[str]


@dataclass
class EpisodeRecord:
    scenario: str
    seed: int
    start_poses: list[tuple[float, float, float]]
    goals: list[tuple[float, float]]
    config: ScenarioConfig
    steps: list[StepLog] = dataclass_field(default_factory=list)
    outcomes: list[str] = dataclass_field(default_factory=list)
    done_time: float = 0.0
    wall_time: float = 0.0    # never serialized
    replay: list[ReplayRecord] = dataclass_field(default_factory=list)

    @property
    def collided(self) -> int:
        return sum(1 for s in self.outcomes if s == STATUS_COLLIDED)

    @property
    def reached(self) -> int:
        return sum(1 for s in self.outcomes if s == STATUS_REACHED)


@dataclass(frozen=True)
class Metrics:
    success_rate: float
    collision_rate: float
    timeout_rate: float
    done_time: float
    episodes: int


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    metrics: Metrics


@dataclass(frozen=True)
class EpisodeTask:
    """Picklable description of one episode (used for parallel evaluation)."""
    config: ScenarioConfig
    world: WorldParams = WorldParams()
    cbf: CbfParams = CbfParams()
    alm: AlmParams = AlmParams()
    reward: RewardParams = RewardParams()
    refine: bool = True
    model: str = "flow"                 # "static" | "flow"
    policy: str = "nominal"             # "nominal" | "mlp"
    policy_vector: np.ndarray | None = None
    hidden_dim: int = 32
    collision_penalty: bool = True
    collect: bool = False
    random_steps: int = 0
    action_seed: int = 0
    grid: GridSpec = DEFAULT_GRID
    frame_count: int = DEFAULT_FRAME_COUNT
    dump_costmap_dir: str | None = None
    dump_episode_index: int = 0


def make_predictor(model: str, world: WorldParams):
    if model == "static":
        return StaticPredictor(world.bounds, world.dt)
    if model == "flow":
        return FlowPredictor(world.bounds, world.dt)
    raise ValueError(f"model must be 'static' or 'flow', got {model!r}")


def make_policy(task: EpisodeTask, world: WorldParams):
    if task.policy == "nominal":
        return NominalPolicy(world.bounds, world.goal_tolerance)
    if task.policy == "mlp":
        if task.policy_vector is None:
            raise ValueError("mlp policy needs a parameter vector")
        params = PolicyParams.from_vector(np.asarray(task.policy_vector),
                                          feature_dim(), task.hidden_dim)
        return MlpPolicy(params, world.bounds)
    raise ValueError(f"policy must be 'nominal' or 'mlp', got {task.policy!r}")


def run_task(task: EpisodeTask) -> EpisodeRecord:
    world = load_scenario(task.config, params=task.world)
    policy = make_policy(task, world.params)
    predictor = make_predictor(task.model, world.params)
    return run_episode(
        world, policy,
        refine=task.refine,
        predictor=predictor,
        cbf=task.cbf,
        alm=task.alm,
        reward=task.reward,
        collision_penalty=task.collision_penalty,
        collect=task.collect,
        random_steps=task.random_steps,
        action_seed=task.action_seed,
        grid=task.grid,
        frame_count=task.frame_count,
        dump_costmap_dir=task.dump_costmap_dir,
        dump_episode_index=task.dump_episode_index,
    )


def run_episode(world, policy, *, refine: bool, predictor, cbf: CbfParams,
                alm: AlmParams, reward: RewardParams = RewardParams(),
                collision_penalty: bool = True, collect: bool = False,
                random_steps: int = 0, action_seed: int = 0,
                grid: GridSpec = DEFAULT_GRID,
                frame_count: int = DEFAULT_FRAME_COUNT,
                dump_costmap_dir: str | None = None,
                dump_episode_index: int = 0) -> EpisodeRecord:
    """Roll one episode to termination (all robots terminal or time cap)."""
    t_start = time.perf_counter()
    params = world.params
    n = len(world.robots)
    cap_steps = int(round(params.time_cap_s / params.dt))
    builders = [ObservationBuilder(grid, frame_count) for _ in range(n)]
    prev_poses: list[tuple[float, float, float] | None] = [None] * n
    rng = np.random.default_rng(action_seed)
    pending: list[dict | None] = [None] * n  # transition awaiting its next obs

    record = EpisodeRecord(
        scenario=world.scenario_name,
        seed=world.rng_seed,
        start_poses=[r.pose for r in world.robots],
        goals=[(r.goal_x, r.goal_y) for r in world.robots],
        config=_task_config(world),
    )

    for step_idx in range(cap_steps):
        observations: list = [None] * n
        actions: list[Action] = [Action(0.0, 0.0)] * n
        nominal: list[Action] = [Action(0.0, 0.0)] * n
        r_cbf_step = [0.0] * n
        min_h_step = [cbf.r_max] * n

        for i, robot in enumerate(world.robots):
            if not robot.active:
                continue
            scan = raycast_lidar(world, i)
            if prev_poses[i] is None:
                builders[i].push(scan, None)
            else:
                builders[i].push(scan, EgoMotion(*relative_pose(prev_poses[i],
                                                                robot.pose)))
            prev_poses[i] = robot.pose
            obs = builders[i].observe(robot)
            observations[i] = obs
            min_h_step[i] = evaluate_h(obs.newest, obs.velocity, cbf).min_h()
            if dump_costmap_dir is not None:
                costmap_to_pgm(obs.newest, Path(dump_costmap_dir) /
                               f"ep{dump_episode_index}_robot{i}_t{step_idx}.pgm")

            if step_idx < random_steps:
                a_nom = Action(float(rng.uniform(params.bounds.linear_min,
                                                 params.bounds.linear_max)),
                               float(rng.uniform(params.bounds.angular_min,
                                                 params.bounds.angular_max)))
            else:
                a_nom = policy(obs)
            nominal[i] = a_nom
            if refine:
                result = refine_action(obs, a_nom, predictor, cbf, alm)
                actions[i] = result.action
                r_cbf_step[i] = result.r_c
            else:
                actions[i] = params.bounds.clamp(a_nom)

        prev_states = [r.copy() for r in world.robots]
        world = step_world(world, actions, params.dt)

        r_goal_step = [0.0] * n
        for i, robot in enumerate(world.robots):
            if not prev_states[i].active:
                continue
            reached_now = robot.status == STATUS_REACHED
            collided_now = robot.status == STATUS_COLLIDED
            r_goal_step[i] = goal_reward(prev_states[i], robot, reached_now,
                                         collided_now, reward,
                                         collision_penalty=collision_penalty)
            if collect:
                if pending[i] is not None:
                    _complete_transition(record, pending[i],
                                         observations[i], done=False)
                pending[i] = {
                    "obs": observations[i],
                    "a_nom": nominal[i],
                    "a_star": actions[i],
                    "r_g": r_goal_step[i],
                    "r_c": r_cbf_step[i],
                }
                if not robot.active:
                    # terminal: no further scan exists, close on the last view
                    _complete_transition(record, pending[i],
                                         observations[i], done=True)
                    pending[i] = None

        record.steps.append(StepLog(
            poses=[r.pose for r in world.robots],
            a_nom=[(a.linear, a.angular) for a in nominal],
            a_star=[(a.linear, a.angular) for a in actions],
            r_goal=r_goal_step,
            r_cbf=r_cbf_step,
            min_h=min_h_step,
            statuses=[r.status for r in world.robots],
        ))
        if world.all_terminal():
            break

    # robots still active at the cap time out
    for i, robot in enumerate(world.robots):
        if robot.active:
            robot.status = STATUS_TIMEOUT
            if collect and pending[i] is not None:
                _complete_transition(record, pending[i], observations[i], done=True)
                pending[i] = None

    record.outcomes = [r.status for r in world.robots]
    record.done_time = world.time
    record.wall_time = time.perf_counter() - t_start
    return record


def _complete_transition(record: EpisodeRecord, pending: dict, next_obs,
                         done: bool) -> None:
    record.replay.append(ReplayRecord(
        obs=ObservationDigest.from_observation(pending["obs"]),
        a_nom=pending["a_nom"],
        a_star=pending["a_star"],
        next_obs=ObservationDigest.from_observation(next_obs),
        reward=pending["r_g"] + pending["r_c"],
        r_goal=pending["r_g"],
        r_cbf=pending["r_c"],
        done=done,
    ))


def _task_config(world) -> ScenarioConfig:
    return ScenarioConfig(
        scenario_name=world.scenario_name,
        bounds=world.arena,
        robots=tuple(RobotSpec(start=r.pose, goal=(r.goal_x, r.goal_y))
                     for r in world.robots),
        obstacles=world.obstacles,
        seed=world.rng_seed,
        time_cap_steps=int(round(world.params.time_cap_s / world.params.dt)),
    )


def aggregate(records: list[EpisodeRecord]) -> Metrics:
    """Outcome fractions over all robots of all episodes."""
    total = sum(len(r.outcomes) for r in records)
    if total == 0:
        return Metrics(0.0, 0.0, 0.0, 0.0, 0)
    reached = sum(r.reached for r in records)
    collided = sum(r.collided for r in records)
    timeout = total - reached - collided
    return Metrics(
        success_rate=reached / total,
        collision_rate=collided / total,
        timeout_rate=timeout / total,
        done_time=float(np.mean([r.done_time for r in records])),
        episodes=len(records),
    )


def evaluate_scenario(base_task: EpisodeTask, seeds: list[int],
                      workers: int | None = None) -> tuple[Metrics, list[EpisodeRecord]]:
    """Run one episode per seed and aggregate; deterministic per seed list."""
    from .parallel import parallel_map
    from dataclasses import replace as dc_replace

    tasks = [dc_replace(base_task, config=base_task.config.with_seed(s),
                        action_seed=s) for s in seeds]
    records = parallel_map(run_task, tasks, workers=workers)
    return aggregate(records), records


# ---------------------------------------------------------------------------
# serialization

def episode_to_jsonl(record: EpisodeRecord) -> str:
    header = {
        "schema_version": SCHEMA_VERSION,
        "type": "header",
        "scenario": record.scenario,
        "seed": record.seed,
        "config": config_to_dict(record.config),
        "start_poses": [list(p) for p in record.start_poses],
        "goals": [list(g) for g in record.goals],
        "outcomes": record.outcomes,
        "done_time_s": record.done_time,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for t, step in enumerate(record.steps):
        lines.append(json.dumps({
            "type": "step",
            "t": t,
            "poses": [list(p) for p in step.poses],
            "a_nom": [list(a) for a in step.a_nom],
            "a_star": [list(a) for a in step.a_star],
            "r_g": step.r_goal,
            "r_c": step.r_cbf,
            "min_h": step.min_h,
            "status": step.statuses,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def metrics_csv_text(rows: list[MetricsRow]) -> str:
    out = ["scenario,method,success_rate,collision_rate,done_time_s,episodes"]
    for row in rows:
        m = row.metrics
        out.append(f"{row.scenario},{row.method},{m.success_rate!r},"
                   f"{m.collision_rate!r},{m.done_time!r},{m.episodes}")
    return "\n".join(out) + "\n"


def load_metrics_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricsRow(
                scenario=rec["scenario"],
                method=rec["method"],
                metrics=Metrics(
                    success_rate=float(rec["success_rate"]),
                    collision_rate=float(rec["collision_rate"]),
                    timeout_rate=1.0 - float(rec["success_rate"])
                    - float(rec["collision_rate"]),
                    done_time=float(rec["done_time_s"]),
                    episodes=int(rec["episodes"]),
                ),
            ))
    return rows


def emit_outputs(records: list[EpisodeRecord], rows: list[MetricsRow],
                 out_dir: str | Path) -> dict[str, list[Path]]:
    """Write the metrics CSV, per-episode JSONL logs, and SVG plots.

    The destination is validated before the metrics file is written, so a
    bad destination never leaves a partial metrics file behind.
    """
    from .plots import episode_svg

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValueError(f"output directory {out} is not writable: {exc}") from exc

    written: dict[str, list[Path]] = {"metrics": [], "trajectories": [], "plots": []}
    metrics_path = out / "metrics.csv"
    metrics_path.write_text(metrics_csv_text(rows))
    written["metrics"].append(metrics_path)

    if records:
        traj_dir = out / "trajectories"
        plot_dir = out / "plots"
        traj_dir.mkdir(exist_ok=True)
        plot_dir.mkdir(exist_ok=True)
        for idx, rec in enumerate(records):
            stem = f"ep{idx:04d}_{rec.scenario}_seed{rec.seed}"
            tpath = traj_dir / f"{stem}.jsonl"
            tpath.write_text(episode_to_jsonl(rec))
            written["trajectories"].append(tpath)
            ppath = plot_dir / f"{stem}.svg"
            ppath.write_text(episode_svg(rec))
            written["plots"].append(ppath)
    return written
