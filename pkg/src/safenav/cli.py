"""Command-line entry point.

Subcommands:
    simulate   run episodes with a chosen policy/refiner combo
    train      joint training loop
    evaluate   multi-scenario evaluation suite
    plot       re-emit SVG plots from trajectory logs
    check      run the invariant self-test battery

Exit codes: 0 success, 1 validation error, 2 runtime failure. Every run
writes an effective-config dump beside its outputs; nothing outside --out
is mutated. SAFENAV_THREADS caps internal parallelism.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .cbf import CbfParams
from .harness import (
    EpisodeTask,
    MetricsRow,
    aggregate,
    emit_outputs,
    evaluate_scenario,
    load_metrics_csv,
)
from .policy import PolicyParams, feature_dim, load_policy, save_policy
from .refiner import AlmParams
from .scenarios import (
    ScenarioError,
    build_scenario,
    config_from_file,
    scenario_names,
)
from .training import TrainConfig, save_training_log, train_joint
from .world import WorldParams


class CliError(Exception):
    """Validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise CliError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="safenav",
                     description="Multi-robot navigation with CBF action refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None,
                       help="scenario config file (JSON)")
        p.add_argument("--scenario", type=str, default="sparse_4",
                       help=f"scenario family: {', '.join(scenario_names())}")
        p.add_argument("--episodes", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--refine", choices=["on", "off"], default="on")
        p.add_argument("--model", choices=["static", "flow"], default="flow")
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--policy", type=str, default=None,
                       help="path to a trained policy (.npz); default nominal")

    sim = sub.add_parser("simulate", help="run episodes and write logs/plots")
    common(sim)
    sim.add_argument("--dump-costmaps", action="store_true",
                     help="also write per-step costmap PGM dumps")

    ev = sub.add_parser("evaluate", help="Table-style evaluation suite")
    common(ev)

    tr = sub.add_parser("train", help="joint training loop")
    tr.add_argument("--config", type=str, default=None,
                    help="training config file (JSON, TrainConfig fields)")
    tr.add_argument("--scenario", type=str, default="sparse_4")
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--reward-mode", choices=["cbf", "collision"], default=None)
    tr.add_argument("--out", type=str, default="out")

    pl = sub.add_parser("plot", help="re-emit SVGs from trajectory logs")
    pl.add_argument("logs", nargs="+", help="trajectory .jsonl files")
    pl.add_argument("--out", type=str, default="out")

    ck = sub.add_parser("check", help="run the invariant self-test battery")
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--out", type=str, default="out")
    return parser


def _prepare_out(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}")
    return path


def _dump_effective_config(out: Path, name: str, payload: dict) -> None:
    (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True,
                                       default=_json_default) + "\n")


def _json_default(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _scenario_config(args):
    if args.config is not None:
        return config_from_file(args.config)
    return build_scenario(args.scenario, args.seed)


def _episode_task(args) -> EpisodeTask:
    config = _scenario_config(args)
    policy = "nominal"
    vector = None
    if args.policy is not None:
        params = load_policy(args.policy)
        policy = "mlp"
        vector = params.to_vector()
        if params.feature_dim != feature_dim():
            raise CliError(
                f"policy feature dim {params.feature_dim} does not match "
                f"the featurizer ({feature_dim()})")
    return EpisodeTask(
        config=config,
        world=WorldParams(),
        cbf=CbfParams(),
        alm=AlmParams(),
        refine=args.refine == "on",
        model=args.model,
        policy=policy,
        policy_vector=vector,
        hidden_dim=32,
    )


def _cmd_simulate(args) -> int:
    out = _prepare_out(args.out)
    base = _episode_task(args)
    if args.dump_costmaps:
        dump_dir = out / "costmaps"
        dump_dir.mkdir(exist_ok=True)
        base = dataclasses.replace(base, dump_costmap_dir=str(dump_dir))
    seeds = [args.seed + i for i in range(args.episodes)]
    metrics, records = evaluate_scenario(base, seeds)
    method = _method_label(args)
    rows = [MetricsRow(scenario=base.config.scenario_name, method=method,
                       metrics=metrics)]
    emit_outputs(records, rows, out)
    _dump_effective_config(out, "effective_config.json", {
        "command": "simulate", "task": base, "seeds": seeds, "method": method,
    })
    print(f"simulate: {len(records)} episode(s) of {base.config.scenario_name} "
          f"-> {out}")
    print(f"  success={metrics.success_rate:.3f} "
          f"collision={metrics.collision_rate:.3f} "
          f"done_time={metrics.done_time:.1f}s")
    return 0


def _method_label(args) -> str:
    policy = "mlp" if args.policy else "nominal"
    if args.refine == "on":
        return f"{policy}+refine({args.model})"
    return policy


def _cmd_evaluate(args) -> int:
    out = _prepare_out(args.out)
    base = _episode_task(args)
    seeds = [args.seed + i for i in range(args.episodes)]
    metrics, records = evaluate_scenario(base, seeds)
    method = _method_label(args)
    rows = [MetricsRow(scenario=base.config.scenario_name, method=method,
                       metrics=metrics)]
    emit_outputs(records, rows, out)
    _dump_effective_config(out, "effective_config.json", {
        "command": "evaluate", "task": base, "seeds": seeds, "method": method,
    })
    print(f"evaluate: {base.config.scenario_name} method={method} "
          f"episodes={len(records)}")
    print(f"  success={metrics.success_rate:.4f} "
          f"collision={metrics.collision_rate:.4f} "
          f"timeout={metrics.timeout_rate:.4f} "
          f"done_time={metrics.done_time:.2f}s")
    return 0


def _cmd_train(args) -> int:
    out = _prepare_out(args.out)
    overrides = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"training config file not found: {path}")
        try:
            overrides = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"training config {path} is not valid JSON: {exc}")
        unknown = set(overrides) - {f.name for f in dataclasses.fields(TrainConfig)}
        if unknown:
            raise CliError(f"unknown training config keys: {sorted(unknown)}")
    if args.scenario is not None:
        overrides.setdefault("scenario", args.scenario)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.reward_mode is not None:
        overrides["reward_mode"] = args.reward_mode
    overrides["seed"] = args.seed
    try:
        cfg = TrainConfig(**overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid training config: {exc}")

    _dump_effective_config(out, "effective_config.json",
                           {"command": "train", "config": cfg})

    def progress(row):
        print(f"epoch {row.epoch:3d} model={row.model:6s} "
              f"success={row.success_rate:.3f} collision={row.collision_rate:.3f} "
              f"return={row.mean_return:.2f} pred_err={row.pred_error:.3f}")

    result = train_joint(cfg, progress=progress)
    save_policy(result.params, out / "policy.npz")
    save_training_log(result.log, out / "training_log.csv")
    result.dataset.save(out / "replay.bin")
    print(f"train: best_return={result.best_return:.3f} -> {out}/policy.npz")
    return 0


def _cmd_plot(args) -> int:
    from .plots import svg_from_jsonl

    out = _prepare_out(args.out)
    for log in args.logs:
        path = Path(log)
        if not path.exists():
            raise CliError(f"trajectory log not found: {path}")
        svg = svg_from_jsonl(path.read_text())
        target = out / (path.stem + ".svg")
        target.write_text(svg)
        print(f"plot: {path} -> {target}")
    return 0


def _cmd_check(args) -> int:
    from .selfcheck import run_battery

    out = _prepare_out(args.out)
    results = run_battery(seed=args.seed)
    failures = 0
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    _dump_effective_config(out, "check_results.json", {
        "command": "check",
        "results": [{"name": n, "ok": ok, "detail": d} for n, ok, d in results],
    })
    print(f"check: {len(results) - failures}/{len(results)} passed")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    handlers = {
        "simulate": _cmd_simulate,
        "evaluate": _cmd_evaluate,
        "train": _cmd_train,
        "plot": _cmd_plot,
        "check": _cmd_check,
    }
    try:
        return handlers[args.command](args)
    except (CliError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
