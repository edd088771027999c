"""Command-line entry point: train, evaluate, compare, rollout, inspect-weights.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 weights
shape or format error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import nn, sim
from .config import OUTPUT_DIR_ENV, ConfigError, RunConfig, emit_config, parse_config, with_output_dir
from .dqn import run_training
from .env import HighwayEnv
from .evaluation import (atomic_write, compare_standard_untrained, evaluate_agent, find_preset,
                         format_table, greedy_policy, report_to_text)
from .sim import N_ACTIONS

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4

WEIGHTS_FILE = "weights.bin"
CURVE_FILE = "learning_curve.csv"
CONFIG_ECHO = "config.cfg"


def _load_config(path) -> RunConfig:
    cfg = parse_config(path)
    override = os.environ.get(OUTPUT_DIR_ENV)
    return with_output_dir(cfg, override) if override else cfg


def _output_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.run.output_dir, exist_ok=True)
    return cfg.run.output_dir


def _write_outputs(cfg: RunConfig, files: dict) -> None:
    """Write the config echo and ``files`` (name -> str/bytes) under the output dir."""
    out = _output_dir(cfg)
    for name, data in {CONFIG_ECHO: emit_config(cfg), **files}.items():
        atomic_write(os.path.join(out, name), data)
        print(os.path.join(out, name))


def load_weights(path) -> nn.ParameterSet:
    with open(path, "rb") as fh:
        return nn.deserialize_params(fh.read())


def _checked_weights(path, cfg: RunConfig) -> nn.ParameterSet:
    params = load_weights(path)
    spec = params.spec
    if spec.input_dim != cfg.env.obs_dim or spec.output_dim != N_ACTIONS:
        raise nn.ShapeMismatchError(
            f"weights map {spec.input_dim} -> {spec.output_dim}, config needs "
            f"{cfg.env.obs_dim} -> {N_ACTIONS}")
    return params


def cmd_train(args) -> int:
    cfg = _load_config(args.config)

    def progress(point):
        if point.episode % 50 == 0:
            print(f"step {point.step:6d}  episode {point.episode:4d}  "
                  f"mean_100 {point.mean_100:.3f}", file=sys.stderr)

    params, curve = run_training(cfg.env, cfg.agent, cfg.run.total_steps, cfg.run.seed, progress)
    _write_outputs(cfg, {WEIGHTS_FILE: nn.serialize_params(params), CURVE_FILE: curve.to_csv()})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    params = _checked_weights(args.weights, cfg)
    report = evaluate_agent(greedy_policy(params), cfg.suite(), cfg.eval.episodes_per_preset,
                            "S", cfg.env.n_agents)
    _write_outputs(cfg, {f"evaluation.{args.format}": report_to_text(report, args.format)})
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    params = _checked_weights(args.weights, cfg)
    spec = nn.NetworkSpec(cfg.env.obs_dim, cfg.agent.hidden, N_ACTIONS)
    report = compare_standard_untrained(params, spec, cfg.suite(), cfg.eval.episodes_per_preset,
                                        cfg.baseline_seed, cfg.env.n_agents)
    table = format_table(report)
    _write_outputs(cfg, {f"comparison.{args.format}": report_to_text(report, args.format),
                         "comparison_table.txt": table})
    print(table, end="")
    return EXIT_OK


def _agent_states(world) -> list:
    states = []
    for aid in world.agent_ids:
        v = world.vehicle(aid)
        states.append({"id": aid, "lane": v.lane, "target_lane": v.target_lane,
                       "s": v.s, "y": float(world.y[world.index_of(aid)]),
                       "v": v.v, "target_speed": v.target_speed})
    return states


def rollout_records(params: nn.ParameterSet, preset, seed: int, n_agents: int = 1):
    """One greedy episode as a list of dicts: the initial state, then one per step."""
    env = HighwayEnv(preset.env_config(n_agents))
    obs = env.reset(seed)
    world = env.world
    pairs = sim.collisions_of(world, world.agent_ids)
    records = [{"step": 0, "time": world.time, "action": None, "reward": None,
                "ego": _agent_states(world),
                "collisions": sorted(list(sorted(p)) for p in pairs)}]
    policy = greedy_policy(params)
    while True:
        action = int(policy(obs))
        out = env.step(action)
        obs = out.observation
        records.append({"step": env.steps, "time": out.info["time"], "action": action,
                        "reward": out.reward, "ego": _agent_states(env.world),
                        "collisions": [list(p) for p in out.info["collisions"]]})
        if out.terminated or out.truncated:
            return records


def cmd_rollout(args) -> int:
    cfg = _load_config(args.config)
    params = _checked_weights(args.weights, cfg)
    try:
        preset = find_preset(args.preset, cfg.suite())
    except KeyError:
        raise ConfigError(f"--preset: unknown preset {args.preset!r}") from None
    records = rollout_records(params, preset, args.seed, cfg.env.n_agents)
    text = "".join(json.dumps(r) + "\n" for r in records)
    name = f"rollout_{preset.name.replace('/', '_')}_seed{args.seed}.jsonl"
    _write_outputs(cfg, {name: text})
    return EXIT_OK


def cmd_inspect(args) -> int:
    params = load_weights(args.path)
    print(f"format version {params.version}")
    print("layers " + " -> ".join(str(d) for d in params.spec.dims))
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        print(f"layer {k}: W {w.shape[0]}x{w.shape[1]} |W|={np.linalg.norm(w):.6g}  "
              f"b {b.shape[0]} |b|={np.linalg.norm(b):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="highway-dqn",
        description=f"Deep Q-learning on a kinematic highway. Outputs go to run.output_dir "
                    f"unless {OUTPUT_DIR_ENV} is set.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a Q-network and write weights plus learning curve")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("evaluate", cmd_evaluate, "evaluate weights on the preset suite"),
                             ("compare", cmd_compare, "trained (S) vs untrained (U) comparison")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--weights", required=True)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.set_defaults(func=func)

    p = sub.add_parser("rollout", help="write one greedy episode as JSON lines")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--preset", required=True, help='e.g. "preset01/none"')
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("inspect-weights", help="print network shape, version and layer norms")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except nn.WeightsFormatError as exc:
        print(f"weights error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
