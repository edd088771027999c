"""Flat ``section.key = value`` run configuration.

Values are JSON literals (``0.95``, ``true``, ``null``, ``[20, 30]``,
``"dense"``); a bare word such as ``dense`` is read as a string. Blank
lines and lines starting with ``#`` are ignored. Every key is optional.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

from . import sim
from .dqn import AgentConfig, EpsilonSchedule
from .env import EnvConfig
from .evaluation import DENSITIES, find_preset, standard_suite
from .mdp import RewardConstants

OUTPUT_DIR_ENV = "HWDQN_OUTPUT_DIR"
_BARE_WORD = re.compile(r"^[A-Za-z_][A-Za-z0-9_./-]*$")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunSection:
    total_steps: int = 20000
    seed: int = 0
    output_dir: str = "runs"


@dataclass(frozen=True)
class EvalSection:
    suite: Tuple[str, ...] = ("standard",)
    episodes_per_preset: int = 100
    baseline_seed: Optional[int] = None  # None: use run.seed


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunSection = field(default_factory=RunSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def suite(self):
        """Scenario presets named by ``eval.suite``."""
        presets = []
        for name in self.eval.suite:
            if name == "standard":
                presets.extend(standard_suite())
            elif name in DENSITIES:
                presets.extend(standard_suite((name,)))
            else:
                presets.append(find_preset(name))
        return presets

    @property
    def baseline_seed(self) -> int:
        return self.run.seed if self.eval.baseline_seed is None else self.eval.baseline_seed


# value checkers ------------------------------------------------------------

def _int(key, v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    return v


def _opt_int(key, v):
    return None if v is None else _int(key, v)


def _float(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    return float(v)


def _opt_float(key, v):
    return None if v is None else _float(key, v)


def _str(key, v):
    if not isinstance(v, str):
        raise ConfigError(f"{key}: expected a string, got {v!r}")
    return v


def _range(key, v):
    if not isinstance(v, list) or len(v) != 2:
        raise ConfigError(f"{key}: expected a two-element list [low, high], got {v!r}")
    return tuple(_float(key, x) for x in v)


def _int_tuple(key, v):
    if not isinstance(v, list):
        raise ConfigError(f"{key}: expected a list of integers, got {v!r}")
    return tuple(_int(key, x) for x in v)


def _str_tuple(key, v):
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key}: expected a non-empty list of names, got {v!r}")
    return tuple(_str(key, x) for x in v)


# key -> (checker, getter from RunConfig)
_KEYS: Dict[str, Tuple[Callable, Callable[[RunConfig], Any]]] = {
    "env.lane_count": (_int, lambda c: c.env.road.lane_count),
    "env.lane_width": (_float, lambda c: c.env.road.lane_width),
    "env.length": (_float, lambda c: c.env.road.length),
    "env.density": (_str, lambda c: c.env.traffic.density),
    "env.traffic_speed_range": (_range, lambda c: c.env.traffic.traffic_speed_range),
    "env.min_initial_gap": (_float, lambda c: c.env.traffic.min_initial_gap),
    "env.noise_sigma": (_float, lambda c: c.env.noise_sigma),
    "env.n_agents": (_int, lambda c: c.env.n_agents),
    "reward.right_lane": (_float, lambda c: c.env.reward.right_lane),
    "reward.high_speed": (_float, lambda c: c.env.reward.high_speed),
    "reward.lane_change": (_float, lambda c: c.env.reward.lane_change),
    "reward.collision_penalty": (_float, lambda c: c.env.reward.collision_penalty),
    "reward.v_min": (_float, lambda c: c.env.reward.v_min),
    "reward.v_max": (_float, lambda c: c.env.reward.v_max),
    "agent.gamma": (_float, lambda c: c.agent.gamma),
    "agent.batch_size": (_int, lambda c: c.agent.batch_size),
    "agent.learning_rate": (_float, lambda c: c.agent.learning_rate),
    "agent.replay_capacity": (_int, lambda c: c.agent.replay_capacity),
    "agent.warmup_steps": (_int, lambda c: c.agent.warmup_steps),
    "agent.train_every": (_int, lambda c: c.agent.train_every),
    "agent.target_sync_interval": (_opt_int, lambda c: c.agent.target_sync_interval),
    "agent.grad_clip": (_opt_float, lambda c: c.agent.grad_clip),
    "agent.hidden": (_int_tuple, lambda c: c.agent.hidden),
    "agent.epsilon_start": (_float, lambda c: c.agent.epsilon.start),
    "agent.epsilon_end": (_float, lambda c: c.agent.epsilon.end),
    "agent.epsilon_decay_steps": (_int, lambda c: c.agent.epsilon.decay_steps),
    "run.total_steps": (_int, lambda c: c.run.total_steps),
    "run.seed": (_int, lambda c: c.run.seed),
    "run.output_dir": (_str, lambda c: c.run.output_dir),
    "eval.suite": (_str_tuple, lambda c: c.eval.suite),
    "eval.episodes_per_preset": (_int, lambda c: c.eval.episodes_per_preset),
    "eval.baseline_seed": (_opt_int, lambda c: c.eval.baseline_seed),
}
KNOWN_KEYS = tuple(_KEYS)
_COMPOSITE = {"road", "traffic", "reward", "epsilon"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if _BARE_WORD.match(text):
            return text
        raise


def _section(values: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def _build(values: Dict[str, Any]) -> RunConfig:
    """Assemble a RunConfig from checked values, mapping constructor errors to keys."""
    def make(prefix, factory, **kw):
        try:
            return factory(**kw)
        except (ValueError, TypeError) as exc:
            named = [prefix + k for k in kw if k not in _COMPOSITE]
            keys = ", ".join(named) or prefix.rstrip(".")
            raise ConfigError(f"{keys}: {exc}") from None

    env = _section(values, "env.")
    road = make("env.", sim.RoadConfig, **{k: env[k] for k in ("lane_count", "lane_width", "length")
                                            if k in env})
    traffic_kw = {k: env[k] for k in ("density", "traffic_speed_range", "min_initial_gap") if k in env}
    traffic = make("env.", sim.TrafficConfig, **traffic_kw)
    reward = make("reward.", RewardConstants, **_section(values, "reward."))
    env_cfg = make("env.", EnvConfig, road=road, traffic=traffic, reward=reward,
                   **{k: env[k] for k in ("noise_sigma", "n_agents") if k in env})

    agent = _section(values, "agent.")
    eps_kw = {name: agent.pop("epsilon_" + name) for name in ("start", "end", "decay_steps")
              if "epsilon_" + name in agent}
    epsilon = make("agent.epsilon_", EpsilonSchedule, **eps_kw)
    agent_cfg = make("agent.", AgentConfig, epsilon=epsilon, **agent)

    run = make("run.", RunSection, **_section(values, "run."))
    if run.total_steps < agent_cfg.warmup_steps:
        raise ConfigError("run.total_steps: must be >= agent.warmup_steps")
    ev = make("eval.", EvalSection, **_section(values, "eval."))
    if ev.episodes_per_preset < 1:
        raise ConfigError("eval.episodes_per_preset: must be >= 1")
    cfg = RunConfig(env_cfg, agent_cfg, run, ev)
    try:
        cfg.suite()
    except KeyError as exc:
        raise ConfigError(f"eval.suite: {exc.args[0]}") from None
    return cfg


def parse_config_text(text: str) -> RunConfig:
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _KEYS:
            raise ConfigError(f"{key}: unknown key (line {lineno})")
        if key in values:
            raise ConfigError(f"{key}: given more than once (line {lineno})")
        try:
            parsed = _parse_value(value)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse value {value!r} (line {lineno})") from None
        values[key] = _KEYS[key][0](key, parsed)
    return _build(values)


def parse_config(path) -> RunConfig:
    """Read and validate a config file. I/O errors propagate as OSError."""
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _to_json(value):
    if isinstance(value, tuple):
        value = list(value)
    return json.dumps(value)


def emit_config(cfg: RunConfig) -> str:
    """Every key with its value, one per line; ``parse_config_text`` inverts it."""
    return "".join(f"{key} = {_to_json(get(cfg))}\n" for key, (_, get) in _KEYS.items())


def with_output_dir(cfg: RunConfig, output_dir: str) -> RunConfig:
    return replace(cfg, run=replace(cfg.run, output_dir=output_dir))

