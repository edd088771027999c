"""Scenario presets, episode metrics and the trained-vs-untrained comparison."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import nn
from .dqn import greedy_action
from .env import EnvConfig, HighwayEnv
from .mdp import EPISODE_SECONDS
from .sim import N_ACTIONS, RoadConfig, TrafficConfig

DENSITIES = ("none", "regular", "dense")
WEATHER_NOISE = {"soft": 0.0, "hard": 0.02}

# (lane_count, traffic speed range, weather) per base preset. Traffic never
# changes lane, so each lane settles at its slowest vehicle's speed; keeping
# traffic inside the ego's own 20-30 m/s band means a lane never settles below
# the slowest speed the ego can hold.
_BASE_PRESETS = {
    "preset01": (2, (20.0, 26.0), "soft"),
    "preset02": (2, (20.0, 28.0), "hard"),
    "preset03": (3, (20.0, 30.0), "hard"),
    "preset04": (4, (21.0, 29.0), "soft"),
    "preset05": (4, (20.0, 28.0), "hard"),
    "preset06": (5, (22.0, 30.0), "soft"),
    "preset07": (3, (20.0, 26.0), "soft"),
    "preset08": (5, (21.0, 29.0), "hard"),
}

CSV_HEADER = ("preset", "policy", "episodes", "collision_rate", "mean_speed",
              "mean_timesteps", "mean_total_reward")
TOTAL = "total"

Policy = Callable[[np.ndarray], int]


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    lane_count: int
    traffic: TrafficConfig
    noise_sigma: float = 0.0
    seed_base: int = 0

    @property
    def group(self) -> str:
        """Base preset name without the traffic suffix (one column of the table)."""
        return self.name.split("/")[0]

    def env_config(self, n_agents: int = 1) -> EnvConfig:
        return EnvConfig(road=RoadConfig(lane_count=self.lane_count), traffic=self.traffic,
                         n_agents=n_agents, noise_sigma=self.noise_sigma)


def standard_suite(densities: Sequence[str] = DENSITIES) -> List[ScenarioPreset]:
    """The eight base presets crossed with the traffic densities."""
    suite = []
    for k, (name, (lanes, speeds, weather)) in enumerate(_BASE_PRESETS.items()):
        for j, density in enumerate(densities):
            suite.append(ScenarioPreset(
                name=f"{name}/{density}", lane_count=lanes,
                traffic=TrafficConfig(density=density, traffic_speed_range=speeds),
                noise_sigma=WEATHER_NOISE[weather],
                seed_base=100_000 * (k + 1) + 10_000 * DENSITIES.index(density)))
    return suite


def find_preset(name: str, suite: Sequence[ScenarioPreset] = None) -> ScenarioPreset:
    for preset in suite if suite is not None else standard_suite():
        if preset.name == name:
            return preset
    raise KeyError(f"unknown preset {name!r}")


def greedy_policy(params: nn.ParameterSet) -> Policy:
    return lambda obs: greedy_action(nn.forward(params, obs))


def fixed_policy(action: int) -> Policy:
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action must be in 0..{N_ACTIONS - 1}")
    return lambda obs: action


@dataclass(frozen=True)
class EpisodeMetrics:
    collided: bool
    mean_speed: float
    timesteps: int
    total_reward: float


def run_episode(policy: Policy, preset: ScenarioPreset, episode_seed: int,
                n_agents: int = 1, on_step=None) -> EpisodeMetrics:
    """Roll out one greedy episode.

    ``timesteps`` counts policy steps finished without a collision.
    ``on_step(step, action, outcome, env)`` is called after every step.
    """
    env = HighwayEnv(preset.env_config(n_agents))
    obs = env.reset(episode_seed)
    speeds, total = [], 0.0
    collided = False
    while True:
        action = int(policy(obs))
        out = env.step(action)
        if on_step is not None:
            on_step(env.steps, action, out, env)
        speeds.append(out.info["speed"])
        total += out.reward
        obs = out.observation
        if out.terminated:
            collided = True
        if out.terminated or out.truncated:
            break
    timesteps = env.steps - 1 if collided else env.steps
    return EpisodeMetrics(collided, float(np.mean(speeds)), timesteps, float(total))


@dataclass(frozen=True)
class CellSummary:
    preset: str
    policy: str
    episodes: int
    collision_rate: float
    mean_speed: float
    mean_timesteps: float
    mean_total_reward: float

    @classmethod
    def from_metrics(cls, preset: str, policy: str, metrics: Sequence[EpisodeMetrics]):
        if not metrics:
            raise ValueError("cannot summarise zero episodes")
        return cls(preset, policy, len(metrics),
                   float(np.mean([m.collided for m in metrics])),
                   float(np.mean([m.mean_speed for m in metrics])),
                   float(np.mean([m.timesteps for m in metrics])),
                   float(np.mean([m.total_reward for m in metrics])))

    def as_row(self) -> tuple:
        return tuple(asdict(self).values())


@dataclass(frozen=True)
class EpisodeRecord:
    preset: str
    group: str
    policy: str
    seed: int
    metrics: EpisodeMetrics


@dataclass
class AggregateReport:
    cells: List[CellSummary]
    overall: List[CellSummary]
    episodes: List[EpisodeRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[EpisodeRecord]) -> "AggregateReport":
        by_cell: Dict[tuple, list] = defaultdict(list)
        by_policy: Dict[str, list] = defaultdict(list)
        for rec in records:
            by_cell[(rec.preset, rec.policy)].append(rec.metrics)
            by_policy[rec.policy].append(rec.metrics)
        cells = [CellSummary.from_metrics(p, tag, ms) for (p, tag), ms in by_cell.items()]
        overall = [CellSummary.from_metrics(TOTAL, tag, ms) for tag, ms in by_policy.items()]
        return cls(cells, overall, list(records))

    @property
    def rows(self) -> List[CellSummary]:
        return self.cells + self.overall

    def total(self, policy: str) -> CellSummary:
        for cell in self.overall:
            if cell.policy == policy:
                return cell
        raise KeyError(policy)

    def cell(self, preset: str, policy: str) -> CellSummary:
        for cell in self.cells:
            if cell.preset == preset and cell.policy == policy:
                return cell
        raise KeyError((preset, policy))

    def grouped(self) -> List[CellSummary]:
        """Cells pooled per base preset (traffic densities merged)."""
        pooled: Dict[tuple, list] = defaultdict(list)
        for rec in self.episodes:
            pooled[(rec.group, rec.policy)].append(rec.metrics)
        return [CellSummary.from_metrics(g, tag, ms) for (g, tag), ms in pooled.items()]


def evaluate_agent(policy: Policy, suite: Sequence[ScenarioPreset], episodes_per_preset: int,
                   tag: str = "S", n_agents: int = 1) -> AggregateReport:
    if not suite:
        raise ValueError("suite is empty")
    if episodes_per_preset < 1:
        raise ValueError("episodes_per_preset must be >= 1")
    records = []
    for preset in suite:
        for i in range(episodes_per_preset):
            seed = preset.seed_base + i
            records.append(EpisodeRecord(preset.name, preset.group, tag, seed,
                                         run_episode(policy, preset, seed, n_agents)))
    return AggregateReport.from_records(records)


def compare_standard_untrained(trained: nn.ParameterSet, spec: nn.NetworkSpec,
                               suite: Sequence[ScenarioPreset], episodes_per_preset: int,
                               seed: int, n_agents: int = 1) -> AggregateReport:
    """Evaluate trained weights (S) and ``init_params(spec, seed)`` (U) on the same episodes."""
    if trained.spec != spec:
        raise nn.ShapeMismatchError(f"trained weights have {trained.spec}, expected {spec}")
    untrained = nn.init_params(spec, seed)
    s = evaluate_agent(greedy_policy(trained), suite, episodes_per_preset, "S", n_agents)
    u = evaluate_agent(greedy_policy(untrained), suite, episodes_per_preset, "U", n_agents)
    return AggregateReport.from_records(s.episodes + u.episodes)


def format_table(report: AggregateReport) -> str:
    """Metric x policy rows, one column per base preset plus the total."""
    grouped = {(c.preset, c.policy): c for c in report.grouped()}
    groups = sorted({c.preset for c in grouped.values()})
    tags = sorted({c.policy for c in report.overall})
    totals = {c.policy: c for c in report.overall}
    metrics = [("Collision rate", "collision_rate", "{:.2f}"),
               ("Speed (m/s)", "mean_speed", "{:.2f}"),
               ("Timesteps", "mean_timesteps", "{:.1f}"),
               ("Total reward", "mean_total_reward", "{:.2f}")]
    header = ["Metric", ""] + groups + [TOTAL]
    lines = [header]
    for label, attr, fmt in metrics:
        for i, tag in enumerate(tags):
            row = [label if i == 0 else "", tag]
            row += [fmt.format(getattr(grouped[(g, tag)], attr)) if (g, tag) in grouped else "-"
                    for g in groups]
            row.append(fmt.format(getattr(totals[tag], attr)))
            lines.append(row)
    widths = [max(len(r[k]) for r in lines) for k in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
                     for r in lines) + "\n"


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        if isinstance(data, str):
            data = data.encode("utf-8")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_to_text(report: AggregateReport, fmt: str) -> str:
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for c in report.rows:
            writer.writerow([c.preset, c.policy, c.episodes] +
                            [f"{x:.4f}" for x in c.as_row()[3:]])
        return out.getvalue()
    if fmt == "json":
        return json.dumps({"rows": [asdict(c) for c in report.rows]}, indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r} (expected 'csv' or 'json')")


def export_report(report: AggregateReport, path, fmt: str = "csv") -> None:
    text = report_to_text(report, fmt)
    atomic_write(path, text)


def _split_rows(rows: List[CellSummary]) -> AggregateReport:
    return AggregateReport([r for r in rows if r.preset != TOTAL],
                           [r for r in rows if r.preset == TOTAL])


def parse_report(text: str, fmt: str = "csv") -> AggregateReport:
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected report header {header}")
        rows = [CellSummary(r[0], r[1], int(r[2]), *map(float, r[3:])) for r in reader if r]
        return _split_rows(rows)
    if fmt == "json":
        return _split_rows([CellSummary(**row) for row in json.loads(text)["rows"]])
    raise ValueError(f"unknown report format {fmt!r} (expected 'csv' or 'json')")


def read_report(path, fmt: str = "csv") -> AggregateReport:
    with open(path, newline="") as fh:
        return parse_report(fh.read(), fmt)


def episode_bounds_ok(m: EpisodeMetrics) -> bool:
    return 0 <= m.timesteps <= int(EPISODE_SECONDS) and np.isfinite(m.total_reward)
