"""Gym-style episodic wrapper around the simulator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mdp, sim
from .mdp import RewardConstants, StepOutcome

SUBSTEPS = 5  # 1 Hz policy over 0.2 s simulation steps


@dataclass(frozen=True)
class EnvConfig:
    road: sim.RoadConfig = field(default_factory=sim.RoadConfig)
    traffic: sim.TrafficConfig = field(default_factory=sim.TrafficConfig)
    n_agents: int = 1
    noise_sigma: float = 0.0
    reward: RewardConstants = field(default_factory=RewardConstants)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def obs_dim(self) -> int:
        return mdp.OBS_SIZE * self.n_agents


class HighwayEnv:
    """Multi-lane highway with ``n_agents`` controlled vehicles.

    All agents receive the same discrete action; the observation is the
    concatenation of the agents' 5x5 matrices in id order and the reward
    is the mean of their individual rewards.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.world = None
        self.steps = 0

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        self.world = sim.spawn_world(cfg.road, cfg.traffic, cfg.n_agents, seed)
        self.steps = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        world = self.world
        return mdp.concat_multi_observations(
            [mdp.build_observation(world, aid, self.config.noise_sigma)
             for aid in world.agent_ids])

    def step(self, action: int) -> StepOutcome:
        if self.world is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.config
        world = self.world
        agents = world.agent_ids
        for aid in agents:
            world = sim.apply_agent_action(world, aid, action)

        collided = set()
        pairs = set()
        for _ in range(SUBSTEPS):
            world = sim.step_world(world, sim.DT)
            pairs = sim.collisions_of(world, agents)
            collided = {aid for aid in agents if sim.collisions_involving(pairs, aid)}
            if collided:
                break
        self.world = world
        self.steps += 1

        rewards = [mdp.compute_reward(world, aid, action, cfg.reward, aid in collided)
                   for aid in agents]
        terminated = bool(collided)
        truncated = world.time >= mdp.EPISODE_SECONDS
        speeds = [float(world.v[world.index_of(aid)]) for aid in agents]
        info = {
            "speed": float(np.mean(speeds)),
            "lane": [int(world.lane[world.index_of(aid)]) for aid in agents],
            "collision": terminated,
            "collisions": sorted(tuple(sorted(p)) for p in pairs),
            "time": world.time,
        }
        return StepOutcome(self.observe(), mdp.mean_multi_reward(rewards),
                           terminated, truncated, info)
