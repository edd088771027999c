"""Observation, reward and termination of the highway driving task."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .sim import SPEED_MAX, SPEED_MIN, Action, WorldState, collisions_involving, detect_collisions

N_ROWS = 5
N_FEATURES = 5  # presence, x, y, vx, vy
OBS_SIZE = N_ROWS * N_FEATURES

POSITION_SCALE = 100.0  # m
VIEW_RANGE = 100.0  # m
EPISODE_SECONDS = 50.0


@dataclass(frozen=True)
class RewardConstants:
    right_lane: float = 0.1
    high_speed: float = 0.4
    lane_change: float = 0.0
    collision_penalty: float = -1.0
    v_min: float = SPEED_MIN
    v_max: float = SPEED_MAX

    def __post_init__(self):
        if self.right_lane < 0 or self.high_speed < 0:
            raise ValueError("right_lane and high_speed rewards must be >= 0")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def build_observation(world: WorldState, agent_id: int, noise_sigma: float = 0.0) -> np.ndarray:
    """5x5 kinematics matrix for one agent.

    Row 0 is the ego vehicle in absolute terms
    ``(1, s/100, y/road_width, v/v_max, v_lat/v_max)``; rows 1-4 hold the
    nearest vehicles within 100 m (by longitudinal distance) relative to
    the ego. Missing neighbours leave zero rows. Gaussian noise is added to
    every non-presence entry of a present row, then everything is clipped
    to [-1, 1].
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    idx = world.index_of(agent_id)
    if not world.controlled[idx]:
        raise KeyError(f"vehicle {agent_id} is not a controlled agent")
    road = world.road
    y = world.y
    v_lat = world.lateral_velocity()
    y_scale = road.width

    obs = np.zeros((N_ROWS, N_FEATURES))
    obs[0] = (1.0, world.s[idx] / POSITION_SCALE, y[idx] / y_scale,
              world.v[idx] / SPEED_MAX, v_lat[idx] / SPEED_MAX)

    L = road.length
    ds = np.mod(world.s - world.s[idx] + 0.5 * L, L) - 0.5 * L
    others = np.flatnonzero((np.arange(len(world)) != idx) & (np.abs(ds) <= VIEW_RANGE))
    if others.size:
        # ties on |ds| resolve by id
        order = np.lexsort((world.ids[others], np.abs(ds[others])))
        near = others[order][: N_ROWS - 1]
        k = near.size
        obs[1:1 + k, 0] = 1.0
        obs[1:1 + k, 1] = ds[near] / POSITION_SCALE
        obs[1:1 + k, 2] = (y[near] - y[idx]) / y_scale
        obs[1:1 + k, 3] = (world.v[near] - world.v[idx]) / SPEED_MAX
        obs[1:1 + k, 4] = (v_lat[near] - v_lat[idx]) / SPEED_MAX

    if noise_sigma > 0:
        present = obs[:, :1] > 0
        noise = world.rng.normal(0.0, noise_sigma, size=(N_ROWS, N_FEATURES - 1))
        obs[:, 1:] += np.where(present, noise, 0.0)
    return np.clip(obs, -1.0, 1.0)


def compute_reward(world_after: WorldState, agent_id: int, action: int,
                   constants: RewardConstants = RewardConstants(),
                   collided: bool = False) -> float:
    vehicle = world_after.vehicle(agent_id)
    lanes = world_after.road.lane_count
    lane_frac = 1.0 if lanes == 1 else vehicle.lane / (lanes - 1)
    speed_frac = (vehicle.v - constants.v_min) / (constants.v_max - constants.v_min)
    speed_frac = min(max(speed_frac, 0.0), 1.0)
    reward = constants.right_lane * lane_frac + constants.high_speed * speed_frac
    if int(action) in (Action.LANE_LEFT, Action.LANE_RIGHT):
        reward += constants.lane_change
    if collided:
        reward += constants.collision_penalty
    return float(reward)


def check_termination(world: WorldState, agent_id: int, collisions=None) -> Tuple[bool, bool]:
    """Returns ``(terminated, truncated)``: collision, time cap."""
    if collisions is None:
        collisions = detect_collisions(world)
    terminated = collisions_involving(collisions, agent_id)
    truncated = world.time >= EPISODE_SECONDS
    return terminated, truncated


def concat_multi_observations(observations: Sequence[np.ndarray]) -> np.ndarray:
    if len(observations) == 0:
        raise ValueError("need at least one observation")
    for obs in observations:
        if np.shape(obs) != (N_ROWS, N_FEATURES):
            raise ValueError(f"observation must be {N_ROWS}x{N_FEATURES}, got {np.shape(obs)}")
    return np.concatenate([np.asarray(obs, dtype=float).ravel() for obs in observations])


def split_multi_observation(flat: np.ndarray) -> list:
    flat = np.asarray(flat)
    if flat.ndim != 1 or flat.size % OBS_SIZE:
        raise ValueError(f"length must be a multiple of {OBS_SIZE}")
    return [chunk.reshape(N_ROWS, N_FEATURES) for chunk in np.split(flat, flat.size // OBS_SIZE)]


def mean_multi_reward(rewards: Sequence[float]) -> float:
    if len(rewards) == 0:
        raise ValueError("need at least one reward")
    return float(np.mean(rewards))
