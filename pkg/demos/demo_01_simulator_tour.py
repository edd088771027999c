"""
A tour of the highway simulator
===============================

Spawn a four-lane ring road, drive the ego vehicle with a few actions and
look at what the agent sees and earns at each step.
"""

import numpy as np

from highway_dqn import mdp, sim
from highway_dqn.env import EnvConfig, HighwayEnv
from highway_dqn.sim import Action

# a 1000 m ring with regular traffic; vehicle 0 is the controlled ego car
road = sim.RoadConfig(lane_count=4)
traffic = sim.TrafficConfig(density="regular", traffic_speed_range=(20.0, 28.0))
world = sim.spawn_world(road, traffic, n_agents=1, seed=7)
ego = world.vehicle(0)
print(f"{len(world)} vehicles; ego in lane {ego.lane} at {ego.v:.1f} m/s")

# the observation: ego row first, then the four nearest vehicles by |ds|,
# columns (presence, x, y, vx, vy); neighbours are relative to the ego
np.set_printoptions(precision=3, suppress=True)
print(mdp.build_observation(world, 0))

# one policy step is five 0.2 s simulation steps
env = HighwayEnv(EnvConfig(road=road, traffic=traffic))
env.reset(7)
for action in (Action.LANE_RIGHT, Action.FASTER, Action.IDLE, Action.SLOWER):
    out = env.step(action)
    print(f"t={out.info['time']:4.1f}s  {action.name:10s} lane={out.info['lane'][0]} "
          f"speed={out.info['speed']:.1f}  reward={out.reward:.3f}")

# driving flat out into traffic ends the episode with the collision penalty
env.reset(3)
while True:
    out = env.step(Action.FASTER)
    if out.terminated or out.truncated:
        break
print(f"episode ended after {env.steps} steps; collision={out.terminated}, "
      f"pairs={out.info['collisions']}, last reward={out.reward:.3f}")
