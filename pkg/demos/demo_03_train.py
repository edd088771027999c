"""
Training a DQN agent
====================

A short run of the training loop: epsilon-greedy exploration, a replay
memory, and one gradient step per environment step once the memory holds
more than the warm-up count. Pass a step count to train longer.
"""

import sys

import numpy as np

from highway_dqn import nn
from highway_dqn.dqn import AgentConfig, run_training
from highway_dqn.evaluation import find_preset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
env_config = find_preset("preset03/dense").env_config()
agent = AgentConfig(batch_size=64, target_sync_interval=500)

params, curve = run_training(env_config, agent, total_steps=steps, seed=0,
                             progress=lambda p: p.episode % 20 == 0 and print(
                                 f"step {p.step:5d}  episode {p.episode:3d}  mean reward {p.mean_100:.2f}"))

rewards = curve.episode_rewards
print(f"{len(rewards)} episodes; first 10 mean {np.mean(rewards[:10]):.2f}, "
      f"last 10 mean {np.mean(rewards[-10:]):.2f}")

with open("demo_weights.bin", "wb") as fh:
    fh.write(nn.serialize_params(params))
print("weights written to demo_weights.bin")
