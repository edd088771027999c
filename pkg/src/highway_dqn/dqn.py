"""Deep Q-learning with experience replay and epsilon-greedy exploration."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import nn
from .env import EnvConfig, HighwayEnv
from .sim import N_ACTIONS


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class InsufficientSamplesError(ValueError):
    pass


@dataclass
class TransitionBatch:
    """Column-wise minibatch; indexes and iterates as a list of Transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    indices: Optional[np.ndarray] = None

    @classmethod
    def from_transitions(cls, transitions) -> "TransitionBatch":
        return cls(
            states=np.array([t.state for t in transitions], dtype=np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.array([t.next_state for t in transitions], dtype=np.float64),
            dones=np.array([t.done for t in transitions], dtype=bool))

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


class ReplayBuffer:
    """Fixed-capacity ring buffer; once full, the oldest transition is overwritten."""

    def __init__(self, capacity: int = 15000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.cursor = 0
        self.size = 0
        self._states = None

    def __len__(self):
        return self.size

    def _allocate(self, dim):
        n = self.capacity
        self._states = np.zeros((n, dim))
        self._next_states = np.zeros((n, dim))
        self._actions = np.zeros(n, dtype=np.int64)
        self._rewards = np.zeros(n)
        self._dones = np.zeros(n, dtype=bool)

    def push(self, t: Transition) -> None:
        state = np.asarray(t.state, dtype=np.float64).ravel()
        next_state = np.asarray(t.next_state, dtype=np.float64).ravel()
        if self._states is None:
            self._allocate(state.size)
        dim = self._states.shape[1]
        if state.size != dim or next_state.size != dim:
            raise ValueError(f"state length {state.size}/{next_state.size} does not match buffer width {dim}")
        if not np.isfinite(t.reward):
            raise ValueError("reward must be finite")
        i = self.cursor
        self._states[i] = state
        self._next_states[i] = next_state
        self._actions[i] = int(t.action)
        self._rewards[i] = t.reward
        self._dones[i] = bool(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _slot_order(self) -> np.ndarray:
        start = self.cursor if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def gather(self, slots) -> TransitionBatch:
        slots = np.asarray(slots, dtype=np.int64)
        return TransitionBatch(self._states[slots], self._actions[slots], self._rewards[slots],
                               self._next_states[slots], self._dones[slots], slots)

    def transitions(self) -> List[Transition]:
        """Stored transitions, oldest first."""
        if self.size == 0:
            return []
        return list(self.gather(self._slot_order()))

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform sample without replacement."""
        if self.size < batch_size:
            raise InsufficientSamplesError(
                f"buffer holds {self.size} transitions, batch needs {batch_size}")
        slots = rng.choice(self.size, size=batch_size, replace=False)
        return self.gather(slots)


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 6000

    def __post_init__(self):
        if not 0 <= self.end <= self.start <= 1:
            raise ValueError("need 0 <= end <= start <= 1")
        if self.decay_steps < 0:
            raise ValueError("decay_steps must be >= 0")


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.decay_steps == 0 or step >= schedule.decay_steps:
        return schedule.end
    frac = step / schedule.decay_steps
    return schedule.start + frac * (schedule.end - schedule.start)


def greedy_action(q_values) -> int:
    # np.argmax returns the first maximum: ties go to the lowest index
    return int(np.argmax(q_values))


def select_action(params: nn.ParameterSet, obs, epsilon: float, rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return greedy_action(nn.forward(params, obs))


def compute_targets(bootstrap: nn.ParameterSet, batch, gamma: float) -> np.ndarray:
    """Bellman targets ``r`` (terminal) or ``r + gamma * max_a Q(s', a)``."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    if not isinstance(batch, TransitionBatch):
        batch = TransitionBatch.from_transitions(batch)
    q_next = nn.forward(bootstrap, batch.next_states).max(axis=1)
    return np.where(batch.dones, batch.rewards, batch.rewards + gamma * q_next)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.95
    batch_size: int = 32
    learning_rate: float = 5e-4
    replay_capacity: int = 15000
    warmup_steps: int = 200
    train_every: int = 1
    target_sync_interval: Optional[int] = None
    grad_clip: Optional[float] = 10.0
    hidden: tuple = (256, 256)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.batch_size < 1 or self.batch_size > self.warmup_steps:
            raise ValueError("need 1 <= batch_size <= warmup_steps")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be >= batch_size")
        if self.train_every < 1:
            raise ValueError("train_every must be >= 1")
        if self.target_sync_interval is not None and self.target_sync_interval < 1:
            raise ValueError("target_sync_interval must be >= 1 or None")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0 or None")


class DQNAgent:
    """Online network, optional target network, optimizer and replay memory."""

    def __init__(self, spec: nn.NetworkSpec, config: AgentConfig, seed: int):
        self.spec = spec
        self.config = config
        self.params = nn.init_params(spec, seed)
        self.target_params = self.params if config.target_sync_interval else None
        self.opt = nn.OptimizerState.zeros_like(self.params, learning_rate=config.learning_rate)
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.updates = 0

    @property
    def bootstrap_params(self) -> nn.ParameterSet:
        return self.target_params if self.target_params is not None else self.params


def train_step(agent: DQNAgent, rng: np.random.Generator) -> float:
    """Sample, build targets, descend one Adam step. Returns the batch loss."""
    cfg = agent.config
    needed = max(cfg.batch_size, cfg.warmup_steps)
    if len(agent.buffer) < needed:
        raise InsufficientSamplesError(f"buffer holds {len(agent.buffer)}, need {needed}")
    batch = agent.buffer.sample(cfg.batch_size, rng)
    targets = compute_targets(agent.bootstrap_params, batch, cfg.gamma)
    loss, grads = nn.loss_and_gradients(agent.params, batch.states, batch.actions, targets)
    grads = nn.clip_gradients(grads, cfg.grad_clip)
    agent.params, agent.opt = nn.adam_step(agent.params, grads, agent.opt)
    agent.updates += 1
    if cfg.target_sync_interval and agent.updates % cfg.target_sync_interval == 0:
        agent.target_params = agent.params
    return loss


@dataclass
class CurvePoint:
    step: int
    episode: int
    episode_reward: float
    mean_100: float


@dataclass
class LearningCurve:
    points: List[CurvePoint] = field(default_factory=list)

    HEADER = ("step", "episode", "episode_reward", "mean_100")

    def record(self, step: int, episode_reward: float) -> None:
        rewards = [p.episode_reward for p in self.points[-99:]] + [episode_reward]
        self.points.append(CurvePoint(step, len(self.points), float(episode_reward),
                                      float(np.mean(rewards))))

    @property
    def episode_rewards(self) -> np.ndarray:
        return np.array([p.episode_reward for p in self.points])

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.HEADER)
        for p in self.points:
            writer.writerow([p.step, p.episode, repr(p.episode_reward), repr(p.mean_100)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LearningCurve":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != cls.HEADER:
            raise ValueError(f"unexpected learning-curve header {reader.fieldnames}")
        return cls([CurvePoint(int(r["step"]), int(r["episode"]), float(r["episode_reward"]),
                               float(r["mean_100"])) for r in reader])


def run_training(env_config: EnvConfig, agent_config: AgentConfig, total_steps: int,
                 seed: int, progress=None):
    """Train a Q-network on one environment instance.

    Gradient updates start once more than ``warmup_steps`` transitions have
    been collected. ``done`` in the replay memory marks collisions only, so
    the 50 s time cap is bootstrapped through. Returns
    ``(params, LearningCurve)``; identical arguments give identical results.
    """
    if total_steps < agent_config.warmup_steps:
        raise ValueError("total_steps must be >= warmup_steps")
    spec = nn.NetworkSpec(env_config.obs_dim, agent_config.hidden, N_ACTIONS)
    agent = DQNAgent(spec, agent_config, seed)
    env_seeds, act_seed, sample_seed = np.random.SeedSequence(seed).spawn(3)
    episode_rng = np.random.default_rng(env_seeds)
    act_rng = np.random.default_rng(act_seed)
    sample_rng = np.random.default_rng(sample_seed)

    env = HighwayEnv(env_config)
    curve = LearningCurve()
    obs = env.reset(int(episode_rng.integers(2**31)))
    episode_reward = 0.0
    for step in range(1, total_steps + 1):
        eps = epsilon_at(agent_config.epsilon, step - 1)
        action = select_action(agent.params, obs, eps, act_rng)
        out = env.step(action)
        agent.buffer.push(Transition(obs, action, out.reward, out.observation, out.terminated))
        episode_reward += out.reward
        obs = out.observation

        if step > agent_config.warmup_steps and step % agent_config.train_every == 0:
            train_step(agent, sample_rng)

        if out.terminated or out.truncated:
            curve.record(step, episode_reward)
            if progress is not None:
                progress(curve.points[-1])
            obs = env.reset(int(episode_rng.integers(2**31)))
            episode_reward = 0.0
    return agent.params, curve
