"""Decentralized learning agents and their escalation logic.

Two gradient learners share one policy-network substrate: a DQN with a target
network and uniform replay, and a one-step advantage actor-critic. Both keep
the evolvable part of themselves exportable as a flat genome so the central
optimizer can refine it, and both can re-import a genome at an episode
boundary without losing replay contents or exploration state.

Each agent self-monitors its average episode return over a fixed interval of
episodes; when a window closes with the agent below target and out of
momentum (or below a hard floor, depending on the trigger mode), it asks for
optimization at an effort tier matched to how far behind it is.

Rewards arrive on the simulator's 0..1000 scale and are divided by
``reward_scale`` before they touch a gradient, keeping step sizes sane at the
learning rates used; monitoring and trigger logic stay on the raw scale.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .ga import GaTier
from .nets import (
    NetTopology,
    NeuralNet,
    flatten,
    forward,
    policy_loss_gradients,
    q_loss_gradients,
    sgd_step,
    unflatten,
    value_loss_gradients,
)


@dataclass(frozen=True)
class TriggerPolicy:
    """When an agent asks for help.

    ``threshold`` mode fires whenever the window average is at or below a
    fixed floor. ``stagnation`` mode fires when the agent is both below its
    target and gained less than ``min_improvement`` over the previous window;
    the first window has no predecessor and counts as zero gain. Neither mode
    fires before ``warmup_episodes`` episodes have been played, so requests
    snapshot policies that reflect some actual learning rather than the
    opening exploration noise.
    """

    mode: str
    threshold: float = 0.0
    min_improvement: float = 0.0
    warmup_episodes: int = 0

    def __post_init__(self):
        if self.mode not in ("threshold", "stagnation"):
            raise ValueError(f"unknown trigger mode {self.mode!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.warmup_episodes < 0:
            raise ValueError("warmup_episodes must be >= 0")


@dataclass(frozen=True)
class AgentConfig:
    algorithm: str  # "dqn" | "a2c"
    obs_size: int
    n_actions: int
    hidden: int = 64
    lr: float = 0.005
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = 300
    buffer_capacity: int = 10_000
    batch_size: int = 32
    target_sync_every: int = 10
    ne_interval: int = 125
    target_return: float = 950.0
    trigger: TriggerPolicy = field(
        default_factory=lambda: TriggerPolicy("stagnation", min_improvement=5.0)
    )
    indication_override: GaTier | None = None
    reward_scale: float = 1000.0

    def __post_init__(self):
        if self.algorithm not in ("dqn", "a2c"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.obs_size < 1 or self.n_actions < 2:
            raise ValueError("need obs_size >= 1 and n_actions >= 2")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.lr <= 0 or self.reward_scale <= 0:
            raise ValueError("lr and reward_scale must be > 0")
        for v in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= v <= 1.0:
                raise ValueError("epsilon bounds must be in [0, 1]")
        if self.epsilon_decay_episodes < 1:
            raise ValueError("epsilon_decay_episodes must be >= 1")
        if self.ne_interval < 1:
            raise ValueError("ne_interval must be >= 1")
        if self.target_return <= 0:
            raise ValueError("target_return must be > 0")


def dqn_target(reward: float, next_q_max: float, gamma: float, terminal: bool) -> float:
    """Bootstrapped Q target; terminal transitions stop at the reward."""
    if terminal:
        return reward
    return reward + gamma * next_q_max


def a2c_advantage(
    reward: float, v_next: float, v: float, gamma: float, terminal: bool
) -> float:
    """One-step TD advantage (r + gamma * V(s') - V(s); V(s') dropped when terminal)."""
    return (reward + gamma * v_next * (0.0 if terminal else 1.0)) - v


def epsilon_schedule(
    episode: int, decay_episodes: int, start: float = 1.0, end: float = 0.05
) -> float:
    """Linear decay from start to end over the first ``decay_episodes``."""
    if decay_episodes < 1 or episode < 0:
        raise ValueError("need decay_episodes >= 1 and episode >= 0")
    if episode >= decay_episodes:
        return end
    return start + (end - start) * (episode / decay_episodes)


def indication(window_avg: float, target_return: float) -> GaTier:
    """Map the performance gap to a requested optimization effort tier."""
    if target_return <= 0:
        raise ValueError("target_return must be > 0")
    gap = min(1.0, max(0.0, (target_return - window_avg) / target_return))
    if gap <= 1.0 / 3.0:
        return GaTier.LOW
    if gap <= 2.0 / 3.0:
        return GaTier.MEDIUM
    return GaTier.HIGH


class PerformanceWindow:
    """Ring of the last ``size`` episode returns plus the previous window's
    average, which together are all the trigger logic ever needs."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self.returns: deque[float] = deque(maxlen=size)
        self.previous_window_avg: float | None = None
        self._pushes = 0

    def push(self, ep_return: float):
        self.returns.append(float(ep_return))
        self._pushes += 1

    def at_boundary(self) -> bool:
        return self._pushes > 0 and self._pushes % self.size == 0

    @property
    def episodes_seen(self) -> int:
        return self._pushes

    def window_avg(self) -> float:
        if len(self.returns) < self.size:
            raise ValueError("window not yet full")
        return float(np.mean(self.returns))

    def roll(self):
        """Close the current window; call once per boundary after checks."""
        self.previous_window_avg = self.window_avg()

    def trailing_avg(self) -> float:
        if not self.returns:
            raise ValueError("no returns yet")
        return float(np.mean(self.returns))


def should_trigger(
    monitor: PerformanceWindow, cfg: AgentConfig, outstanding: bool = False
) -> GaTier | None:
    """Boundary-time decision: an effort tier to request, or None.

    Never fires while a previous request is still outstanding.
    """
    if outstanding:
        return None
    trig = cfg.trigger
    if monitor.episodes_seen < trig.warmup_episodes:
        return None
    avg = monitor.window_avg()
    if trig.mode == "threshold":
        fire = avg <= trig.threshold
    else:
        if avg >= cfg.target_return:
            fire = False
        else:
            prev = monitor.previous_window_avg
            gain = 0.0 if prev is None else avg - prev
            fire = gain < trig.min_improvement
    if not fire:
        return None
    if cfg.indication_override is not None:
        return cfg.indication_override
    return indication(avg, cfg.target_return)


class _ReplayBuffer:
    """Fixed-capacity uniform replay ring."""

    def __init__(self, capacity: int, obs_size: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_size))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, s, a, r, s2, done):
        i = self.pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=n)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


class DqnAgent:
    """Value learner: epsilon-greedy behaviour, one minibatch step per env step."""

    def __init__(self, config: AgentConfig, rng: np.random.Generator):
        if config.algorithm != "dqn":
            raise ValueError("config.algorithm must be 'dqn'")
        self.config = config
        self.rng = rng
        topo = NetTopology((config.obs_size, config.hidden, config.n_actions))
        self.online = NeuralNet.init_random(topo, rng)
        self.target = self.online.copy()
        self.buffer = _ReplayBuffer(config.buffer_capacity, config.obs_size)
        self.epsilon = config.epsilon_start
        self.monitor = PerformanceWindow(config.ne_interval)
        self.outstanding = False
        self.episodes_seen = 0
        self.updates = 0

    @property
    def algorithm(self) -> str:
        return "dqn"

    def select_action(self, obs: np.ndarray) -> int:
        # The forward pass always runs, even when the draw lands on a random
        # action, so decision latency does not depend on the epsilon phase.
        q = forward(self.online, obs)
        if self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.config.n_actions))
        return int(np.argmax(q))

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(forward(self.online, obs)))

    def observe(self, s, a, reward, s2, done: bool):
        """Store a transition (reward rescaled), then one replay update."""
        self.buffer.push(s, a, reward / self.config.reward_scale, s2, done)
        return self.update()

    def update(self) -> float | None:
        """One uniform minibatch SGD step; None while the buffer is cold."""
        cfg = self.config
        if self.buffer.size < cfg.batch_size:
            return None
        states, actions, rewards, next_states, dones = self.buffer.sample(
            cfg.batch_size, self.rng
        )
        next_q = np.array(
            [np.max(forward(self.target, ns)) for ns in next_states]
        )
        targets = np.array(
            [
                dqn_target(r, nq, cfg.gamma, bool(d))
                for r, nq, d in zip(rewards, next_q, dones)
            ]
        )
        loss, dw, db = q_loss_gradients(self.online, states, actions, targets)
        sgd_step(self.online, dw, db, cfg.lr)
        self.updates += 1
        return loss

    def end_episode(self):
        cfg = self.config
        self.episodes_seen += 1
        self.epsilon = epsilon_schedule(
            self.episodes_seen,
            cfg.epsilon_decay_episodes,
            cfg.epsilon_start,
            cfg.epsilon_end,
        )
        if self.episodes_seen % cfg.target_sync_every == 0:
            self.target = self.online.copy()

    def get_genome(self):
        return flatten(self.online)

    def apply_genome(self, genome, gate_passed: bool = True):
        """Install an evolved policy; replay and exploration state survive.

        A failed gate is a strict no-op: not a single parameter byte moves.
        """
        if genome.topology != self.online.topology:
            raise ValueError("genome topology does not match the online network")
        if not gate_passed:
            return
        self.online = unflatten(genome)
        self.target = unflatten(genome)


class A2cAgent:
    """Policy-gradient learner: softmax actor plus a scalar critic.

    Only the actor is exposed as the genome; the critic stays a private
    gradient-trained value estimate and is never touched by the optimizer.
    """

    def __init__(self, config: AgentConfig, rng: np.random.Generator):
        if config.algorithm != "a2c":
            raise ValueError("config.algorithm must be 'a2c'")
        self.config = config
        self.rng = rng
        self.actor = NeuralNet.init_random(
            NetTopology((config.obs_size, config.hidden, config.n_actions), "softmax"),
            rng,
        )
        self.critic = NeuralNet.init_random(
            NetTopology((config.obs_size, config.hidden, 1)), rng
        )
        self.epsilon = 0.0  # not used for exploration; kept for uniform logging
        self.monitor = PerformanceWindow(config.ne_interval)
        self.outstanding = False
        self.episodes_seen = 0
        self.updates = 0
        self._episode: list[tuple] = []

    @property
    def algorithm(self) -> str:
        return "a2c"

    def select_action(self, obs: np.ndarray) -> int:
        probs = forward(self.actor, obs)
        return int(self.rng.choice(self.config.n_actions, p=probs))

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(forward(self.actor, obs)))

    def observe(self, s, a, reward, s2, done: bool):
        self._episode.append((s, a, reward / self.config.reward_scale, s2, done))

    def end_episode(self):
        """One batched actor and one critic step over the finished episode."""
        self.episodes_seen += 1
        if not self._episode:
            return None
        cfg = self.config
        states = np.array([t[0] for t in self._episode])
        actions = np.array([t[1] for t in self._episode], dtype=np.int64)
        rewards = np.array([t[2] for t in self._episode])
        next_states = np.array([t[3] for t in self._episode])
        dones = np.array([t[4] for t in self._episode], dtype=bool)
        self._episode.clear()

        v = np.array([forward(self.critic, s)[0] for s in states])
        v_next = np.array([forward(self.critic, s)[0] for s in next_states])
        targets = rewards + cfg.gamma * v_next * (~dones)
        advantages = targets - v

        actor_loss, dw, db = policy_loss_gradients(self.actor, states, actions, advantages)
        sgd_step(self.actor, dw, db, cfg.lr)
        # critic regresses to the same fixed targets, not to a moving estimate
        critic_loss, dw, db = value_loss_gradients(self.critic, states, targets)
        sgd_step(self.critic, dw, db, cfg.lr)
        self.updates += 1
        return actor_loss, critic_loss

    def get_genome(self):
        return flatten(self.actor)

    def apply_genome(self, genome, gate_passed: bool = True):
        if genome.topology != self.actor.topology:
            raise ValueError("genome topology does not match the actor network")
        if not gate_passed:
            return
        self.actor = unflatten(genome)


def build_agent(config: AgentConfig, rng: np.random.Generator):
    return DqnAgent(config, rng) if config.algorithm == "dqn" else A2cAgent(config, rng)
