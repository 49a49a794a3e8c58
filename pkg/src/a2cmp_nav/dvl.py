"""Deep V-learning: a value network that acts by one-step lookahead.

The robot scores every action in the table by the reward of the state it
would reach plus the discounted value of that state, assuming obstacles keep
their current velocity for one step.  The same module collects
demonstration episodes (from ORCA or a trained value network) used to
bootstrap both learners.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actions import build_action_table, snap_to_grid
from .mlp import apply_update, backward, forward, init_network
from .sim import (OBSTACLE_DIM, ROBOT_DIM, JointState, Outcome,
                  ScenarioConfig, joint_width, run_episode)

log = logging.getLogger(__name__)


class DemonstratorQualityError(RuntimeError):
    """The demonstrator never reached its goal."""


def discount(gamma, dt, v_pref):
    """Per-step discount gamma ** (dt * v_pref)."""
    return gamma ** (dt * v_pref)


@dataclass(frozen=True)
class DvlConfig:
    gamma: float = 0.9
    learning_rate: float = 0.001
    batch_size: int = 100
    episodes: int = 10000
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    epsilon_decay_episodes: int = None  # None: first half of training
    memory_capacity: int = 100000
    # "replay" samples from E; "demos" samples from D only
    sample_from: str = "replay"
    pretrain_epochs: int = 50
    pretrain_lr: float = 0.01

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.sample_from not in ("replay", "demos"):
            raise ValueError("sample_from must be 'replay' or 'demos'")

    def epsilon(self, episode):
        span = self.epsilon_decay_episodes
        if span is None:
            span = max(1, self.episodes // 2)
        frac = min(1.0, episode / span) if span > 0 else 1.0
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


# --- lookahead -----------------------------------------------------------


def propagate_joint_state(s: JointState, robot_action, dt: float) -> JointState:
    flat = propagate_flat(s.flat(), np.asarray(robot_action, dtype=float)[None, :], dt)[0]
    return JointState.from_flat(flat)


def propagate_flat(flat, actions, dt):
    """Next joint states, one row per candidate robot action.

    The robot moves with the action; obstacles extrapolate their observed
    velocity.
    """
    flat = np.asarray(flat, dtype=float)
    actions = np.asarray(actions, dtype=float)
    out = np.repeat(flat[None, :], len(actions), axis=0)
    out[:, 0:2] += dt * actions
    out[:, 2:4] = actions
    moving = np.hypot(actions[:, 0], actions[:, 1]) > 1e-9
    out[moving, 8] = np.arctan2(actions[moving, 1], actions[moving, 0])
    obs = out[:, ROBOT_DIM:].reshape(len(actions), -1, OBSTACLE_DIM)
    obs[:, :, 0:2] += dt * obs[:, :, 2:4]
    return out


def predicted_rewards(next_flat, proximity_sign=-1.0):
    """Reward of each propagated joint state, same branches as the simulator."""
    px, py, r = next_flat[:, 0], next_flat[:, 1], next_flat[:, 4]
    obs = next_flat[:, ROBOT_DIM:].reshape(len(next_flat), -1, OBSTACLE_DIM)
    if obs.shape[1]:
        gaps = np.hypot(obs[:, :, 0] - px[:, None], obs[:, :, 1] - py[:, None]) - (obs[:, :, 4] + r[:, None])
        d = gaps.min(axis=1)
    else:
        d = np.full(len(next_flat), np.inf)
    reached = np.hypot(next_flat[:, 5] - px, next_flat[:, 6] - py) < r
    return np.where(d < 0, -0.25,
                    np.where(d < 0.2, -0.1 + proximity_sign * d / 2,
                             np.where(reached, 1.0, 0.0)))


def lookahead_scores(params, flat, table, gamma, dt, proximity_sign=-1.0):
    nxt = propagate_flat(flat, table.actions, dt)
    v_pref = flat[7]
    return predicted_rewards(nxt, proximity_sign) + discount(gamma, dt, v_pref) * forward(params, nxt).value


def select_action_dvl(params, s, table, gamma, dt, proximity_sign=-1.0):
    """Greedy lookahead action; ties resolve to the lowest label."""
    flat = s.flat() if isinstance(s, JointState) else np.asarray(s, dtype=float)
    label = int(np.argmax(lookahead_scores(params, flat, table, gamma, dt, proximity_sign)))
    return tuple(float(v) for v in table.actions[label]), label


class DvlPolicy:
    """Robot policy callback; epsilon > 0 explores uniformly over the table."""

    def __init__(self, params, table, gamma=0.9, dt=0.25, epsilon=0.0, rng=None, proximity_sign=-1.0):
        self.params = params
        self.table = table
        self.gamma = gamma
        self.dt = dt
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.proximity_sign = proximity_sign
        self.labels = []

    def __call__(self, agent, others):
        if self.epsilon > 0 and self.rng.random() < self.epsilon:
            label = int(self.rng.integers(len(self.table)))
        else:
            _, label = select_action_dvl(self.params, JointState(agent, others), self.table,
                                         self.gamma, self.dt, self.proximity_sign)
        self.labels.append(label)
        return tuple(float(v) for v in self.table.actions[label])


# --- demonstrations ------------------------------------------------------


@dataclass
class DemoMemory:
    states: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    episodes: np.ndarray
    attempted: int = 0

    def __len__(self):
        return len(self.labels)

    @property
    def n_episodes(self):
        return len(np.unique(self.episodes))

    @property
    def width(self):
        return self.states.shape[1]

    def subset(self, mask):
        return DemoMemory(self.states[mask], self.labels[mask], self.values[mask], self.episodes[mask],
                          self.attempted)

    def split(self, train_fraction, seed=0):
        """Split by whole episodes so no trajectory straddles the two parts."""
        ids = np.unique(self.episodes)
        rng = np.random.default_rng(seed)
        rng.shuffle(ids)
        n_train = int(round(train_fraction * len(ids)))
        train_ids = ids[:n_train]
        mask = np.isin(self.episodes, train_ids)
        return self.subset(mask), self.subset(~mask)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s, a, v, e in zip(self.states, self.labels, self.values, self.episodes):
                fh.write(json.dumps({"state": s.tolist(), "label": int(a), "value": float(v),
                                     "episode": int(e)}) + "\n")

    @classmethod
    def load(cls, path):
        states, labels, values, episodes = [], [], [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    states.append([float(x) for x in rec["state"]])
                    labels.append(int(rec["label"]))
                    values.append(float(rec["value"]))
                    episodes.append(int(rec["episode"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad demonstration record ({exc})") from exc
        if not states:
            raise ValueError(f"{path}: no demonstration records")
        return cls(np.array(states), np.array(labels, dtype=int), np.array(values),
                   np.array(episodes, dtype=int))


def returns_to_go(rewards, g):
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + g * acc
        out[t] = acc
    return out


def collect_demonstrations(demonstrator, scenario: ScenarioConfig, n_episodes: int, table,
                           gamma=0.9, seed=0, obstacle_policy=None) -> DemoMemory:
    """Run the demonstrator and keep only episodes that reach the goal.

    Each step stores the flat joint state, the label of the nearest table
    action, and the discounted return-to-go as value target.  The robot
    moves with the demonstrator's own (continuous) velocity.
    """
    if n_episodes <= 0:
        raise ValueError("no episodes requested")
    g = discount(gamma, scenario.dt, scenario.preferred_speed)
    states, labels, values, episodes = [], [], [], []
    for i in range(n_episodes):
        record = run_episode(scenario.with_seed(seed + i), demonstrator, obstacle_policy, record=True)
        if record.outcome is not Outcome.REACHED_GOAL:
            continue
        values.extend(returns_to_go(record.rewards, g))
        for step in record.steps:
            states.append(step.state.flat())
            labels.append(snap_to_grid(table, step.action))
            episodes.append(i)
    if not states:
        raise DemonstratorQualityError(f"demonstrator reached the goal in 0 of {n_episodes} episodes")
    width = joint_width(scenario.n_obstacles)
    return DemoMemory(np.array(states).reshape(-1, width), np.array(labels, dtype=int), np.array(values),
                      np.array(episodes, dtype=int), attempted=n_episodes)


# --- training ------------------------------------------------------------


class TransitionBuffer:
    """FIFO store of (state, reward, next_state, terminal) tuples."""

    def __init__(self, capacity, width):
        self.capacity = capacity
        self.states = np.zeros((capacity, width))
        self.next_states = np.zeros((capacity, width))
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def add(self, s, r, s_next, terminal):
        i = self._head
        self.states[i], self.rewards[i], self.next_states[i], self.terminal[i] = s, r, s_next, terminal
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n, rng):
        idx = rng.integers(self.size, size=n) if self.size < n else rng.choice(self.size, n, replace=False)
        return self.states[idx], self.rewards[idx], self.next_states[idx], self.terminal[idx]


def demo_transitions(demos: DemoMemory, g):
    """Rebuild (s, r, s', terminal) from stored return-to-go targets."""
    out = []
    for ep in np.unique(demos.episodes):
        idx = np.flatnonzero(demos.episodes == ep)
        for k, i in enumerate(idx):
            last = k == len(idx) - 1
            if last:
                out.append((demos.states[i], demos.values[i], demos.states[i], True))
            else:
                j = idx[k + 1]
                out.append((demos.states[i], demos.values[i] - g * demos.values[j], demos.states[j], False))
    return out


def value_regression_step(params, states, targets, lr):
    trace = forward(params, states)
    err = trace.value - targets
    grads = backward(params, trace, 2.0 * err / len(targets), np.zeros_like(trace.logits))
    return apply_update(params, grads, lr), float(np.mean(err ** 2))


def pretrain_value(params, demos: DemoMemory, epochs, lr, batch_size, rng):
    """Supervised critic fit to demonstration return-to-go values."""
    n = len(demos)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            params, _ = value_regression_step(params, demos.states[idx], demos.values[idx], lr)
    return params


def td_targets(target_params, rewards, next_states, terminal, g):
    bootstrap = forward(target_params, next_states).value
    return rewards + g * np.where(terminal, 0.0, bootstrap)


def train_dvl(cfg: DvlConfig, scenario: ScenarioConfig, demos: DemoMemory = None, seed=0,
              obstacle_policy=None):
    """Train a value network; returns ``(params, curve)``.

    ``curve`` holds the discounted return of every training episode.
    Each environment step adds one minibatch update, applied once the
    episode has finished.
    """
    rng = np.random.default_rng(seed)
    table = build_action_table(scenario.preferred_speed)
    g = discount(cfg.gamma, scenario.dt, scenario.preferred_speed)
    params = init_network(scenario.n_obstacles, seed)
    if cfg.episodes == 0:
        return params, []
    if demos is not None and len(demos):
        params = pretrain_value(params, demos, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch_size, rng)
    target = params.copy()

    width = joint_width(scenario.n_obstacles)
    replay = TransitionBuffer(cfg.memory_capacity, width)
    demo_buf = None
    if demos is not None and len(demos):
        demo_buf = TransitionBuffer(max(1, len(demos)), width)
        for tr in demo_transitions(demos, g):
            replay.add(*tr)
            demo_buf.add(*tr)
    source = demo_buf if cfg.sample_from == "demos" and demo_buf is not None else replay

    curve = []
    base = seed * 1_000_000
    for episode in range(1, cfg.episodes + 1):
        policy = DvlPolicy(params, table, cfg.gamma, scenario.dt, cfg.epsilon(episode - 1), rng,
                           scenario.reward_proximity_sign)
        record = run_episode(scenario.with_seed(base + episode), policy, obstacle_policy, record=True)
        nexts = [s.state for s in record.steps[1:]] + [record.final_state]
        for k, (step, nxt) in enumerate(zip(record.steps, nexts)):
            terminal = k == len(record.steps) - 1 and record.outcome is not Outcome.TIMEOUT
            replay.add(step.state.flat(), step.reward, nxt.flat(), terminal)
        for _ in range(record.n_steps):
            s, r, s2, term = source.sample(cfg.batch_size, rng)
            params, _ = value_regression_step(params, s, td_targets(target, r, s2, term, g), cfg.learning_rate)
        target = params.copy()
        curve.append(record.discounted_return(cfg.gamma, scenario.dt, scenario.preferred_speed))
        if episode % 100 == 0:
            log.info("dvl episode %d: mean return (last 100) %.3f", episode, np.mean(curve[-100:]))
    return params, curve
