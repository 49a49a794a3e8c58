"""Advantage actor-critic for motion planning with imitation start and replay.

Training keeps two copies of the network.  The *acting* copy drives the
robot; the *learning* copy receives every gradient step and is copied onto
the acting one every ``sync_interval`` episodes, so behaviour only changes
at those boundaries.

Only episodes that end in a goal or a collision are written to the replay
memory.  Each stored experience carries its value target, fixed when the
episode is committed:

    target = r + gamma ** (dt * v_pref) * V_learning(s_next)    (r alone at the terminal step)

Per minibatch, with advantage ``A = target - V(s)`` held constant in the
policy term:

    loss = mean(-log pi(a|s) * A - beta * H(pi(s))) + lambda * mean(A ** 2)
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import build_action_table, snap_to_grid
from .dvl import DemoMemory, discount
from .mlp import (NumericError, apply_update, backward, forward, init_network, log_softmax,
                  save_checkpoint)
from .orca import OrcaPolicy
from .sim import JointState, Outcome, ScenarioConfig, joint_width, run_episode

log = logging.getLogger(__name__)

QUALIFIED = (Outcome.REACHED_GOAL, Outcome.COLLISION)
CURVE_FIELDS = ["episode", "avg_reward", "policy_loss", "critic_loss", "entropy", "memory_size",
                "success_rate_eval"]
EVAL_SEED_BASE = 900_000_000


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action_label: int
    value_target: float


@dataclass(frozen=True)
class ImitationConfig:
    demos: int = 3000
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 16


@dataclass(frozen=True)
class A2cmpConfig:
    episodes: int = 10000
    batch_size: int = 100
    minibatches: int = 1
    sync_interval: int = 50
    learning_rate: float = 0.001
    entropy_coeff: float = 0.01
    critic_coeff: float = 0.5
    gamma: float = 0.9
    memory_capacity: int = 100000
    imitation: ImitationConfig = field(default_factory=ImitationConfig)
    # "next": bootstrap from s_{t+1}; "same": from s_t as literally printed
    bootstrap: str = "next"
    memory_init_min: int = 500
    memory_init_max_episodes: int = 200
    eval_interval: int = 100
    eval_episodes: int = 20
    checkpoint_interval: int = 500

    def __post_init__(self):
        if not 0 < self.entropy_coeff <= 1:
            raise ValueError("entropy_coeff must lie in (0, 1]")
        if not 0 < self.critic_coeff <= 1:
            raise ValueError("critic_coeff must lie in (0, 1]")
        if self.sync_interval < 1:
            raise ValueError("sync_interval must be >= 1")
        if not (self.learning_rate > 0 and self.imitation.learning_rate > 0):
            raise ValueError("learning rates must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.bootstrap not in ("next", "same"):
            raise ValueError("bootstrap must be 'next' or 'same'")


@dataclass
class ActorCriticPair:
    acting: object
    learning: object

    def sync(self):
        self.acting = self.learning.copy()


class ReplayMemory:
    """Bounded FIFO of experiences; the oldest records go first when full."""

    def __init__(self, capacity, width):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, width))
        self.labels = np.zeros(capacity, dtype=int)
        self.targets = np.zeros(capacity)
        # provenance, used to audit what was admitted
        self.outcomes = np.empty(capacity, dtype=object)
        self.episode_ids = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def push(self, exp: Experience, outcome=None, episode=-1):
        i = self._head
        self.states[i] = exp.state
        self.labels[i] = exp.action_label
        self.targets[i] = exp.value_target
        self.outcomes[i] = outcome
        self.episode_ids[i] = episode
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def commit_episode(self, experiences, outcome, episode=-1):
        """Store an episode's experiences if it ended in a goal or collision."""
        if outcome not in QUALIFIED:
            return 0
        for exp in experiences:
            self.push(exp, outcome, episode)
        return len(experiences)

    def _order(self):
        start = self._head if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def records(self):
        """Experiences oldest first."""
        return [Experience(self.states[i].copy(), int(self.labels[i]), float(self.targets[i]))
                for i in self._order()]

    def record_outcomes(self):
        return [self.outcomes[i] for i in self._order()]

    def record_episodes(self):
        return self.episode_ids[self._order()]

    def sample(self, n, rng):
        """``n`` random records; with replacement while fewer than ``n`` exist."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty memory")
        if self.size < n:
            idx = rng.integers(self.size, size=n)
        else:
            idx = rng.choice(self.size, n, replace=False)
        return self.states[idx], self.labels[idx], self.targets[idx]


# --- policies ------------------------------------------------------------


class ActorPolicy:
    """Robot policy from the actor head: sampled when ``rng`` is given, else argmax."""

    def __init__(self, params, table, rng=None):
        self.params = params
        self.table = table
        self.rng = rng
        self.labels = []

    def __call__(self, agent, others):
        probs = forward(self.params, JointState(agent, others).flat()).probs
        if self.rng is None:
            label = int(np.argmax(probs))
        else:
            label = int(self.rng.choice(len(probs), p=probs))
        self.labels.append(label)
        return tuple(float(v) for v in self.table.actions[label])


class SnappedOrcaPolicy:
    """ORCA for the robot, recording the grid label of each chosen velocity."""

    def __init__(self, table, dt):
        self.table = table
        self.orca = OrcaPolicy(dt=dt)
        self.labels = []

    def __call__(self, agent, others):
        v = self.orca(agent, others)
        self.labels.append(snap_to_grid(self.table, v))
        return v


# --- imitation -----------------------------------------------------------


def imitation_loss_grads(params, states, labels, values):
    trace = forward(params, states)
    n = len(labels)
    logp = log_softmax(trace.logits)
    d_logits = trace.probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    err = trace.value - values
    grads = backward(params, trace, 2.0 * err / n, d_logits / n)
    nll = -float(np.mean(logp[np.arange(n), labels]))
    return grads, nll, float(np.mean(err ** 2))


def imitation_init(demos: DemoMemory, cfg: ImitationConfig, params=None, seed=0):
    """Supervised start: cross-entropy on demonstrated labels plus squared
    error on their value targets, summed through the shared trunk."""
    if demos is None or len(demos) == 0:
        raise ValueError("imitation needs a non-empty demonstration memory")
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_network((demos.width - joint_width(0)) // 5, seed)
    n = len(demos)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, nll, mse = imitation_loss_grads(params, demos.states[idx], demos.labels[idx],
                                                   demos.values[idx])
            params = apply_update(params, grads, cfg.learning_rate)
        log.debug("imitation epoch %d: nll %.4f mse %.4f", epoch + 1, nll, mse)
    return params


def label_accuracy(params, demos: DemoMemory):
    probs = forward(params, demos.states).probs
    return float(np.mean(np.argmax(probs, axis=1) == demos.labels))


# --- targets and losses --------------------------------------------------


def target_state_value(reward, next_state, learning_critic, gamma, dt, v_pref, terminal):
    if terminal:
        return float(reward)
    flat = next_state.flat() if isinstance(next_state, JointState) else next_state
    return float(reward + discount(gamma, dt, v_pref) * forward(learning_critic, flat).value)


def _as_arrays(batch):
    if isinstance(batch, tuple):
        states, labels, targets = batch
    else:
        states = np.array([e.state for e in batch])
        labels = np.array([e.action_label for e in batch], dtype=int)
        targets = np.array([e.value_target for e in batch])
    return np.atleast_2d(states), np.asarray(labels, dtype=int), np.asarray(targets, dtype=float)


def compute_losses(batch, learning, entropy_coeff, critic_coeff):
    """Total loss, its gradients and diagnostics for one minibatch.

    ``batch`` is a list of :class:`Experience` or a ``(states, labels,
    targets)`` triple.
    """
    states, labels, targets = _as_arrays(batch)
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    trace = forward(learning, states)
    logp = log_softmax(trace.logits)
    probs = trace.probs
    adv = targets - trace.value
    entropy = -np.sum(probs * logp, axis=1)
    rows = np.arange(n)

    policy_terms = -logp[rows, labels] * adv - entropy_coeff * entropy
    critic_terms = adv ** 2
    total = float(np.mean(policy_terms) + critic_coeff * np.mean(critic_terms))

    # -log pi(a) * A, advantage held fixed
    d_logits = probs * adv[:, None]
    d_logits[rows, labels] -= adv
    # -beta * H, with dH/dz_k = -pi_k (log pi_k + H)
    d_logits += entropy_coeff * probs * (logp + entropy[:, None])
    d_value = -2.0 * critic_coeff * adv
    grads = backward(learning, trace, d_value / n, d_logits / n)
    diagnostics = {
        "policy_loss": float(np.mean(policy_terms)),
        "critic_loss": float(np.mean(critic_terms)),
        "entropy": float(np.mean(entropy)),
        "mean_advantage": float(np.mean(adv)),
    }
    return total, grads, diagnostics


# --- rollouts ------------------------------------------------------------


def episode_experiences(record, labels, learning, gamma, scenario: ScenarioConfig, bootstrap="next"):
    """Experiences for every step of a recorded episode, targets from ``learning``."""
    if not record.steps:
        return []
    states = np.array([s.state.flat() for s in record.steps])
    if bootstrap == "next":
        boot_states = np.vstack([states[1:], record.final_state.flat()[None, :]])
    else:
        boot_states = states
    rewards = np.array(record.rewards)
    terminal = np.zeros(len(rewards), dtype=bool)
    terminal[-1] = record.outcome in QUALIFIED
    g = discount(gamma, scenario.dt, scenario.preferred_speed)
    targets = rewards + g * np.where(terminal, 0.0, forward(learning, boot_states).value)
    return [Experience(s, int(a), float(t)) for s, a, t in zip(states, labels, targets)]


def run_training_episode(pair: ActorCriticPair, table, scenario: ScenarioConfig, memory: ReplayMemory,
                         rng, gamma=0.9, bootstrap="next", episode=-1, obstacle_policy=None):
    """Roll out the acting policy (sampled) and commit the episode if qualified.

    Returns ``(record, staged_experiences, n_committed)``.
    """
    policy = ActorPolicy(pair.acting, table, rng)
    record = run_episode(scenario, policy, obstacle_policy, record=True)
    staged = episode_experiences(record, policy.labels, pair.learning, gamma, scenario, bootstrap)
    committed = memory.commit_episode(staged, record.outcome, episode)
    return record, staged, committed


def fill_memory(pair, table, scenario, memory, rng, cfg: A2cmpConfig, seed_base, obstacle_policy=None):
    """Seed the memory by running the acting policy, then ORCA if it falls short."""
    need = max(cfg.batch_size, cfg.memory_init_min)
    runs = 0
    while len(memory) < need and runs < cfg.memory_init_max_episodes:
        run_training_episode(pair, table, scenario.with_seed(seed_base + runs), memory, rng,
                             cfg.gamma, cfg.bootstrap, -1 - runs, obstacle_policy)
        runs += 1
    fallback = 0
    while len(memory) < need and fallback < cfg.memory_init_max_episodes:
        policy = SnappedOrcaPolicy(table, scenario.dt)
        record = run_episode(scenario.with_seed(seed_base + runs + fallback), policy, obstacle_policy)
        staged = episode_experiences(record, policy.labels, pair.learning, cfg.gamma, scenario, cfg.bootstrap)
        memory.commit_episode(staged, record.outcome, -1 - runs - fallback)
        fallback += 1
    log.info("memory initialised with %d experiences (%d policy, %d ORCA episodes)",
             len(memory), runs, fallback)
    return runs, fallback


def evaluate_network(params, table, scenario, n_episodes, gamma, obstacle_policy=None):
    """Argmax rollouts on the fixed-endpoint protocol over held-out seeds."""
    returns, successes = [], 0
    for j in range(n_episodes):
        record = run_episode(scenario.with_seed(EVAL_SEED_BASE + j), ActorPolicy(params, table),
                             obstacle_policy, record=False, fixed_robot_endpoints=True)
        returns.append(record.discounted_return(gamma, scenario.dt, scenario.preferred_speed))
        successes += record.outcome is Outcome.REACHED_GOAL
    return float(np.mean(returns)), successes / n_episodes


def train_a2cmp(cfg: A2cmpConfig, scenario: ScenarioConfig, demos: DemoMemory = None, seed=0,
                imitation=True, out_dir=None, obstacle_policy=None):
    """Returns ``(acting_params, curve_rows)``.

    Curve rows follow :data:`CURVE_FIELDS`: one per training episode, plus
    an evaluation row (losses blank) every ``eval_interval`` episodes.
    """
    if imitation and (demos is None or len(demos) == 0):
        raise ValueError("imitation requested but no demonstrations given; collect demos first")
    rng = np.random.default_rng(seed)
    table = build_action_table(scenario.preferred_speed)
    params = init_network(scenario.n_obstacles, seed)
    if imitation:
        params = imitation_init(demos, cfg.imitation, params, seed)
    pair = ActorCriticPair(acting=params, learning=params.copy())
    if cfg.episodes == 0:
        return pair.acting, []

    out_dir = Path(out_dir) if out_dir is not None else None
    memory = ReplayMemory(cfg.memory_capacity, joint_width(scenario.n_obstacles))
    base = seed * 1_000_000
    fill_memory(pair, table, scenario, memory, rng, cfg, base + 500_000, obstacle_policy)

    curve = []
    for episode in range(1, cfg.episodes + 1):
        record, _, _ = run_training_episode(pair, table, scenario.with_seed(base + episode), memory, rng,
                                            cfg.gamma, cfg.bootstrap, episode, obstacle_policy)
        diags = []
        try:
            for _ in range(cfg.minibatches):
                batch = memory.sample(cfg.batch_size, rng)
                _, grads, diag = compute_losses(batch, pair.learning, cfg.entropy_coeff, cfg.critic_coeff)
                pair.learning = apply_update(pair.learning, grads, cfg.learning_rate)
                diags.append(diag)
        except NumericError as exc:
            raise TrainingError(f"numeric failure at episode {episode}: {exc}") from exc
        if episode % cfg.sync_interval == 0:
            pair.sync()
        curve.append({
            "episode": episode,
            "avg_reward": record.discounted_return(cfg.gamma, scenario.dt, scenario.preferred_speed),
            "policy_loss": float(np.mean([d["policy_loss"] for d in diags])),
            "critic_loss": float(np.mean([d["critic_loss"] for d in diags])),
            "entropy": float(np.mean([d["entropy"] for d in diags])),
            "memory_size": len(memory),
            "success_rate_eval": None,
        })
        if cfg.eval_interval and episode % cfg.eval_interval == 0:
            mean_return, success = evaluate_network(pair.acting, table, scenario, cfg.eval_episodes,
                                                    cfg.gamma, obstacle_policy)
            curve.append({"episode": episode, "avg_reward": mean_return, "policy_loss": None,
                          "critic_loss": None, "entropy": None, "memory_size": len(memory),
                          "success_rate_eval": success})
            log.info("a2cmp episode %d: eval return %.3f success %.2f memory %d",
                     episode, mean_return, success, len(memory))
        if out_dir is not None and cfg.checkpoint_interval and episode % cfg.checkpoint_interval == 0:
            save_checkpoint(pair.acting, out_dir / f"a2cmp_ep{episode}.json", "a2cmp")
    return pair.acting, curve


def eval_rows(curve):
    return [row for row in curve if row["success_rate_eval"] is not None]


def write_curve(rows, path, fields=CURVE_FIELDS):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow(["" if row.get(k) is None else _fmt(row[k]) for k in fields])


def _fmt(value):
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)
