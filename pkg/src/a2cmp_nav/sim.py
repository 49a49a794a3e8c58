"""Circle-crossing world: scenario generation, holonomic stepping, rewards.

All agents are discs moving with piecewise-constant velocity.  One step of
length ``dt`` works on a snapshot: every policy sees the same pre-step world,
then all agents move at once.

A policy is any callable ``policy(agent, others) -> (vx, vy)`` where ``agent``
is the caller's full :class:`AgentState` and ``others`` is a tuple of
:class:`Observable` (position, velocity, radius) for everyone it can see.
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

ROBOT_DIM = 9
OBSTACLE_DIM = 5

_SPEED_TOL = 1e-9


class ScenarioError(RuntimeError):
    """No valid placement found; the configuration is too crowded."""


class PolicyContractError(RuntimeError):
    """A policy returned a non-finite or over-speed velocity."""


class Outcome(str, Enum):
    RUNNING = "Running"
    COLLISION = "Collision"
    REACHED_GOAL = "ReachedGoal"
    TIMEOUT = "Timeout"

    @property
    def terminal(self):
        return self is not Outcome.RUNNING


class Observable(NamedTuple):
    """What other agents can measure: position, velocity and radius."""

    px: float
    py: float
    vx: float
    vy: float
    radius: float


@dataclass(frozen=True)
class AgentState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float
    gx: float
    gy: float
    v_pref: float
    theta: float = 0.0

    @property
    def position(self):
        return (self.px, self.py)

    @property
    def velocity(self):
        return (self.vx, self.vy)

    @property
    def goal(self):
        return (self.gx, self.gy)

    def observable(self) -> Observable:
        return Observable(self.px, self.py, self.vx, self.vy, self.radius)

    def full(self):
        return (self.px, self.py, self.vx, self.vy, self.radius,
                self.gx, self.gy, self.v_pref, self.theta)

    def goal_distance(self):
        return math.hypot(self.gx - self.px, self.gy - self.py)


@dataclass(frozen=True)
class JointState:
    """Robot full state followed by the obstacles' observable states."""

    robot: AgentState
    obstacles: tuple

    @property
    def n_obstacles(self):
        return len(self.obstacles)

    def flat(self) -> np.ndarray:
        values = list(self.robot.full())
        for ob in self.obstacles:
            values.extend(ob)
        return np.array(values, dtype=float)

    @classmethod
    def from_flat(cls, x):
        x = [float(v) for v in x]
        n, rem = divmod(len(x) - ROBOT_DIM, OBSTACLE_DIM)
        if rem or n < 0:
            raise ValueError(f"flat joint state of length {len(x)} is not 9 + 5N")
        obstacles = tuple(
            Observable(*x[ROBOT_DIM + OBSTACLE_DIM * i: ROBOT_DIM + OBSTACLE_DIM * (i + 1)])
            for i in range(n)
        )
        return cls(AgentState(*x[:ROBOT_DIM]), obstacles)


def joint_width(n_obstacles):
    return ROBOT_DIM + OBSTACLE_DIM * n_obstacles


@dataclass(frozen=True)
class ScenarioConfig:
    circle_radius: float = 4.0
    n_obstacles: int = 5
    radius_range: tuple = (0.3, 0.5)
    preferred_speed: float = 1.0
    dt: float = 0.25
    t_max: float = 25.0
    rng_seed: int = 0
    # -1 gives the printed proximity branch -0.1 - d/2; +1 gives -0.1 + d/2
    reward_proximity_sign: float = -1.0
    # obstacles ignore the robot when computing their own velocities
    robot_invisible: bool = False
    # freeze obstacles once they reach their goals instead of letting them
    # keep running their policy (a frozen agent no longer reciprocates)
    hold_at_goal: bool = False
    goal_jitter: float = 0.2

    def __post_init__(self):
        lo, hi = self.radius_range
        if not 0.05 <= lo <= hi <= 2.0:
            raise ValueError(f"radius_range must satisfy 0.05 <= lo <= hi <= 2, got {self.radius_range}")
        if not self.circle_radius > 2 * hi:
            raise ValueError("circle_radius must exceed twice the largest radius")
        if self.n_obstacles < 0:
            raise ValueError("n_obstacles must be >= 0")
        if not self.preferred_speed > 0:
            raise ValueError("preferred_speed must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max >= self.dt:
            raise ValueError("t_max must be at least dt")
        if self.reward_proximity_sign not in (-1.0, 1.0):
            raise ValueError("reward_proximity_sign must be -1 or +1")

    def with_seed(self, seed):
        return replace(self, rng_seed=int(seed))

    @property
    def max_steps(self):
        return math.ceil(self.t_max / self.dt - 1e-9)


@dataclass(frozen=True)
class StepOutcome:
    classification: Outcome
    reward: float
    min_separation: float


@dataclass(frozen=True)
class Step:
    t: float
    state: JointState
    action: tuple
    reward: float


@dataclass
class EpisodeRecord:
    outcome: Outcome
    elapsed: float
    rewards: list
    final_state: JointState
    steps: list = field(default_factory=list)

    @property
    def n_steps(self):
        return len(self.rewards)

    def discounted_return(self, gamma, dt, v_pref):
        g = gamma ** (dt * v_pref)
        return float(sum(r * g ** k for k, r in enumerate(self.rewards)))


# --- geometry and reward -------------------------------------------------


def separation_distance(a, b) -> float:
    """Surface gap between two discs; negative when they overlap."""
    return math.hypot(a.px - b.px, a.py - b.py) - (a.radius + b.radius)


def min_separation(robot, obstacles) -> float:
    return min((separation_distance(robot, ob) for ob in obstacles), default=math.inf)


def compute_reward(min_separation: float, at_goal: bool, proximity_sign: float = -1.0) -> float:
    d = min_separation
    if d < 0:
        return -0.25
    if d < 0.2:
        return -0.1 + proximity_sign * d / 2
    if at_goal:
        return 1.0
    return 0.0


def at_goal(agent) -> bool:
    return agent.goal_distance() < agent.radius


def classify_step(robot: AgentState, obstacles, elapsed: float, cfg: ScenarioConfig) -> StepOutcome:
    d = min_separation(robot, obstacles)
    reached = at_goal(robot)
    reward = compute_reward(d, reached, cfg.reward_proximity_sign)
    if d < 0:
        label = Outcome.COLLISION
    elif reached:
        label = Outcome.REACHED_GOAL
    elif elapsed >= cfg.t_max - 1e-9:
        label = Outcome.TIMEOUT
    else:
        label = Outcome.RUNNING
    return StepOutcome(label, reward, d)


# --- kinematics ----------------------------------------------------------


def integrate_step(agent: AgentState, action, dt: float) -> AgentState:
    vx, vy = float(action[0]), float(action[1])
    theta = math.atan2(vy, vx) if math.hypot(vx, vy) > 1e-9 else agent.theta
    return replace(agent, px=agent.px + dt * vx, py=agent.py + dt * vy, vx=vx, vy=vy, theta=theta)


def _checked(velocity, agent, who):
    vx, vy = float(velocity[0]), float(velocity[1])
    if not (math.isfinite(vx) and math.isfinite(vy)):
        raise PolicyContractError(f"{who} returned non-finite velocity ({vx}, {vy})")
    speed = math.hypot(vx, vy)
    if speed > agent.v_pref + _SPEED_TOL:
        raise PolicyContractError(
            f"{who} returned speed {speed:.6f} above preferred speed {agent.v_pref}")
    return vx, vy


# --- scenarios -----------------------------------------------------------


def _on_circle(radius, angle):
    return radius * math.cos(angle), radius * math.sin(angle)


def generate_scenario(cfg: ScenarioConfig, fixed_robot_endpoints: bool = False, max_resamples=1000):
    """Robot and obstacles for one circle-crossing episode.

    Starts lie on the circle; each goal is the antipode of the start rotated
    by uniform noise in [-goal_jitter, goal_jitter].  Obstacles share one
    radius, the robot gets its own.  Starts, and goals, are kept at least
    ``r_i + r_j + 0.1`` apart.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    lo, hi = cfg.radius_range
    R = cfg.circle_radius
    robot_radius = float(rng.uniform(lo, hi))
    obstacle_radius = float(rng.uniform(lo, hi))

    def sample_endpoints():
        a = float(rng.uniform(0, 2 * math.pi))
        jitter = float(rng.uniform(-cfg.goal_jitter, cfg.goal_jitter))
        return _on_circle(R, a), _on_circle(R, a + math.pi + jitter)

    if fixed_robot_endpoints:
        start, goal = (-R, 0.0), (R, 0.0)
    else:
        start, goal = sample_endpoints()

    placed = [(start, goal, robot_radius)]
    resamples = 0
    for _ in range(cfg.n_obstacles):
        while True:
            s, g = sample_endpoints()
            ok = all(
                math.dist(s, s2) >= obstacle_radius + r2 + 0.1
                and math.dist(g, g2) >= obstacle_radius + r2 + 0.1
                for s2, g2, r2 in placed
            )
            if ok:
                placed.append((s, g, obstacle_radius))
                break
            resamples += 1
            if resamples > max_resamples:
                raise ScenarioError(
                    f"could not place {cfg.n_obstacles} obstacles after {max_resamples} re-samples")

    agents = []
    for (sx, sy), (gx, gy), r in placed:
        theta = math.atan2(gy - sy, gx - sx)
        agents.append(AgentState(sx, sy, 0.0, 0.0, r, gx, gy, cfg.preferred_speed, theta))
    return agents[0], agents[1:]


# --- episodes ------------------------------------------------------------


def default_obstacle_policy(dt=0.25):
    from .orca import OrcaPolicy

    return OrcaPolicy(dt=dt)


def _observe(robot, obstacles, robot_invisible):
    robot_obs = robot.observable()
    obs = [ob.observable() for ob in obstacles]
    robot_view = tuple(obs)
    views = []
    for i in range(len(obstacles)):
        others = obs[:i] + obs[i + 1:]
        views.append(tuple(others) if robot_invisible else (robot_obs, *others))
    return robot_view, views


def run_episode(cfg: ScenarioConfig, robot_policy, obstacle_policy=None, record: bool = True,
                fixed_robot_endpoints: bool = False, scenario=None) -> EpisodeRecord:
    """Simulate until the robot collides, reaches its goal or times out.

    Obstacles keep running their policy after reaching their goal (ORCA then
    idles there and only moves to make way) unless ``cfg.hold_at_goal``.
    ``scenario`` overrides generation with a ``(robot, obstacles)``
    pair.
    """
    if obstacle_policy is None:
        obstacle_policy = default_obstacle_policy(cfg.dt)
    robot, obstacles = scenario if scenario is not None else generate_scenario(cfg, fixed_robot_endpoints)
    obstacles = list(obstacles)
    parked = [cfg.hold_at_goal and at_goal(ob) for ob in obstacles]
    rewards, steps = [], []
    outcome = Outcome.RUNNING
    k = 0
    while True:
        robot_view, views = _observe(robot, obstacles, cfg.robot_invisible)
        state = JointState(robot, robot_view)
        action = _checked(robot_policy(robot, robot_view), robot, "robot policy")
        ob_actions = [
            (0.0, 0.0) if parked[i] else _checked(obstacle_policy(ob, views[i]), ob, f"obstacle {i} policy")
            for i, ob in enumerate(obstacles)
        ]
        robot = integrate_step(robot, action, cfg.dt)
        obstacles = [integrate_step(ob, a, cfg.dt) for ob, a in zip(obstacles, ob_actions)]
        if cfg.hold_at_goal:
            parked = [p or at_goal(ob) for p, ob in zip(parked, obstacles)]
        k += 1
        result = classify_step(robot, obstacles, k * cfg.dt, cfg)
        rewards.append(result.reward)
        if record:
            steps.append(Step((k - 1) * cfg.dt, state, action, result.reward))
        if result.classification.terminal:
            outcome = result.classification
            break
    final = JointState(robot, tuple(ob.observable() for ob in obstacles))
    return EpisodeRecord(outcome, k * cfg.dt, rewards, final, steps)


@dataclass(frozen=True)
class CrowdResult:
    collided: bool
    min_separation: float
    all_at_goal: bool
    elapsed: float


def run_crowd(cfg: ScenarioConfig, policy, fixed_robot_endpoints: bool = False) -> CrowdResult:
    """Every agent, robot included, driven by ``policy``.

    Runs until each agent has reached its goal at least once or ``t_max``
    passes, tracking the smallest pairwise gap.  Arrived agents follow the
    same idling rule as obstacles in :func:`run_episode`.
    """
    robot, obstacles = generate_scenario(cfg, fixed_robot_endpoints)
    agents = [robot, *obstacles]
    arrived = [at_goal(a) for a in agents]
    parked = [cfg.hold_at_goal and a for a in arrived]
    worst = math.inf
    k = 0
    while not all(arrived) and k * cfg.dt < cfg.t_max - 1e-9:
        obs = [a.observable() for a in agents]
        actions = [
            (0.0, 0.0) if parked[i] else _checked(policy(a, tuple(obs[:i] + obs[i + 1:])), a, f"agent {i}")
            for i, a in enumerate(agents)
        ]
        agents = [integrate_step(a, v, cfg.dt) for a, v in zip(agents, actions)]
        arrived = [p or at_goal(a) for p, a in zip(arrived, agents)]
        parked = [cfg.hold_at_goal and a for a in arrived]
        k += 1
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                worst = min(worst, separation_distance(agents[i], agents[j]))
    return CrowdResult(worst < 0, worst, all(arrived), k * cfg.dt)
