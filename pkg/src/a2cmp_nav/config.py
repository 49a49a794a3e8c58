"""Flat ``key = value`` run configuration shared by every command.

Blank lines and ``#`` comments are ignored.  Every key must be one of the
fields of :class:`RunConfig`; values are parsed with the field's type.  The
built-in defaults are the desk-scale profile (see ``config/desk.cfg``).
"""
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .a2cmp import A2cmpConfig, ImitationConfig
from .dvl import DvlConfig
from .orca import OrcaPolicy
from .sim import ScenarioConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # scenario
    circle_radius: float = 4.0
    n_obstacles: int = 5
    radius_min: float = 0.3
    radius_max: float = 0.5
    preferred_speed: float = 1.0
    dt: float = 0.25
    t_max: float = 25.0
    reward_proximity_sign: float = -1.0
    hold_at_goal: bool = False
    robot_invisible: bool = False  # obstacles' ORCA ignores the robot
    # obstacle / baseline ORCA
    orca_time_horizon: float = 3.0
    orca_neighbor_dist: float = 10.0
    orca_safety_margin: float = 0.02
    # demonstrations and imitation
    demos: int = 500
    demonstrator: str = "orca"  # "dvl" relabels demos with the trained DVL policy
    imitation_lr: float = 0.01
    imitation_epochs: int = 50
    imitation_batch_size: int = 16
    # deep V-learning
    dvl_episodes: int = 250
    dvl_lr: float = 0.001
    dvl_batch_size: int = 100
    dvl_sample_from: str = "replay"
    dvl_pretrain_epochs: int = 50
    dvl_pretrain_lr: float = 0.01
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    # A2CMP
    episodes: int = 1000
    lr: float = 0.001
    batch_size: int = 100
    minibatches: int = 1
    sync_interval: int = 50
    memory_capacity: int = 100000
    memory_init_min: int = 500  # experiences gathered before the first update
    entropy_coeff: float = 0.01
    critic_coeff: float = 0.5
    gamma: float = 0.9
    bootstrap: str = "next"
    train_eval_interval: int = 100
    train_eval_episodes: int = 20
    checkpoint_interval: int = 500
    # evaluation
    eval_episodes: int = 100
    export_traj: int = 4

    def scenario(self, seed=0) -> ScenarioConfig:
        return ScenarioConfig(
            circle_radius=self.circle_radius, n_obstacles=self.n_obstacles,
            radius_range=(self.radius_min, self.radius_max), preferred_speed=self.preferred_speed,
            dt=self.dt, t_max=self.t_max, rng_seed=seed, reward_proximity_sign=self.reward_proximity_sign,
            hold_at_goal=self.hold_at_goal, robot_invisible=self.robot_invisible,
        )

    def orca(self) -> OrcaPolicy:
        return OrcaPolicy(self.orca_time_horizon, self.orca_neighbor_dist, self.orca_safety_margin, self.dt)

    def dvl(self) -> DvlConfig:
        return DvlConfig(
            gamma=self.gamma, learning_rate=self.dvl_lr, batch_size=self.dvl_batch_size,
            episodes=self.dvl_episodes, epsilon_start=self.epsilon_start, epsilon_end=self.epsilon_end,
            memory_capacity=self.memory_capacity, sample_from=self.dvl_sample_from,
            pretrain_epochs=self.dvl_pretrain_epochs, pretrain_lr=self.dvl_pretrain_lr,
        )

    def a2cmp(self) -> A2cmpConfig:
        return A2cmpConfig(
            episodes=self.episodes, batch_size=self.batch_size, minibatches=self.minibatches,
            sync_interval=self.sync_interval, learning_rate=self.lr, entropy_coeff=self.entropy_coeff,
            critic_coeff=self.critic_coeff, gamma=self.gamma, memory_capacity=self.memory_capacity,
            imitation=ImitationConfig(self.demos, self.imitation_lr, self.imitation_epochs,
                                      self.imitation_batch_size),
            bootstrap=self.bootstrap, memory_init_min=self.memory_init_min,
            eval_interval=self.train_eval_interval,
            eval_episodes=self.train_eval_episodes, checkpoint_interval=self.checkpoint_interval,
        )

    def validate(self):
        """Build every sub-config so invariant violations surface before any run."""
        try:
            self.scenario()
            self.dvl()
            self.a2cmp()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.demonstrator not in ("orca", "dvl"):
            raise ConfigError("demonstrator must be 'orca' or 'dvl'")
        for name in ("demos", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text):
    kind = _FIELD_TYPES[key]
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for key {key!r}: {exc}") from exc
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = parse_config_text(text, str(path))
    values.update(overrides or {})
    return replace(RunConfig(), **values).validate()


def dump_config(cfg: RunConfig):
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(RunConfig))
