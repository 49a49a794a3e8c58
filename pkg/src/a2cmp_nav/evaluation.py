"""Fixed-protocol evaluation, trajectory export and the comparison table.

Every evaluation episode puts the robot at (-R, 0) heading for (R, 0) and
draws fresh obstacles from ``seed + episode_index``, so any single episode
can be replayed on its own.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import build_action_table
from .dvl import DvlPolicy
from .mlp import NetworkParams
from .sim import EpisodeRecord, Outcome, ScenarioConfig, run_episode

TRAJECTORY_FIELDS = ["episode", "t", "agent_id", "px", "py", "vx", "vy", "radius"]
REPORT_FIELDS = ["n_episodes", "success_rate", "collision_rate", "goal_missing_rate", "average_time_to_goal"]
TABLE_FIELDS = ["Algorithm", "Success rate", "Collision rate", "Goal missing", "Average time"]


@dataclass
class EvalReport:
    n_episodes: int
    success_rate: float
    collision_rate: float
    goal_missing_rate: float
    average_time_to_goal: float  # nan when nothing reached the goal
    outcomes: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records):
        outcomes = [r.outcome for r in records]
        n = len(outcomes)
        if n == 0:
            raise ValueError("no episodes to report on")
        counts = {o: outcomes.count(o) for o in (Outcome.REACHED_GOAL, Outcome.COLLISION, Outcome.TIMEOUT)}
        times = [r.elapsed for r in records if r.outcome is Outcome.REACHED_GOAL]
        return cls(
            n_episodes=n,
            success_rate=counts[Outcome.REACHED_GOAL] / n,
            collision_rate=counts[Outcome.COLLISION] / n,
            goal_missing_rate=counts[Outcome.TIMEOUT] / n,
            average_time_to_goal=float(np.mean(times)) if times else float("nan"),
            outcomes=outcomes,
        )

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_FIELDS)
            writer.writerow([self.n_episodes] + [repr(float(getattr(self, k))) for k in REPORT_FIELDS[1:]])
            writer.writerow([])
            writer.writerow(["episode", "outcome"])
            for i, o in enumerate(self.outcomes):
                writer.writerow([i, o.value])


def network_policy(params: NetworkParams, scenario: ScenarioConfig, mode="actor", gamma=0.9):
    """Deterministic robot policy from a trained network.

    ``mode="actor"`` takes the argmax of the policy head; ``mode="value"``
    acts by one-step lookahead on the value head.
    """
    table = build_action_table(scenario.preferred_speed)
    if mode == "value":
        return DvlPolicy(params, table, gamma, scenario.dt, proximity_sign=scenario.reward_proximity_sign)
    if mode == "actor":
        from .a2cmp import ActorPolicy
        return ActorPolicy(params, table)
    raise ValueError(f"unknown network policy mode {mode!r}")


def evaluate_policy(policy, scenario: ScenarioConfig, n_episodes=100, seed=0, obstacle_policy=None,
                    record=False, mode="actor", gamma=0.9):
    """Run the fixed-endpoint protocol; returns ``(report, records)``.

    ``policy`` is a robot policy callable or :class:`NetworkParams`, in which
    case ``mode`` picks the head used to act.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    records = []
    for i in range(n_episodes):
        robot = network_policy(policy, scenario, mode, gamma) if isinstance(policy, NetworkParams) else policy
        records.append(run_episode(scenario.with_seed(seed + i), robot, obstacle_policy, record=record,
                                   fixed_robot_endpoints=True))
    return EvalReport.from_records(records), records


def _trajectory_rows(episode, record: EpisodeRecord):
    for step in record.steps:
        agents = (step.state.robot,) + tuple(step.state.obstacles)
        for agent_id, a in enumerate(agents):
            yield [episode, f"{step.t:.3f}", agent_id] + [f"{v:.6f}" for v in (a.px, a.py, a.vx, a.vy, a.radius)]


def export_trajectories(records, path, episode_ids=None):
    """One row per agent per recorded step; agent 0 is the robot."""
    records = list(records)
    if not records:
        raise ValueError("no episode records to export")
    if any(not r.steps for r in records):
        raise ValueError("records were run without step recording")
    ids = range(len(records)) if episode_ids is None else episode_ids
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_FIELDS)
        for ep, record in zip(ids, records):
            writer.writerows(_trajectory_rows(ep, record))


def read_trajectories(path):
    """Parse an exported trajectory file into a list of dicts."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            rows.append({
                "episode": int(row["episode"]), "t": float(row["t"]), "agent_id": int(row["agent_id"]),
                **{k: float(row[k]) for k in ("px", "py", "vx", "vy", "radius")},
            })
    return rows


def compare_algorithms(reports, path):
    """Write the comparison table; ``reports`` maps algorithm name to report."""
    items = list(reports.items()) if isinstance(reports, dict) else list(reports)
    if not items:
        raise ValueError("need at least one report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_FIELDS)
        for name, rep in items:
            writer.writerow([name, f"{rep.success_rate:.2f}", f"{rep.collision_rate:.2f}",
                             f"{rep.goal_missing_rate:.2f}", f"{rep.average_time_to_goal:.1f}"])
