"""
The circle-crossing simulator and the ORCA baseline
===================================================

Run with ``python3 notebooks/01_simulator_and_orca.py``.  Takes a few
seconds.
"""

import numpy as np

from a2cmp_nav.orca import OrcaPolicy
from a2cmp_nav.sim import Outcome, ScenarioConfig, compute_reward, run_crowd, run_episode

# A scenario: robot and five obstacles start on a circle of radius 4 m and
# head for the antipodal point.  Obstacles are driven by ORCA.
cfg = ScenarioConfig(rng_seed=3)
record = run_episode(cfg, OrcaPolicy(), record=True)
robot0 = record.steps[0].state.robot
print(f"robot starts at ({robot0.px:.2f}, {robot0.py:.2f}), goal ({robot0.gx:.2f}, {robot0.gy:.2f})")
print(f"outcome {record.outcome.value} after {record.elapsed:.2f} s in {record.n_steps} steps")

# The per-step reward: collision, discomfort zone (gap under 0.2 m), goal, otherwise zero
for d, goal in [(-0.05, False), (0.1, False), (0.5, True), (0.5, False)]:
    print(f"gap {d:+.2f} at_goal {goal!s:5s} -> reward {compute_reward(d, goal):+.3f}")

# Discounted return of the ORCA robot, and how long it spends uncomfortably close
rewards = np.array(record.rewards)
print(f"discounted return {record.discounted_return(0.9, cfg.dt, cfg.preferred_speed):+.3f}, "
      f"{np.sum((rewards < 0) & (rewards > -0.25))} steps in the discomfort zone")

# Everyone on ORCA: reciprocal avoidance keeps the crowd collision free
results = [run_crowd(ScenarioConfig(n_obstacles=4, rng_seed=s), OrcaPolicy()) for s in range(50)]
print(f"50 five-agent crowds: {sum(r.collided for r in results)} collisions, "
      f"{sum(r.all_at_goal for r in results)} with every agent at its goal, "
      f"closest approach {min(r.min_separation for r in results):.3f} m")

# A robot that ignores the crowd and walks straight: the ORCA obstacles make
# room for it, so it mostly gets through, but not always
def straight(agent, others):
    dx, dy = agent.gx - agent.px, agent.gy - agent.py
    d = np.hypot(dx, dy)
    return (dx / d, dy / d) if d > 1e-9 else (0.0, 0.0)


outcomes = [run_episode(cfg.with_seed(s), straight, record=False).outcome for s in range(50)]
print(f"straight walker: {outcomes.count(Outcome.REACHED_GOAL)} goals, "
      f"{outcomes.count(Outcome.COLLISION)} collisions out of 50")
