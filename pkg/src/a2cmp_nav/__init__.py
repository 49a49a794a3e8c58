"""Robot motion planning in a crowd with an advantage actor-critic.

Modules:

- ``sim``: circle-crossing simulator, reward and episode runner
- ``orca``: reciprocal collision avoidance for obstacles and as a baseline
- ``actions``: the 81-entry discrete velocity table
- ``mlp``: shared-trunk actor-critic network with analytic gradients
- ``dvl``: one-step-lookahead value learning and demonstration collection
- ``a2cmp``: imitation start, qualified replay and actor-critic training
- ``evaluation``: fixed-endpoint evaluation, trajectory export, comparison table
- ``cli``: the ``a2cmp-nav`` command
"""

from .actions import ActionTable, build_action_table, snap_to_grid
from .mlp import NetworkParams, forward, init_network, load_checkpoint, save_checkpoint
from .orca import OrcaParams, OrcaPolicy
from .sim import AgentState, JointState, Outcome, ScenarioConfig, run_episode

__version__ = "0.1.0"

__all__ = [
    "ActionTable", "AgentState", "JointState", "NetworkParams", "OrcaParams", "OrcaPolicy", "Outcome",
    "ScenarioConfig", "build_action_table", "forward", "init_network", "load_checkpoint", "run_episode",
    "save_checkpoint", "snap_to_grid",
]
