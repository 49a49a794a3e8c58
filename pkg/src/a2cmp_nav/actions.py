"""Discrete velocity action set: 16 headings x 5 speeds plus a stop action.

Index layout (fixed, also written into checkpoints)::

    0                         -> stop (0, 0)
    1 + (i - 1) * 5 + (j - 1) -> direction i in 1..16, speed j in 1..5

Direction ``i`` points at angle ``i / 16 * 2 pi`` in the world frame and speed
``j`` is ``j / 5 * v_pref``.
"""
from dataclasses import dataclass

import numpy as np

N_DIRECTIONS = 16
N_SPEEDS = 5
N_ACTIONS = N_DIRECTIONS * N_SPEEDS + 1

LAYOUT = {
    "size": N_ACTIONS,
    "directions": N_DIRECTIONS,
    "speeds": N_SPEEDS,
    "stop_index": 0,
    "index": "1 + (direction - 1) * 5 + (speed - 1)",
    "angle": "direction / 16 * 2pi",
    "speed": "speed / 5 * v_pref",
}


class UnknownActionError(ValueError):
    """Velocity is not an entry of the action table."""


@dataclass(frozen=True, eq=False)
class ActionTable:
    actions: np.ndarray  # (81, 2), m/s
    v_pref: float

    def __len__(self):
        return len(self.actions)


def action_index(direction, speed):
    return 1 + (direction - 1) * N_SPEEDS + (speed - 1)


def build_action_table(v_pref: float) -> ActionTable:
    if not v_pref > 0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    actions = np.zeros((N_ACTIONS, 2))
    for i in range(1, N_DIRECTIONS + 1):
        angle = i / N_DIRECTIONS * 2 * np.pi
        for j in range(1, N_SPEEDS + 1):
            speed = j / N_SPEEDS * v_pref
            actions[action_index(i, j)] = (speed * np.cos(angle), speed * np.sin(angle))
    actions.setflags(write=False)
    return ActionTable(actions=actions, v_pref=float(v_pref))


def velocity_of(table: ActionTable, index: int) -> tuple:
    vx, vy = table.actions[index]
    return float(vx), float(vy)


def label_of(table: ActionTable, action, tol=1e-6) -> int:
    d = np.hypot(*(table.actions - np.asarray(action, dtype=float)).T)
    k = int(np.argmin(d))
    if d[k] > tol:
        raise UnknownActionError(
            f"velocity {tuple(action)} is {d[k]:.3g} m/s from the nearest grid action; snap it first"
        )
    return k


def snap_to_grid(table: ActionTable, velocity) -> int:
    """Index of the nearest table entry; ties go to the lowest index."""
    d = np.sum((table.actions - np.asarray(velocity, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d))
