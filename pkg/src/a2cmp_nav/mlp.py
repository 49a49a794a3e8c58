"""Two-layer ReLU trunk with a value head and a softmax policy head.

    x (9 + 5N) -> linear1 (128) -> ReLU -> linear2 (256) -> ReLU
        -> critic (1)   state value
        -> actor (81)   logits -> softmax over the action table

Both heads share the trunk, so gradients from the value loss and the policy
loss add up in linear1/linear2.  Everything is float64 numpy; backward is
written out by hand for this fixed topology.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actions import LAYOUT, N_ACTIONS
from .sim import joint_width

HIDDEN1 = 128
HIDDEN2 = 256
CHECKPOINT_VERSION = 1
LAYER_NAMES = ("linear1", "linear2", "critic", "actor")


class NumericError(FloatingPointError):
    """Non-finite values reached the parameters."""


class CheckpointError(ValueError):
    pass


@dataclass
class LayerParams:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def copy(self):
        return LayerParams(self.weights.copy(), self.biases.copy())


@dataclass
class NetworkParams:
    linear1: LayerParams
    linear2: LayerParams
    critic: LayerParams
    actor: LayerParams

    @property
    def input_width(self):
        return self.linear1.weights.shape[1]

    @property
    def n_obstacles(self):
        return (self.input_width - joint_width(0)) // 5

    def layers(self):
        return [(name, getattr(self, name)) for name in LAYER_NAMES]

    def copy(self):
        return NetworkParams(*(layer.copy() for _, layer in self.layers()))

    def zeros_like(self):
        return NetworkParams(*(LayerParams(np.zeros_like(l.weights), np.zeros_like(l.biases))
                               for _, l in self.layers()))

    def arrays(self):
        for _, layer in self.layers():
            yield layer.weights
            yield layer.biases

    def equals(self, other):
        """Bit-for-bit equality."""
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


# Gradients have exactly the parameter layout.
GradientSet = NetworkParams


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    value: np.ndarray  # scalar array for one state, (B,) for a batch


def _glorot(rng, fan_out, fan_in):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_network(n_obstacles: int, rng_seed: int = 0) -> NetworkParams:
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    rng = np.random.default_rng(rng_seed)
    sizes = [(HIDDEN1, joint_width(n_obstacles)), (HIDDEN2, HIDDEN1), (1, HIDDEN2), (N_ACTIONS, HIDDEN2)]
    return NetworkParams(*(LayerParams(_glorot(rng, o, i), np.zeros(o)) for o, i in sizes))


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def forward(params: NetworkParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.input_width:
        raise ValueError(f"input width {x.shape[-1]} does not match network width {params.input_width}")
    z1 = x @ params.linear1.weights.T + params.linear1.biases
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.linear2.weights.T + params.linear2.biases
    h2 = np.maximum(z2, 0.0)
    value = (h2 @ params.critic.weights.T + params.critic.biases)[..., 0]
    logits = h2 @ params.actor.weights.T + params.actor.biases
    return ForwardTrace(x, z1, h1, z2, h2, logits, softmax(logits), value)


def backward(params: NetworkParams, trace: ForwardTrace, d_value, d_logits) -> GradientSet:
    """Parameter gradients given dLoss/dvalue and dLoss/dlogits.

    Works for a single state or a batch; batch gradients are summed, so any
    averaging belongs in the output gradients.  ReLU passes no gradient at 0.
    """
    batched = trace.inputs.ndim == 2
    x, h1, h2 = (np.atleast_2d(a) for a in (trace.inputs, trace.h1, trace.h2))
    z1, z2 = np.atleast_2d(trace.z1), np.atleast_2d(trace.z2)
    dv = np.reshape(np.asarray(d_value, dtype=float), (-1, 1))
    dz = np.atleast_2d(np.asarray(d_logits, dtype=float))
    if not batched and (dv.shape[0] != 1 or dz.shape[0] != 1):
        raise ValueError("single-state trace needs single-state output gradients")

    critic = LayerParams(dv.T @ h2, dv.sum(axis=0))
    actor = LayerParams(dz.T @ h2, dz.sum(axis=0))
    dh2 = dv @ params.critic.weights + dz @ params.actor.weights
    dz2 = dh2 * (z2 > 0)
    linear2 = LayerParams(dz2.T @ h1, dz2.sum(axis=0))
    dz1 = (dz2 @ params.linear2.weights) * (z1 > 0)
    linear1 = LayerParams(dz1.T @ x, dz1.sum(axis=0))
    return NetworkParams(linear1, linear2, critic, actor)


def _check_finite(grads):
    for name, layer in grads.layers():
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
            raise NumericError(f"non-finite gradient in layer {name}")


def apply_update(params: NetworkParams, grads: GradientSet, learning_rate: float) -> NetworkParams:
    """One gradient-descent step; returns new parameters."""
    _check_finite(grads)
    return NetworkParams(*(
        LayerParams(p.weights - learning_rate * g.weights, p.biases - learning_rate * g.biases)
        for (_, p), (_, g) in zip(params.layers(), grads.layers())
    ))


class Sgd:
    """Gradient descent with optional heavy-ball momentum (off by default)."""

    def __init__(self, learning_rate, momentum=0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity = None

    def step(self, params, grads):
        if not self.momentum:
            return apply_update(params, grads, self.learning_rate)
        _check_finite(grads)
        if self._velocity is None:
            self._velocity = grads.zeros_like()
        for v, g in zip(self._velocity.arrays(), grads.arrays()):
            v *= self.momentum
            v += g
        return apply_update(params, self._velocity, self.learning_rate)


# --- checkpoints ---------------------------------------------------------


def save_checkpoint(params: NetworkParams, path, algorithm=None):
    """``algorithm`` ("dvl" or "a2cmp") records which head the network acts with."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "n_obstacles": params.n_obstacles,
        "action_table_layout": LAYOUT,
        "layers": {
            name: {"weights": layer.weights.tolist(), "biases": layer.biases.tolist()}
            for name, layer in params.layers()
        },
    }
    if algorithm is not None:
        payload["algorithm"] = algorithm
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # float repr is the shortest string that round-trips exactly
    path.write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_checkpoint(path, n_obstacles=None) -> NetworkParams:
    """Read a checkpoint, optionally insisting on a given obstacle count."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version') if isinstance(payload, dict) else None!r}"
            f" (expected {CHECKPOINT_VERSION})")
    try:
        stored_n = int(payload["n_obstacles"])
        layers = payload["layers"]
        params = NetworkParams(*(
            LayerParams(np.array(layers[name]["weights"], dtype=float),
                        np.array(layers[name]["biases"], dtype=float))
            for name in LAYER_NAMES
        ))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc

    width = joint_width(stored_n)
    expected = {
        "linear1": (HIDDEN1, width), "linear2": (HIDDEN2, HIDDEN1),
        "critic": (1, HIDDEN2), "actor": (N_ACTIONS, HIDDEN2),
    }
    for name, layer in params.layers():
        if layer.weights.shape != expected[name] or layer.biases.shape != (expected[name][0],):
            raise CheckpointError(
                f"layer {name} has shape {layer.weights.shape}/{layer.biases.shape}, expected {expected[name]}")
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
            raise CheckpointError(f"layer {name} contains non-finite values")
    if n_obstacles is not None and n_obstacles != stored_n:
        raise CheckpointError(
            f"checkpoint input width {width} (N={stored_n}) does not match run input width "
            f"{joint_width(n_obstacles)} (N={n_obstacles})")
    return params


def checkpoint_algorithm(path):
    """The algorithm tag stored in a checkpoint, or None."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return payload.get("algorithm") if isinstance(payload, dict) else None
