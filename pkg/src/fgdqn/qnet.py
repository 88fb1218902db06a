"""Feed-forward Q-networks on a flat parameter vector.

Parameters live in one contiguous float64 array ``theta`` so update rules
are single vector operations. Layer ``l`` owns a weight block of shape
``(fan_in, fan_out)`` followed by a bias block of length ``fan_out``; the
output layer may omit its bias.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fgdqn.validation import ValidationError, check_random_state

ACTIVATIONS = ("relu", "gelu", "sigmoid")
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _special():
    # scipy.special is slow to import; only the smooth activations need it.
    from scipy.special import erf, expit

    return erf, expit


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    erf, expit = _special()
    if name == "sigmoid":
        return expit(z)
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _act_grad(name, z, a):
    if name == "relu":
        # Subgradient 0 at the kink.
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    erf, _ = _special()
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * _INV_SQRT2PI * np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class MlpTopology:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1
    activation: str = "relu"
    output_bias: bool = True
    # When set, outputs are squashed to (-output_bound, output_bound).
    output_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ValidationError(f"all layer sizes must be positive integers, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.output_bound is not None and not self.output_bound > 0:
            raise ValidationError("output_bound must be positive")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "output_bias": self.output_bias,
            "output_bound": self.output_bound,
        }


@dataclass(frozen=True)
class _Slot:
    w: slice
    b: slice | None
    shape: tuple


def _layout(topology: MlpTopology):
    slots, off = [], 0
    n_layers = len(topology.layer_dims)
    for i, (fan_in, fan_out) in enumerate(topology.layer_dims):
        w = slice(off, off + fan_in * fan_out)
        off = w.stop
        b = None
        if i < n_layers - 1 or topology.output_bias:
            b = slice(off, off + fan_out)
            off = b.stop
        slots.append(_Slot(w, b, (fan_in, fan_out)))
    return tuple(slots), off


@dataclass
class QNetwork:
    topology: MlpTopology
    theta: np.ndarray = None
    slots: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.slots, size = _layout(self.topology)
        if self.theta is None:
            self.theta = np.zeros(size)
        self.theta = np.array(self.theta, dtype=float)
        if self.theta.shape != (size,):
            raise ValidationError(f"theta must have length {size}, got shape {self.theta.shape}")

    @property
    def num_params(self) -> int:
        return self.theta.size

    def weights(self, layer: int) -> np.ndarray:
        slot = self.slots[layer]
        return self.theta[slot.w].reshape(slot.shape)

    def bias(self, layer: int):
        slot = self.slots[layer]
        return None if slot.b is None else self.theta[slot.b]

    def copy(self) -> "QNetwork":
        return QNetwork(self.topology, self.theta.copy())

    def layer_of(self, index: int) -> tuple[int, str]:
        """Map a flat parameter index to ``(layer, "weight" | "bias")``."""
        for i, slot in enumerate(self.slots):
            if slot.w.start <= index < slot.w.stop:
                return i, "weight"
            if slot.b is not None and slot.b.start <= index < slot.b.stop:
                return i, "bias"
        raise IndexError(index)

    def __call__(self, x):
        return forward(self, x)


def _check_input(net: QNetwork, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.topology.input_dim:
        raise ValidationError(f"input must have trailing dimension {net.topology.input_dim}, got shape {x.shape}")
    return x2, single


def _forward_cache(net: QNetwork, x2: np.ndarray):
    act = net.topology.activation
    h = x2
    cache = []
    last = len(net.slots) - 1
    for i, slot in enumerate(net.slots):
        z = h @ net.theta[slot.w].reshape(slot.shape)
        if slot.b is not None:
            z = z + net.theta[slot.b]
        if i < last:
            a = _act(act, z)
            cache.append((h, z, a))
            h = a
        else:
            cache.append((h, z, None))
            h = z
    bound = net.topology.output_bound
    if bound is not None:
        h = bound * np.tanh(h / bound)
    return h, cache


def forward(net: QNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x2, single = _check_input(net, x)
    out, _ = _forward_cache(net, x2)
    return out[0] if single else out


def vjp(net: QNetwork, x, cotangent) -> np.ndarray:
    """Return ``Σ_k Σ_j cotangent[k, j] ∇_θ out_j(x_k)`` as a flat vector.

    One backward pass over the whole batch; ``grad_params`` is the special
    case of a single input with a one-hot cotangent.
    """
    x2, single = _check_input(net, x)
    cot = np.asarray(cotangent, dtype=float)
    if single:
        cot = cot[None, :]
    if cot.shape != (x2.shape[0], net.topology.output_dim):
        raise ValidationError(f"cotangent shape {cot.shape} does not match outputs")
    out, cache = _forward_cache(net, x2)
    bound = net.topology.output_bound
    if bound is not None:
        cot = cot * (1.0 - (out / bound) ** 2)
    grad = np.zeros_like(net.theta)
    act = net.topology.activation
    delta = cot
    for i in range(len(net.slots) - 1, -1, -1):
        slot = net.slots[i]
        h_in, z, a = cache[i]
        if a is not None:
            delta = delta * _act_grad(act, z, a)
        grad[slot.w] = (h_in.T @ delta).ravel()
        if slot.b is not None:
            grad[slot.b] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.theta[slot.w].reshape(slot.shape).T
    return grad


def grad_params(net: QNetwork, x, output_index: int = 0) -> np.ndarray:
    """Exact gradient of output ``output_index`` at input ``x`` w.r.t. θ."""
    if not 0 <= output_index < net.topology.output_dim:
        raise ValidationError(f"output_index {output_index} out of range")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("grad_params takes a single input vector")
    cot = np.zeros(net.topology.output_dim)
    cot[output_index] = 1.0
    return vjp(net, x, cot)


def init_params(topology: MlpTopology, rng=None, scheme: str = "uniform_fan_in") -> QNetwork:
    """Weights uniform on ``[-1/√fan_in, 1/√fan_in]``, biases zero."""
    if scheme != "uniform_fan_in":
        raise ValidationError(f"unknown init scheme {scheme!r}")
    rng = check_random_state(rng)
    net = QNetwork(topology)
    for slot in net.slots:
        bound = 1.0 / math.sqrt(slot.shape[0])
        net.theta[slot.w] = rng.uniform(-bound, bound, size=slot.w.stop - slot.w.start)
    return net


class StateActionEncoder:
    """One-hot state concatenated with one-hot action; the net has one output."""

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = num_states
        self.num_actions = num_actions
        self.input_dim = num_states + num_actions
        self.output_dim = 1

    def _rows(self, states):
        states = np.asarray(states, dtype=int).reshape(-1)
        n, a = states.size, self.num_actions
        rows = np.zeros((n * a, self.input_dim))
        rows[np.arange(n * a), np.repeat(states, a)] = 1.0
        rows[np.arange(n * a), self.num_states + np.tile(np.arange(a), n)] = 1.0
        return rows

    def q_values(self, net: QNetwork, states) -> np.ndarray:
        states = np.asarray(states, dtype=int).reshape(-1)
        return forward(net, self._rows(states)).reshape(states.size, self.num_actions)

    def grad(self, net: QNetwork, states, actions, weights) -> np.ndarray:
        states = np.asarray(states, dtype=int).reshape(-1)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        rows = np.zeros((states.size, self.input_dim))
        rows[np.arange(states.size), states] = 1.0
        rows[np.arange(states.size), self.num_states + actions] = 1.0
        return vjp(net, rows, np.asarray(weights, dtype=float).reshape(-1, 1))

    def key(self, state) -> int:
        return int(state)


class StateEncoder:
    """Raw real-valued state; the net has one output per action."""

    def __init__(self, state_dim: int, num_actions: int):
        self.input_dim = state_dim
        self.num_actions = num_actions
        self.output_dim = num_actions

    def q_values(self, net: QNetwork, states) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, self.input_dim)
        return forward(net, states)

    def grad(self, net: QNetwork, states, actions, weights) -> np.ndarray:
        states = np.asarray(states, dtype=float).reshape(-1, self.input_dim)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        cot = np.zeros((states.shape[0], self.num_actions))
        cot[np.arange(states.shape[0]), actions] = np.asarray(weights, dtype=float).reshape(-1)
        return vjp(net, states, cot)

    def key(self, state) -> tuple:
        return tuple(float(v) for v in state)


def argmax_action(net: QNetwork, encoder, state, actions=None) -> tuple[int, float]:
    """Greedy action at ``state``; ties go to the lowest index."""
    q = encoder.q_values(net, [state])[0]
    if actions is None:
        actions = range(q.size)
    actions = list(actions)
    if not actions:
        raise ValidationError("action list is empty")
    best = max(actions, key=lambda u: (q[u], -u))
    return int(best), float(q[best])


def save_checkpoint(net: QNetwork, path, extra=None):
    doc = {"topology": net.topology.to_dict(), "theta": net.theta.tolist()}
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    doc = json.loads(Path(path).read_text())
    topo = MlpTopology(**doc["topology"])
    return QNetwork(topo, np.array(doc["theta"], dtype=float)), doc.get("meta", {})
