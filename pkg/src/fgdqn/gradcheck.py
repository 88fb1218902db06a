"""Finite-difference checks of network gradients and the full-gradient update.

The relative error of an analytic gradient ``g`` against a numerical one
``d`` is ``max_i |g_i - d_i| / max(‖g‖∞, ‖d‖∞)``: coordinate errors are
measured against the scale of the whole gradient, so coordinates that are
zero in exact arithmetic do not blow the ratio up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fgdqn.qnet import MlpTopology, QNetwork, StateEncoder, forward, grad_params, init_params
from fgdqn.replay import Transition
from fgdqn.trainers import full_gradient_direction


def central_difference(fn, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    theta = np.array(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        up = fn(theta)
        theta[i] = orig - h
        down = fn(theta)
        theta[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


def relative_error(analytic, numeric) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass
class ProbeResult:
    max_rel_error: float
    # layer -> (flat index, kind, analytic, numeric, scaled error)
    worst: dict = field(default_factory=dict)


def compare(net: QNetwork, analytic, numeric) -> ProbeResult:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), np.finfo(float).tiny)
    err = np.abs(analytic - numeric) / scale
    worst = {}
    for layer, slot in enumerate(net.slots):
        for kind, sl in (("weight", slot.w), ("bias", slot.b)):
            if sl is None:
                continue
            i = sl.start + int(np.argmax(err[sl]))
            if layer not in worst or err[i] > worst[layer][4]:
                worst[layer] = (i, kind, float(analytic[i]), float(numeric[i]), float(err[i]))
    return ProbeResult(relative_error(analytic, numeric), worst)


def _random_topology(rng, activation, input_dim=None, output_dim=None):
    depth = int(rng.integers(1, 4))
    return MlpTopology(
        int(input_dim or rng.integers(1, 6)),
        tuple(int(h) for h in rng.integers(2, 9, size=depth)),
        int(output_dim or rng.integers(1, 4)),
        activation,
    )


def _jitter(net, rng):
    # Nonzero biases so probes do not sit on symmetric points.
    net.theta += 0.1 * rng.normal(size=net.theta.size)
    return net


def _near_kink(net, x, margin):
    h = np.asarray(x, dtype=float)[None, :]
    for i in range(len(net.slots) - 1):
        z = h @ net.weights(i)
        if net.bias(i) is not None:
            z = z + net.bias(i)
        if np.min(np.abs(z)) < margin:
            return True
        h = np.maximum(z, 0.0)
    return False


def probe_qnet(rng, activation="gelu", h=1e-5, kink_margin=1e-3, corrupt=0.0):
    """One random (net, input, output) probe of ``grad_params``."""
    while True:
        topo = _random_topology(rng, activation)
        net = _jitter(init_params(topo, rng), rng)
        x = rng.normal(size=topo.input_dim)
        if activation != "relu" or not _near_kink(net, x, kink_margin):
            break
    k = int(rng.integers(topo.output_dim))
    analytic = grad_params(net, x, k) * (1.0 + corrupt)

    def f(theta):
        return forward(QNetwork(topo, theta), x)[k]

    return compare(net, analytic, central_difference(f, net.theta, h))


def instantaneous_bellman_error(net, transition, encoder, discount):
    """``½ (r + γ max_v Q(x', v; θ) − Q(x, u; θ))²`` with ``Z = r`` when terminal."""
    s, u, r, s_next, terminal = transition
    q = encoder.q_values(net, [s])[0, u]
    z = r if terminal else r + discount * encoder.q_values(net, [s_next])[0].max()
    return 0.5 * (z - q) ** 2


def probe_full_gradient(rng, activation="gelu", h=1e-5, num_actions=3, min_gap=1e-3, discount=None,
                        corrupt=0.0):
    """Compare one per-sample FG-DQN direction with central differences of ½δ².

    Deterministic transition; redrawn until the argmax at the next state is
    unique by at least ``min_gap``.
    """
    discount = float(rng.uniform(0.5, 0.99)) if discount is None else discount
    while True:
        topo = _random_topology(rng, activation, output_dim=num_actions)
        net = _jitter(init_params(topo, rng), rng)
        encoder = StateEncoder(topo.input_dim, num_actions)
        s, s_next = rng.normal(size=(2, topo.input_dim))
        q_next = np.sort(encoder.q_values(net, [s_next])[0])
        if q_next[-1] - q_next[-2] > min_gap:
            break
    t = Transition(s, int(rng.integers(num_actions)), float(rng.normal()), s_next, False)
    direction, _ = full_gradient_direction(net, [t], encoder, discount)
    direction = direction * (1.0 + corrupt)

    def f(theta):
        return instantaneous_bellman_error(QNetwork(topo, theta), t, encoder, discount)

    return compare(net, direction, central_difference(f, net.theta, h))


def run_suite(probes=50, seed=0, activation="gelu", h=1e-5, corrupt=0.0):
    """Both probe families; ``corrupt`` scales analytic gradients by ``1 + corrupt`` (negative control)."""
    rng = np.random.default_rng(seed)
    return {
        "qnet": [probe_qnet(rng, activation, h, corrupt=corrupt) for _ in range(probes)],
        "fgdqn": [probe_full_gradient(rng, activation, h, corrupt=corrupt) for _ in range(probes)],
    }
