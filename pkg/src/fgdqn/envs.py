"""Benchmark environments: forest management MDP and cart-pole balancing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np

from fgdqn.mdp import TabularMdp
from fgdqn.validation import ValidationError, check_random_state

WAIT, CUT = 0, 1
LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ForestParams:
    num_states: int = 10
    fire_prob: float = 0.05
    discount: float = 0.8

    def __post_init__(self):
        if self.num_states < 2:
            raise ValidationError("forest needs at least 2 states")
        if not 0.0 <= self.fire_prob <= 1.0:
            raise ValidationError(f"fire_prob must lie in [0, 1], got {self.fire_prob}")


def forest_build_mdp(params: ForestParams) -> TabularMdp:
    """Forest ages ``0..num_states-1``; action 0 waits, action 1 cuts.

    Waiting ages the forest by one (capped at the oldest age) unless a fire,
    with probability ``fire_prob``, resets it to 0. Cutting resets it to 0
    and pays the current age.
    """
    s, p = params.num_states, params.fire_prob
    transition = np.zeros((s, 2, s))
    for x in range(s):
        transition[x, WAIT, 0] += p
        transition[x, WAIT, min(x + 1, s - 1)] += 1.0 - p
        transition[x, CUT, 0] = 1.0
    reward = np.zeros((s, 2))
    reward[:, CUT] = np.arange(s, dtype=float)
    return TabularMdp(transition, reward, params.discount)


def round_robin_sampler(mdp: TabularMdp, rng=None) -> Iterator[tuple[int, int, int]]:
    """Endless stream of ``(x, u, x')`` cycling through pairs in lexicographic order."""
    rng = check_random_state(rng)
    cdf = np.cumsum(mdp.transition, axis=2)
    cdf[..., -1] = 1.0
    while True:
        for x in range(mdp.num_states):
            for u in range(mdp.num_actions):
                y = int(np.searchsorted(cdf[x, u], rng.random(), side="right"))
                yield x, u, y


@dataclass(frozen=True)
class CartPoleParams:
    # Defaults follow the classic-control CartPole-v0 source.
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_magnitude: float = 10.0
    time_step: float = 0.02
    angle_limit: float = 12 * 2 * math.pi / 360
    position_limit: float = 2.4
    max_episode_steps: int = 200

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_half_length", "time_step", "angle_limit", "position_limit"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.gravity < 0 or self.force_magnitude < 0:
            raise ValidationError("gravity and force_magnitude must be nonnegative")
        if self.max_episode_steps < 1:
            raise ValidationError("max_episode_steps must be >= 1")


class CartPoleState(NamedTuple):
    x: float
    x_dot: float
    theta: float
    theta_dot: float


class StepResult(NamedTuple):
    next_state: object
    reward: float
    terminal: bool
    # True when the episode ended only because of the step limit.
    truncated: bool = False


def cartpole_reset(rng) -> CartPoleState:
    return CartPoleState(*(float(v) for v in rng.uniform(-0.05, 0.05, size=4)))


def cartpole_dynamics(state, action: int, params: CartPoleParams) -> CartPoleState:
    """One explicit-Euler step of the frictionless cart-pole equations."""
    x, x_dot, theta, theta_dot = state
    force = params.force_magnitude if action == RIGHT else -params.force_magnitude
    total_mass = params.cart_mass + params.pole_mass
    polemass_length = params.pole_mass * params.pole_half_length
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (params.gravity * sin_t - cos_t * temp) / (
        params.pole_half_length * (4.0 / 3.0 - params.pole_mass * cos_t * cos_t / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos_t / total_mass
    tau = params.time_step
    return CartPoleState(
        x + tau * x_dot,
        x_dot + tau * x_acc,
        theta + tau * theta_dot,
        theta_dot + tau * theta_acc,
    )


def cartpole_step(state, action: int, params: CartPoleParams, steps_taken: int = 0) -> StepResult:
    """Advance one step; ``steps_taken`` counts steps already made this episode."""
    if action not in (LEFT, RIGHT):
        raise ValidationError(f"cart-pole action must be 0 or 1, got {action}")
    nxt = cartpole_dynamics(state, action, params)
    failed = abs(nxt.x) > params.position_limit or abs(nxt.theta) > params.angle_limit
    out_of_time = steps_taken + 1 >= params.max_episode_steps
    return StepResult(nxt, 1.0, failed or out_of_time, out_of_time and not failed)


class EpisodeOver(RuntimeError):
    """``step`` was called on an environment whose episode already ended."""


@dataclass
class CartPoleEnv:
    """Stateful episodic wrapper owning its RNG and step counter."""

    params: CartPoleParams = field(default_factory=CartPoleParams)
    seed: object = None
    num_actions: int = 2
    state_dim: int = 4

    def __post_init__(self):
        self.rng = check_random_state(self.seed)
        self.state = None
        self.steps = 0
        self.done = True

    def reset(self) -> CartPoleState:
        self.state = cartpole_reset(self.rng)
        self.steps = 0
        self.done = False
        return self.state

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeOver("reset() must be called after a terminal step")
        result = cartpole_step(self.state, action, self.params, self.steps)
        self.state = result.next_state
        self.steps += 1
        self.done = result.terminal
        return result

    def with_params(self, **overrides) -> "CartPoleEnv":
        return CartPoleEnv(replace(self.params, **overrides), self.seed)
