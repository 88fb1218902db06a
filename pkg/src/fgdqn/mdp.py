"""Finite MDPs and exact dynamic-programming solvers.

Transition kernels are stored as ``transition[x, u, y] = p(y | x, u)`` and
rewards as ``reward[x, u]``. Every solver here is a pure function of its
inputs and is used as ground truth for the learning algorithms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from fgdqn.validation import ValidationError, check_policy_vector, check_probability_rows

__all__ = [
    "TabularMdp",
    "bellman_operator",
    "q_bellman_operator",
    "greedy_policy",
    "value_iteration",
    "q_value_iteration",
    "policy_evaluation",
    "policy_iteration",
    "stationary_distribution",
    "ConvergenceError",
]

STOCHASTIC_ATOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValidationError(f"transition must have shape (s, a, s), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValidationError(f"reward shape {r.shape} does not match transition {p.shape[:2]}")
        if not np.all(np.isfinite(r)):
            raise ValidationError("reward contains non-finite entries")
        check_probability_rows(p.reshape(-1, p.shape[2]), atol=STOCHASTIC_ATOL, name="transition")
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError(f"discount must lie in [0, 1), got {self.discount}")
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        mdp = cls(np.array(doc["transition"], dtype=float), np.array(doc["reward"], dtype=float), doc["discount"])
        if mdp.num_states != doc.get("num_states", mdp.num_states) or mdp.num_actions != doc.get(
            "num_actions", mdp.num_actions
        ):
            raise ValidationError("num_states/num_actions disagree with array shapes")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def q_bellman_operator(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    """Q-value iteration map ``r + γ Σ_y p(y|x,u) max_v Q(y, v)``."""
    return mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1)


def bellman_operator(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """Optimality operator F on value functions; a γ-contraction in sup norm."""
    return (mdp.reward + mdp.discount * mdp.transition @ v).max(axis=1)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximiser, i.e. lowest action index on ties.
    return np.argmax(np.asarray(q), axis=1)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 100_000, v0=None):
    """Iterate ``V <- F(V)`` until ``‖F(V) − V‖∞ ≤ tol``.

    Returns ``(V, iterations_used)`` where ``iterations_used`` counts the
    updates after which the residual test first passed; ``max_iters`` flags
    that the tolerance was not reached.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    for it in range(max_iters + 1):
        fv = bellman_operator(mdp, v)
        residual = np.max(np.abs(fv - v))
        v = fv
        if residual <= tol:
            return v, it
    return v, max_iters


def q_value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    if tol <= 0:
        raise ValidationError("tol must be positive")
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iters):
        fq = q_bellman_operator(mdp, q)
        residual = np.max(np.abs(fq - q))
        q = fq
        if residual <= tol:
            break
    return q


def _policy_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.ndim == 1:
        check_policy_vector(policy, mdp.num_states, mdp.num_actions)
        probs = np.zeros((mdp.num_states, mdp.num_actions))
        probs[np.arange(mdp.num_states), policy.astype(int)] = 1.0
        return probs
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise ValidationError(f"randomized policy must have shape {(mdp.num_states, mdp.num_actions)}")
    check_probability_rows(policy, atol=STOCHASTIC_ATOL, name="policy")
    return policy.astype(float)


def policy_evaluation(mdp: TabularMdp, policy, tol: float = 1e-10, max_iters: int = 1_000_000) -> np.ndarray:
    """Value of a deterministic (length-s vector) or randomized (s×a) policy.

    Dense linear solve for up to 1000 states, fixed-point iteration beyond.
    """
    probs = _policy_matrix(mdp, policy)
    p_pi = np.einsum("xu,xuy->xy", probs, mdp.transition)
    r_pi = np.einsum("xu,xu->x", probs, mdp.reward)
    if mdp.num_states <= 1000:
        return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)
    v = np.zeros(mdp.num_states)
    for _ in range(max_iters):
        nv = r_pi + mdp.discount * p_pi @ v
        if np.max(np.abs(nv - v)) <= tol:
            return nv
        v = nv
    raise ConvergenceError("policy evaluation did not converge", np.max(np.abs(nv - v)))


def policy_iteration(mdp: TabularMdp, max_iters: int = 10_000):
    """Howard policy iteration; returns ``(policy, V)``.

    Improvement keeps the incumbent action unless another one is better by
    more than a round-off margin, so the loop cannot cycle between ties.
    """
    policy = np.zeros(mdp.num_states, dtype=int)
    for _ in range(max_iters):
        v = policy_evaluation(mdp, policy)
        q = mdp.reward + mdp.discount * mdp.transition @ v
        margin = 1e-12 * max(1.0, np.max(np.abs(q)))
        best = greedy_policy(q)
        incumbent = q[np.arange(mdp.num_states), policy]
        improve = q[np.arange(mdp.num_states), best] > incumbent + margin
        if not improve.any():
            # Canonicalise ties to the lowest index, matching greedy_policy.
            ties = q >= q.max(axis=1, keepdims=True) - margin
            return np.argmax(ties, axis=1), v
        policy = np.where(improve, best, policy)
    raise ConvergenceError("policy iteration did not stabilise", float("nan"))


def stationary_distribution(mdp: TabularMdp, policy, tol: float = 1e-12, max_iters: int = 1_000_000) -> np.ndarray:
    """Stationary law μ[x, u] of the state-action chain under ``policy``.

    Power iteration on the lazy chain ``(I + P)/2``, which shares the
    stationary law of ``P`` and is aperiodic.
    """
    probs = _policy_matrix(mdp, policy)
    p_pi = np.einsum("xu,xuy->xy", probs, mdp.transition)
    lazy = 0.5 * (np.eye(mdp.num_states) + p_pi)
    dist = np.full(mdp.num_states, 1.0 / mdp.num_states)
    residual = np.inf
    for _ in range(max_iters):
        nxt = dist @ lazy
        residual = np.max(np.abs(nxt - dist))
        dist = nxt
        if residual <= tol:
            break
    else:
        raise ConvergenceError("stationary distribution did not converge", residual)
    dist = np.clip(dist, 0.0, None)
    dist /= dist.sum()
    return dist[:, None] * probs
