"""Bellman errors, policy distances, reward curves and seed aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from fgdqn.replay import as_batch
from fgdqn.validation import ValidationError, check_distribution


@dataclass
class RunMetrics:
    """Series recorded by one training run.

    Off-policy runs fill ``dqn_bellman_error``, ``true_bellman_error`` and
    ``hamming_distance`` once per iteration. Episodic runs fill the episode
    series and store the episode-mean sampled Bellman error in
    ``dqn_bellman_error``.
    """

    seed: int = 0
    config_hash: str = ""
    dqn_bellman_error: list = field(default_factory=list)
    true_bellman_error: list = field(default_factory=list)
    hamming_distance: list = field(default_factory=list)
    episode_reward: list = field(default_factory=list)
    episode_length: list = field(default_factory=list)
    discounted_return: list = field(default_factory=list)
    # Off-policy only: visits per (state, action), for the frequent-updates check.
    visit_counts: list = field(default_factory=list)
    diverged: bool = False

    @property
    def episodic(self) -> bool:
        return bool(self.episode_reward)

    def columns(self, episodic=None) -> dict:
        episodic = self.episodic if episodic is None else episodic
        if episodic:
            return {
                "episode": list(range(1, len(self.episode_reward) + 1)),
                "episode_reward": self.episode_reward,
                "episode_length": self.episode_length,
                "moving_average_reward": moving_average(self.episode_reward, 100),
                "discounted_return": self.discounted_return,
                "dqn_bellman_error": self.dqn_bellman_error,
            }
        cols = {"iter": list(range(1, len(self.dqn_bellman_error) + 1)),
                "dqn_bellman_error": self.dqn_bellman_error,
                "running_bellman_error": running_mean(self.dqn_bellman_error)}
        cols["true_bellman_error"] = self.true_bellman_error
        cols["hamming_distance"] = self.hamming_distance
        return cols

    def to_csv(self, episodic=None) -> str:
        cols = self.columns(episodic)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in zip(*cols.values()):
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"seed": self.seed, "config_hash": self.config_hash, "diverged": self.diverged}
        for name, series in (("dqn_bellman_error", self.dqn_bellman_error),
                             ("true_bellman_error", self.true_bellman_error),
                             ("hamming_distance", self.hamming_distance),
                             ("episode_reward", self.episode_reward)):
            if series:
                out[f"final_{name}"] = series[-1]
        if self.dqn_bellman_error:
            out["final_running_bellman_error"] = running_mean(self.dqn_bellman_error)[-1]
        if self.episode_reward:
            ma = moving_average(self.episode_reward, 100)
            out["final_moving_average_reward"] = ma[-1]
            out["episodes"] = len(self.episode_reward)
            # Conventional solved test: undiscounted 100-episode mean >= 195.
            out["solved_at_episode"] = next((i + 100 for i, m in enumerate(ma[99:]) if m >= 195.0), None)
            if self.discounted_return:
                out["max_moving_average_discounted_return"] = max(moving_average(self.discounted_return, 100))
        else:
            out["iterations"] = len(self.dqn_bellman_error)
        if self.visit_counts:
            out["min_state_action_visits"] = int(np.min(self.visit_counts))
            out["max_state_action_visits"] = int(np.max(self.visit_counts))
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class AggregateStats:
    mean: np.ndarray
    std: np.ndarray
    half_width: np.ndarray
    num_seeds: int

    @property
    def ci_low(self):
        return self.mean - self.half_width

    @property
    def ci_high(self):
        return self.mean + self.half_width


def dqn_bellman_error(net, batch, encoder, discount) -> float:
    """Mean of ``(r + γ max_v Q(x', v; θ) − Q(x, u; θ))²`` over the batch; ``Z = r`` when terminal."""
    b = as_batch(batch)
    q_sa = encoder.q_values(net, b.states)[np.arange(len(b)), b.actions]
    boot = encoder.q_values(net, b.next_states).max(axis=1)
    z = b.rewards + discount * np.where(b.terminals, 0.0, boot)
    return float(np.mean((z - q_sa) ** 2))


def true_bellman_error_table(q, mdp, weights=None) -> float:
    """μ-weighted squared residual of the Q dynamic-programming equation.

    The expectation over next states sits inside the square.
    """
    q = np.asarray(q, dtype=float)
    if weights is None:
        weights = np.full(q.shape, 1.0 / q.size)
    else:
        weights = check_distribution(weights, q.shape)
    residual = mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1) - q
    return float(np.sum(weights * residual**2))


def true_bellman_error(net, mdp, weights=None, encoder=None) -> float:
    """True Bellman error of a network (or a plain Q-table) on a finite MDP."""
    if encoder is None and isinstance(net, np.ndarray):
        return true_bellman_error_table(net, mdp, weights)
    if encoder is None:
        from fgdqn.qnet import StateActionEncoder

        encoder = StateActionEncoder(mdp.num_states, mdp.num_actions)
    q = encoder.q_values(net, np.arange(mdp.num_states))
    return true_bellman_error_table(q, mdp, weights)


def hamming_distance(policy_a, policy_b) -> int:
    a, b = np.asarray(policy_a), np.asarray(policy_b)
    if a.shape != b.shape:
        raise ValidationError(f"policy lengths differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def greedy_policy_of_net(net, encoder, num_states: int) -> np.ndarray:
    # argmax picks the lowest index among ties.
    return np.argmax(encoder.q_values(net, np.arange(num_states)), axis=1)


def moving_average(series, window: int) -> list:
    """Trailing mean over the last ``min(window, i + 1)`` entries."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return []
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    out = (c[idx] - c[lo]) / (idx - lo)
    if window == 1:
        out = x.copy()
    return out.tolist()


def running_mean(series) -> list:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return []
    return (np.cumsum(x) / np.arange(1, x.size + 1)).tolist()


def aggregate(series_list, student_t=False, confidence=0.95) -> AggregateStats:
    """Pointwise mean, sample sd and CI half-width across seeds.

    Series are truncated to the shortest one. The default half-width is the
    normal approximation ``1.96 sd / √n``.
    """
    if len(series_list) < 2:
        raise ValidationError("aggregation needs at least 2 runs")
    length = min(len(s) for s in series_list)
    data = np.array([np.asarray(s, dtype=float)[:length] for s in series_list])
    k = data.shape[0]
    mean = data.mean(axis=0)
    sd = data.std(axis=0, ddof=1)
    if student_t or confidence != 0.95:
        from scipy import stats  # deferred: slow import, rarely needed
    if student_t:
        crit = stats.t.ppf(0.5 + confidence / 2, k - 1)
    else:
        crit = 1.96 if confidence == 0.95 else stats.norm.ppf(0.5 + confidence / 2)
    return AggregateStats(mean, sd, crit * sd / math.sqrt(k), k)


def aggregate_runs(runs, field_name="hamming_distance", **kwargs) -> AggregateStats:
    return aggregate([getattr(r, field_name) for r in runs], **kwargs)


def hamming_subsample(series, stride: int) -> list:
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    return list(series[::stride])


def summary_json(summaries, config) -> str:
    return json.dumps({"config": config, "runs": summaries}, indent=2, sort_keys=True)
