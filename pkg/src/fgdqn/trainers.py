"""Learning updates and training loops.

Update rules
------------
* ``q_learning_step``: tabular Q-learning, one component per step.
* ``dqn_step``: semi-gradient step; the target is held fixed and read from
  a target network (DQN) or selected by the online net and evaluated by the
  target net (Double DQN).
* ``fgdqn_step``: full-gradient step on ½δ², differentiating through both
  the online prediction and the max-term of the target.

All network updates average their per-sample directions over the batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from fgdqn import metrics as M
from fgdqn.envs import round_robin_sampler
from fgdqn.mdp import TabularMdp, policy_iteration, q_value_iteration
from fgdqn.qnet import MlpTopology, QNetwork, StateActionEncoder, StateEncoder, init_params
from fgdqn.replay import Batch, ReplayBuffer, Transition, as_batch, buffer_batch
from fgdqn.validation import ValidationError, check_finite, check_random_state

ALGORITHMS = ("tabular_q", "dqn", "double_dqn", "fgdqn")


@dataclass(frozen=True)
class StepSizeSchedule:
    kind: str = "constant"
    base: float = 1e-4
    exponent: float = 1.0
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if not self.base > 0:
            raise ValidationError("step-size base must be positive")
        if self.kind == "polynomial":
            if not 0.5 < self.exponent <= 1.0:
                raise ValidationError("polynomial exponent must lie in (0.5, 1]")
            if not self.offset > 0:
                raise ValidationError("polynomial offset must be positive")

    def __call__(self, n: int) -> float:
        return step_size(self, n)


def step_size(schedule: StepSizeSchedule, n: int) -> float:
    """``a0`` for constant schedules, ``a0 / (1 + n/n0)^κ`` for polynomial ones."""
    if n < 0:
        raise ValidationError("iteration index must be nonnegative")
    if schedule.kind == "constant":
        return schedule.base
    return schedule.base / (1.0 + n / schedule.offset) ** schedule.exponent


@dataclass(frozen=True)
class TrainerConfig:
    algorithm: str = "fgdqn"
    schedule: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    discount: float = 0.99
    batch_size: int = 25
    target_sync_period: int = 100
    epsilon: float = 0.1
    noise_amplitude: float = 0.0
    conditional_replay: bool = True
    replay_capacity: int = 100_000
    sequential_inner_updates: bool = False
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", StepSizeSchedule(**self.schedule))
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.target_sync_period < 1:
            raise ValidationError("target_sync_period must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        if self.noise_amplitude < 0:
            raise ValidationError("noise_amplitude must be nonnegative")
        if not 0.0 <= self.discount < 1.0:
            raise ValidationError("discount must lie in [0, 1)")
        if self.replay_capacity < 1:
            raise ValidationError("replay_capacity must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError("optimizer must be 'sgd' or 'adam'")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown trainer options: {sorted(unknown)}")
        return cls(**doc)


class TdTerms(NamedTuple):
    delta: float
    grad_current: np.ndarray
    grad_target: np.ndarray


def _take(q, actions):
    return q[np.arange(q.shape[0]), actions]


def q_learning_step(q, transition, a_n, discount, out=None):
    """Move only the visited component toward ``r + γ max_v Q(x', v)``.

    Returns a new table unless ``out`` is given, which is updated in place.
    """
    x, u, r, y = transition[:4]
    terminal = transition[4] if len(transition) > 4 else False
    q_new = np.array(q, dtype=float) if out is None else out
    target = r if terminal else r + discount * q_new[y].max()
    q_new[x, u] += a_n * (target - q_new[x, u])
    return q_new


def compute_td_terms(net, target_net, transition: Transition, mode, encoder, discount) -> TdTerms:
    """TD error and both gradient occurrences for a single transition.

    ``grad_target`` is ``γ ∇θ Q(x', v*; θ)`` for ``fgdqn`` and zero for the
    semi-gradient modes, whose target does not depend on θ.
    """
    if mode not in ("dqn", "double_dqn", "fgdqn"):
        raise ValidationError(f"unknown mode {mode!r}")
    if mode != "fgdqn" and target_net is None:
        raise ValidationError(f"mode {mode!r} needs a target network")
    s, u, r, s_next, terminal = transition
    q_sa = float(encoder.q_values(net, [s])[0, u])
    grad_current = encoder.grad(net, [s], [u], [1.0])
    grad_target = np.zeros_like(grad_current)
    if terminal:
        z = r
    elif mode == "fgdqn":
        q_next = encoder.q_values(net, [s_next])[0]
        v = int(np.argmax(q_next))
        z = r + discount * q_next[v]
        grad_target = discount * encoder.grad(net, [s_next], [v], [1.0])
    elif mode == "dqn":
        z = r + discount * encoder.q_values(target_net, [s_next])[0].max()
    else:
        v = int(np.argmax(encoder.q_values(net, [s_next])[0]))
        z = r + discount * encoder.q_values(target_net, [s_next])[0, v]
    return TdTerms(float(z - q_sa), grad_current, grad_target)


def semi_gradient_direction(net, target_net, batch, encoder, discount, double=False):
    """Batch mean of ``δ ∇θ Q(x, u; θ)`` with a frozen target; returns ``(direction, δ)``."""
    b = as_batch(batch)
    q_sa = _take(encoder.q_values(net, b.states), b.actions)
    q_next_target = encoder.q_values(target_net, b.next_states)
    if double:
        v = np.argmax(encoder.q_values(net, b.next_states), axis=1)
        boot = _take(q_next_target, v)
    else:
        boot = q_next_target.max(axis=1)
    z = b.rewards + discount * np.where(b.terminals, 0.0, boot)
    delta = z - q_sa
    return encoder.grad(net, b.states, b.actions, delta / len(b)), delta


def dqn_step(net, target_net, batch, a_n, encoder, discount, double=False, optimizer=None):
    """``θ ← θ + a_n · mean(δ ∇θ Q(x, u; θ))``; the target net is not touched."""
    direction, _ = semi_gradient_direction(net, target_net, batch, encoder, discount, double)
    _apply(net, direction, a_n, optimizer, sign=+1.0)
    return net


def double_dqn_step(net, target_net, batch, a_n, encoder, discount, optimizer=None):
    return dqn_step(net, target_net, batch, a_n, encoder, discount, double=True, optimizer=optimizer)


def conditional_targets(net, buf: ReplayBuffer, keys, encoder, discount) -> np.ndarray:
    """Average of ``r + γ max_v Q(x', v; θ)`` over stored tuples sharing each key.

    Uses the buffer's per-key next-state histograms, so the cost is one
    forward pass over the distinct next states involved.
    """
    summaries = [buf.conditional_summary(k) for k in keys]
    next_keys = {}
    for _, _, hist in summaries:
        for (nk, term), _c in hist.items():
            if not term and nk not in next_keys:
                next_keys[nk] = len(next_keys)
    if next_keys:
        reps = np.array([buf.representative(nk) for nk in next_keys], dtype=float)
        max_q = encoder.q_values(net, reps).max(axis=1)
    out = np.empty(len(keys))
    for i, (count, reward_sum, hist) in enumerate(summaries):
        boot = sum(c * max_q[next_keys[nk]] for (nk, term), c in hist.items() if not term)
        out[i] = (reward_sum + discount * boot) / count
    return out


def full_gradient_direction(net, batch, encoder, discount, buf=None, conditional_replay=False):
    """Batch mean of ``δ̄ (γ ∇θ Q(x', v*; θ) − ∇θ Q(x, u; θ))``.

    ``δ̄`` is the per-sample TD error, or with ``conditional_replay`` the TD
    error whose target is averaged over every stored tuple with the same
    (state, action). The gradient factor always uses the sample's own
    next state. Returns ``(direction, δ̄)``; the descent step is
    ``θ ← θ − a_n · direction``.
    """
    b = as_batch(batch)
    n = len(b)
    q_sa = _take(encoder.q_values(net, b.states), b.actions)
    q_next = encoder.q_values(net, b.next_states)
    v_star = np.argmax(q_next, axis=1)
    if conditional_replay:
        if buf is None:
            raise ValidationError("conditional replay needs the replay buffer")
        keys = [buf.key_of(s, u) for s, u in zip(b.states if b.states.ndim > 1 else b.states.tolist(), b.actions)]
        z = conditional_targets(net, buf, keys, encoder, discount)
    else:
        z = b.rewards + discount * np.where(b.terminals, 0.0, q_next.max(axis=1))
    delta = z - q_sa
    live = ~b.terminals
    states = np.concatenate([b.states, b.next_states[live]])
    actions = np.concatenate([b.actions, v_star[live]])
    weights = np.concatenate([-delta / n, discount * delta[live] / n])
    return encoder.grad(net, states, actions, weights), delta


def fgdqn_step(net, batch, buf, a_n, encoder, discount, noise_amplitude=0.0, rng=None,
               conditional_replay=True, optimizer=None):
    """``θ ← θ − a_n · (mean full-gradient direction + noise_amplitude · ξ)``, ξ ~ U[-1, 1]^d."""
    direction, _ = full_gradient_direction(net, batch, encoder, discount, buf, conditional_replay)
    if noise_amplitude > 0:
        direction = direction + noise_amplitude * check_random_state(rng).uniform(-1.0, 1.0, size=direction.size)
    _apply(net, direction, a_n, optimizer, sign=-1.0)
    return net


class Adam:
    """Diagonal Adam preconditioner applied to an update direction."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def __call__(self, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def _apply(net, direction, a_n, optimizer, sign):
    if optimizer is not None:
        direction = optimizer(direction)
    net.theta += sign * a_n * direction
    check_finite(net.theta)


def target_sync(net: QNetwork, target_net: QNetwork, n: int, period: int) -> QNetwork:
    """Copy θ into the target net when ``n`` is a multiple of ``period``."""
    if period < 1:
        raise ValidationError("sync period must be >= 1")
    if n % period == 0:
        target_net.theta[:] = net.theta
    return target_net


def epsilon_greedy(net, encoder, state, epsilon, rng) -> int:
    """Uniform action with probability ε, otherwise the lowest-index greedy action."""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(encoder.num_actions))
    return int(np.argmax(encoder.q_values(net, [state])[0]))


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def seed_streams(seed):
    """Independent generators for each random consumer of a run."""
    names = ("init", "sampler", "replay", "explore", "noise", "env")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def _update(net, target_net, batch, buf, a_n, encoder, config, rngs, optimizer):
    alg = config.algorithm
    if alg == "fgdqn":
        fgdqn_step(net, batch, buf, a_n, encoder, config.discount, config.noise_amplitude, rngs["noise"],
                   config.conditional_replay, optimizer)
    else:
        dqn_step(net, target_net, batch, a_n, encoder, config.discount, alg == "double_dqn", optimizer)


def _apply_batch(net, target_net, buf, idx, a_n, encoder, config, rngs, optimizer):
    # Overflow on a diverging run surfaces as FloatingPointError from the finiteness check.
    with np.errstate(over="ignore", invalid="ignore"):
        _apply_batch_unchecked(net, target_net, buf, idx, a_n, encoder, config, rngs, optimizer)


def _apply_batch_unchecked(net, target_net, buf, idx, a_n, encoder, config, rngs, optimizer):
    if config.sequential_inner_updates:
        for i in idx:
            _update(net, target_net, buffer_batch(buf, [i]), buf, a_n, encoder, config, rngs, optimizer)
    else:
        _update(net, target_net, buffer_batch(buf, idx), buf, a_n, encoder, config, rngs, optimizer)


def train_off_policy(mdp: TabularMdp, config: TrainerConfig, iterations: int, topology: MlpTopology | None = None,
                     config_doc=None, on_iteration=None):
    """Round-robin off-policy training on a finite MDP.

    Each iteration draws the next ``(x, u, x')`` from the round-robin
    sampler, stores it, and applies one update: a tabular Q-learning step
    for ``tabular_q``, otherwise one minibatch step. Returns
    ``(model, RunMetrics)`` where ``model`` is the Q-table or the network.
    """
    if abs(config.discount - mdp.discount) > 1e-12:
        raise ValidationError(f"config discount {config.discount} differs from the MDP's {mdp.discount}")
    if iterations < 0:
        raise ValidationError("iteration budget must be nonnegative")
    rngs = seed_streams(config.seed)
    s, a = mdp.num_states, mdp.num_actions
    optimal, _ = policy_iteration(mdp)
    run = M.RunMetrics(seed=config.seed, config_hash=config_hash(config_doc or config.to_dict()))
    sampler = round_robin_sampler(mdp, rngs["sampler"])
    mu = np.full((s, a), 1.0 / (s * a))
    visits = np.zeros((s, a), dtype=np.int64)

    if config.algorithm == "tabular_q":
        q = np.zeros((s, a))
        for n in range(iterations):
            x, u, y = next(sampler)
            visits[x, u] += 1
            r = mdp.reward[x, u]
            z = r + mdp.discount * q[y].max()
            run.dqn_bellman_error.append(float((z - q[x, u]) ** 2))
            q_learning_step(q, (x, u, r, y), step_size(config.schedule, n), mdp.discount, out=q)
            run.true_bellman_error.append(M.true_bellman_error_table(q, mdp, mu))
            run.hamming_distance.append(M.hamming_distance(np.argmax(q, axis=1), optimal))
        run.visit_counts = visits.tolist()
        return q, run

    if topology is None:
        topology = MlpTopology(s + a, (200,), 1, "relu")
    encoder = StateActionEncoder(s, a)
    if topology.input_dim != encoder.input_dim or topology.output_dim != 1:
        raise ValidationError(f"forest networks need input_dim {encoder.input_dim} and output_dim 1")
    net = init_params(topology, rngs["init"])
    target_net = net.copy()
    buf = ReplayBuffer(config.replay_capacity, (), indexed=True, key_fn=int)
    optimizer = Adam(net.num_params) if config.optimizer == "adam" else None
    all_states = np.arange(s)
    for n in range(iterations):
        x, u, y = next(sampler)
        visits[x, u] += 1
        buf.push(Transition(x, u, mdp.reward[x, u], y, False))
        idx = buf.sample_indices(config.batch_size, rngs["replay"])
        with np.errstate(over="ignore", invalid="ignore"):
            run.dqn_bellman_error.append(M.dqn_bellman_error(net, buffer_batch(buf, idx), encoder, mdp.discount))
        try:
            _apply_batch(net, target_net, buf, idx, step_size(config.schedule, n), encoder, config, rngs, optimizer)
        except FloatingPointError:
            run.diverged = True
            break
        if config.algorithm != "fgdqn":
            target_sync(net, target_net, n + 1, config.target_sync_period)
        with np.errstate(over="ignore", invalid="ignore"):
            q_all = encoder.q_values(net, all_states)
        if not np.all(np.isfinite(q_all)):
            run.diverged = True
            break
        run.true_bellman_error.append(M.true_bellman_error_table(q_all, mdp, mu))
        run.hamming_distance.append(M.hamming_distance(np.argmax(q_all, axis=1), optimal))
        if on_iteration is not None:
            on_iteration(n, net)
    run.visit_counts = visits.tolist()
    return net, run


def train_on_policy(env, config: TrainerConfig, num_episodes: int, max_steps: int | None = None,
                    topology: MlpTopology | None = None, config_doc=None):
    """Episodic ε-greedy training (one update per environment step).

    Every step stores the transition, samples a minibatch of ``batch_size``
    from replay, and applies the configured update. Target networks of the
    DQN baselines are synced every ``target_sync_period`` episodes.
    """
    if num_episodes < 0:
        raise ValidationError("episode budget must be nonnegative")
    rngs = seed_streams(config.seed)
    if hasattr(env, "rng"):
        env.rng = rngs["env"]
    encoder = StateEncoder(env.state_dim, env.num_actions)
    if topology is None:
        topology = MlpTopology(env.state_dim, (16, 32, 32), env.num_actions, "relu")
    if topology.input_dim != encoder.input_dim or topology.output_dim != encoder.output_dim:
        raise ValidationError("network shape does not match the environment")
    net = init_params(topology, rngs["init"])
    target_net = net.copy()
    if config.algorithm == "tabular_q":
        raise ValidationError("tabular_q needs a finite MDP; use train_off_policy")
    if config.conditional_replay and config.algorithm == "fgdqn":
        raise ValidationError("conditional replay needs discrete states; disable it for continuous environments")
    buf = ReplayBuffer(config.replay_capacity, (env.state_dim,), indexed=False)
    optimizer = Adam(net.num_params) if config.optimizer == "adam" else None
    run = M.RunMetrics(seed=config.seed, config_hash=config_hash(config_doc or config.to_dict()))
    max_steps = max_steps or getattr(env.params, "max_episode_steps", 200)
    n = 0
    for episode in range(num_episodes):
        state = np.asarray(env.reset(), dtype=float)
        total, discounted, weight, errors = 0.0, 0.0, 1.0, []
        for t in range(max_steps):
            action = epsilon_greedy(net, encoder, state, config.epsilon, rngs["explore"])
            result = env.step(action)
            nxt = np.asarray(result.next_state, dtype=float)
            buf.push(Transition(state, action, result.reward, nxt, result.terminal))
            total += result.reward
            discounted += weight * result.reward
            weight *= config.discount
            idx = buf.sample_indices(config.batch_size, rngs["replay"])
            with np.errstate(over="ignore", invalid="ignore"):
                err = M.dqn_bellman_error(net, buffer_batch(buf, idx), encoder, config.discount)
            errors.append(err)
            try:
                _apply_batch(net, target_net, buf, idx, step_size(config.schedule, n), encoder, config, rngs,
                             optimizer)
            except FloatingPointError:
                run.diverged = True
                break
            n += 1
            state = nxt
            if result.terminal:
                break
        run.dqn_bellman_error.append(float(np.mean(errors)) if errors else float("nan"))
        run.episode_reward.append(total)
        run.episode_length.append(t + 1)
        run.discounted_return.append(discounted)
        if run.diverged:
            break
        if config.algorithm != "fgdqn":
            target_sync(net, target_net, episode + 1, config.target_sync_period)
    return net, run
