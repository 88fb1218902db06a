"""Scikit-learn style wrapper around the trainers.

``fit`` takes an environment rather than a design matrix: a ``TabularMdp``
(round-robin off-policy training) or an episodic environment such as
``CartPoleEnv``. ``predict`` maps states to greedy actions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from fgdqn.mdp import TabularMdp
from fgdqn.qnet import MlpTopology, StateActionEncoder, StateEncoder
from fgdqn.trainers import StepSizeSchedule, TrainerConfig, train_off_policy, train_on_policy
from fgdqn.validation import ValidationError


class DeepQLearner(BaseEstimator):
    """Q-learning with a neural approximator.

    Parameters
    ----------
    algorithm : {"fgdqn", "dqn", "double_dqn", "tabular_q"}
    budget : int
        Iterations for finite MDPs, episodes for episodic environments.
    step_size, schedule, exponent, offset
        Step size ``a0`` and its decay; ``schedule="polynomial"`` gives
        ``a0 / (1 + n/offset)^exponent``.
    discount : float or None
        Must match the MDP's discount when fitting a ``TabularMdp``; None
        takes it from the MDP (or 0.99 for episodic environments).
    random_state : int
        Seed of every random stream in the run.
    """

    def __init__(self, algorithm="fgdqn", budget=10_000, hidden_dims=(200,), activation="relu",
                 step_size=1e-2, schedule="polynomial", exponent=0.6, offset=1e4, discount=None,
                 batch_size=25, target_sync_period=100, epsilon=0.1, noise_amplitude=0.0,
                 conditional_replay=True, optimizer="sgd", random_state=0):
        self.algorithm = algorithm
        self.budget = budget
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.step_size = step_size
        self.schedule = schedule
        self.exponent = exponent
        self.offset = offset
        self.discount = discount
        self.batch_size = batch_size
        self.target_sync_period = target_sync_period
        self.epsilon = epsilon
        self.noise_amplitude = noise_amplitude
        self.conditional_replay = conditional_replay
        self.optimizer = optimizer
        self.random_state = random_state

    def _trainer_config(self, discount):
        schedule = StepSizeSchedule(self.schedule, self.step_size, self.exponent, self.offset)
        return TrainerConfig(
            algorithm=self.algorithm, schedule=schedule, discount=discount, batch_size=self.batch_size,
            target_sync_period=self.target_sync_period, epsilon=self.epsilon,
            noise_amplitude=self.noise_amplitude, conditional_replay=self.conditional_replay,
            optimizer=self.optimizer, seed=int(self.random_state),
        )

    def fit(self, env, y=None):
        if y is not None:
            raise ValidationError("y is not used; rewards come from the environment")
        if isinstance(env, TabularMdp):
            discount = env.discount if self.discount is None else self.discount
            config = self._trainer_config(discount)
            s, a = env.num_states, env.num_actions
            topo = MlpTopology(s + a, tuple(self.hidden_dims), 1, self.activation)
            model, self.metrics_ = train_off_policy(env, config, self.budget, topo)
            self.encoder_ = StateActionEncoder(s, a)
            self.n_states_ = s
        elif hasattr(env, "reset") and hasattr(env, "step"):
            config = self._trainer_config(0.99 if self.discount is None else self.discount)
            topo = MlpTopology(env.state_dim, tuple(self.hidden_dims), env.num_actions, self.activation)
            model, self.metrics_ = train_on_policy(env, config, self.budget, topology=topo)
            self.encoder_ = StateEncoder(env.state_dim, env.num_actions)
            self.n_states_ = None
        else:
            raise ValidationError(f"cannot fit on {type(env).__name__}; pass a TabularMdp or an episodic env")
        self.model_ = model
        self.n_actions_ = env.num_actions
        return self

    def _check_states(self, states):
        if self.n_states_ is None:
            return check_array(states, ensure_2d=True, dtype=float)
        x = np.asarray(states)
        if x.ndim != 1 or not np.issubdtype(x.dtype, np.integer):
            raise ValidationError("finite-MDP states must be a 1-d integer array")
        if x.size and (x.min() < 0 or x.max() >= self.n_states_):
            raise ValidationError(f"states must lie in [0, {self.n_states_})")
        return x

    def q_values(self, states) -> np.ndarray:
        check_is_fitted(self, "model_")
        x = self._check_states(states)
        if isinstance(self.model_, np.ndarray):
            return self.model_[x]
        return self.encoder_.q_values(self.model_, x)

    def predict(self, states) -> np.ndarray:
        """Greedy action per state; ties go to the lowest action index."""
        return np.argmax(self.q_values(states), axis=1)

    def greedy_policy(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.n_states_ is None:
            raise ValidationError("greedy_policy needs a finite state space")
        return self.predict(np.arange(self.n_states_))
