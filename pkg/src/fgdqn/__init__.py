"""Full-gradient DQN with exact MDP oracles and baseline learners."""

from fgdqn.envs import CartPoleEnv, CartPoleParams, ForestParams, forest_build_mdp
from fgdqn.mdp import TabularMdp, policy_iteration, q_value_iteration, value_iteration
from fgdqn.qnet import MlpTopology, QNetwork, init_params
from fgdqn.trainers import StepSizeSchedule, TrainerConfig, train_off_policy, train_on_policy

__version__ = "0.1.0"
