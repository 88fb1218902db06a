"""Run configuration: nested JSON documents with dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from fgdqn.envs import CartPoleEnv, CartPoleParams, ForestParams, forest_build_mdp
from fgdqn.qnet import ACTIVATIONS, MlpTopology
from fgdqn.trainers import ALGORITHMS, TrainerConfig
from fgdqn.validation import ValidationError

ENVIRONMENTS = ("forest", "cartpole")

PRESETS = {
    "forest": {
        "environment": {"name": "forest", "num_states": 10, "fire_prob": 0.05},
        "trainer": {
            "algorithm": "fgdqn",
            "schedule": {"kind": "polynomial", "base": 1e-2, "exponent": 0.6, "offset": 1e4},
            "discount": 0.8,
            "batch_size": 25,
            "target_sync_period": 100,
            "conditional_replay": True,
        },
        "network": {"hidden_dims": [200], "activation": "relu"},
        "budget": 10_000,
        "seeds": list(range(10)),
        "algorithms": ["dqn", "fgdqn"],
    },
    "cartpole": {
        "environment": {"name": "cartpole"},
        "trainer": {
            "algorithm": "fgdqn",
            "schedule": {"kind": "constant", "base": 1e-4},
            "discount": 0.99,
            "batch_size": 128,
            "target_sync_period": 10,
            "epsilon": 0.1,
            "conditional_replay": False,
            "optimizer": "adam",
        },
        "network": {"hidden_dims": [16, 32, 32], "activation": "relu"},
        "budget": 1500,
        "seeds": [0, 1, 2, 3, 4],
        "algorithms": ["dqn", "fgdqn"],
    },
}
PRESETS["forest_high"] = copy.deepcopy(PRESETS["forest"])
PRESETS["forest_high"]["environment"]["fire_prob"] = 0.01
PRESETS["forest_high"]["trainer"]["discount"] = 0.95


@dataclass
class RunConfig:
    environment: dict = field(default_factory=lambda: {"name": "forest"})
    trainer: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    budget: int = 10_000
    seeds: list = field(default_factory=lambda: [0])
    algorithms: list = field(default_factory=lambda: ["dqn", "fgdqn"])
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    # Construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        return cls(**copy.deepcopy(doc))

    @classmethod
    def preset(cls, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls.from_dict(PRESETS[name])

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, assignments) -> "RunConfig":
        doc = self.to_dict()
        for item in assignments:
            key, value = parse_assignment(item)
            set_dotted(doc, key, value)
        return RunConfig.from_dict(doc)

    # Validation and derived objects -------------------------------------

    def validate(self):
        name = self.environment.get("name")
        if name not in ENVIRONMENTS:
            raise ValidationError(f"environment.name must be one of {ENVIRONMENTS}, got {name!r}")
        self.trainer_config()
        self.build_environment()
        self.topology()
        if int(self.budget) != self.budget or self.budget < 0:
            raise ValidationError("budget must be a nonnegative integer")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            raise ValidationError("seeds must be a nonempty list of nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds must be distinct")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValidationError(f"unknown algorithms {bad}")
        if name == "cartpole" and "tabular_q" in [self.trainer.get("algorithm"), *self.algorithms]:
            raise ValidationError("tabular_q needs a finite environment")

    @property
    def discrete(self) -> bool:
        return self.environment["name"] == "forest"

    def trainer_config(self, seed=None, algorithm=None) -> TrainerConfig:
        doc = dict(self.trainer)
        if seed is not None:
            doc["seed"] = int(seed)
        if algorithm is not None:
            doc["algorithm"] = algorithm
        return TrainerConfig.from_dict(doc)

    def build_environment(self):
        env = {k: v for k, v in self.environment.items() if k != "name"}
        if self.discrete:
            unknown = set(env) - {"num_states", "fire_prob"}
            if unknown:
                raise ValidationError(f"unknown forest options: {sorted(unknown)}")
            discount = self.trainer.get("discount", TrainerConfig.discount)
            return forest_build_mdp(ForestParams(discount=discount, **env))
        known = {f.name for f in fields(CartPoleParams)}
        unknown = set(env) - known
        if unknown:
            raise ValidationError(f"unknown cartpole options: {sorted(unknown)}")
        return CartPoleEnv(CartPoleParams(**env))

    def topology(self) -> MlpTopology:
        net = dict(self.network)
        unknown = set(net) - {"hidden_dims", "activation", "output_bound"}
        if unknown:
            raise ValidationError(f"unknown network options: {sorted(unknown)}")
        if net.get("activation", "relu") not in ACTIVATIONS:
            raise ValidationError(f"network.activation must be one of {ACTIVATIONS}")
        if self.discrete:
            s = self.environment.get("num_states", ForestParams.num_states)
            return MlpTopology(s + 2, tuple(net.get("hidden_dims", (200,))), 1, net.get("activation", "relu"),
                               output_bound=net.get("output_bound"))
        return MlpTopology(4, tuple(net.get("hidden_dims", (16, 32, 32))), 2, net.get("activation", "relu"),
                           output_bound=net.get("output_bound"))


def parse_assignment(item: str):
    """``"a.b=1e-3"`` → ``("a.b", 0.001)``; values parse as JSON, else stay strings."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ValidationError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def set_dotted(doc: dict, key: str, value):
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        child = node.get(p)
        if child is None:
            child = node[p] = {}
        if not isinstance(child, dict):
            raise ValidationError(f"cannot set {key!r}: {p!r} is not a section")
        node = child
    node[parts[-1]] = value
