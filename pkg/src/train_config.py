from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, asdict
from typing import Optional

from src.config import get_logger
from src.constants import (
    ALGORITHMS, FORWARD_ALGORITHMS, REWARD_TARGET_ALGORITHMS, ORACLE_GREEDY, ORACLE_GCB, ORACLE_KINDS,
    MIX_SCHEDULES, MIX_SCHEDULE_FIRST_ORACLE, MIX_SCHEDULE_EXPONENTIAL, DEFAULT_ITERATIONS,
    DEFAULT_EPISODES_PER_ITERATION, DEFAULT_ACTIONS_LABELED_PER_STATE, DEFAULT_MIX_DECAY, DEFAULT_HORIZON,
    DEFAULT_NUM_RAYS, DEFAULT_FOV, DEFAULT_MAX_RANGE, DEFAULT_NUM_TREES, DEFAULT_MAX_DEPTH,
    DEFAULT_MIN_SAMPLES_LEAF, DEFAULT_BOOTSTRAP, ALGORITHM_CLI_NAMES, ERROR_UNKNOWN_KEYS,
)
from src.exceptions import InvalidConfigError, ConfigMismatchError
from src.learner import ForestParams
from src.models import ProblemSpec, SensorConfig

# Set up logger for this module
logger = get_logger(__name__)


@dataclass(frozen=True)
class SensorSection:
    num_rays: int = DEFAULT_NUM_RAYS
    fov: float = DEFAULT_FOV
    max_range: float = DEFAULT_MAX_RANGE


@dataclass(frozen=True)
class ForestSection:
    num_trees: int = DEFAULT_NUM_TREES
    max_depth: Optional[int] = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    feature_subsample: Optional[float] = None
    bootstrap: bool = DEFAULT_BOOTSTRAP


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str
    iterations: int = DEFAULT_ITERATIONS
    episodes_per_iteration: int = DEFAULT_EPISODES_PER_ITERATION
    actions_labeled_per_state: int = DEFAULT_ACTIONS_LABELED_PER_STATE
    mix_schedule: str = MIX_SCHEDULE_FIRST_ORACLE
    mix_decay: float = DEFAULT_MIX_DECAY
    horizon: int = DEFAULT_HORIZON
    budget: Optional[float] = None
    allow_revisits: bool = False
    oracle: Optional[str] = None
    seed: int = 0
    sensor: SensorSection = field(default_factory=SensorSection)
    forest: ForestSection = field(default_factory=ForestSection)

    @property
    def is_forward(self) -> bool:
        return self.algorithm in FORWARD_ALGORITHMS

    @property
    def uses_reward_target(self) -> bool:
        return self.algorithm in REWARD_TARGET_ALGORITHMS

    @property
    def oracle_kind(self) -> str:
        if self.oracle is not None:
            return self.oracle
        return ORACLE_GREEDY if self.budget is None else ORACLE_GCB

    @property
    def spec(self) -> ProblemSpec:
        if self.budget is None:
            return ProblemSpec.unconstrained(self.horizon, self.allow_revisits)
        return ProblemSpec.budgeted(self.horizon, self.budget, self.allow_revisits)

    @property
    def sensor_config(self) -> SensorConfig:
        return SensorConfig(num_rays=self.sensor.num_rays, fov=self.sensor.fov, max_range=self.sensor.max_range)

    @property
    def forest_params(self) -> ForestParams:
        return ForestParams(**asdict(self.forest))

    def alpha(self, iteration: int) -> float:
        """Oracle mixing weight for 1-based aggregation iteration i."""
        if self.mix_schedule == MIX_SCHEDULE_EXPONENTIAL:
            return self.mix_decay ** (iteration - 1)
        return 1.0 if iteration == 1 else 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["oracle"] = self.oracle_kind
        return data


def validate_train_config(config: TrainConfig) -> None:
    """
    Validate a training configuration, including the problem/policy/algorithm mapping.

    Args:
        config: The configuration to validate

    Raises:
        InvalidConfigError: If a value is out of range
        ConfigMismatchError: If the algorithm does not match the problem variant
    """
    if config.algorithm not in ALGORITHMS:
        raise InvalidConfigError(
            f"Invalid algorithm '{config.algorithm}'. Valid algorithms are: {', '.join(ALGORITHMS)}"
        )
    if config.iterations < 1:
        raise InvalidConfigError(f"Invalid iterations {config.iterations}: must be >= 1")
    if config.episodes_per_iteration < 1:
        raise InvalidConfigError(f"Invalid episodes_per_iteration {config.episodes_per_iteration}: must be >= 1")
    if config.actions_labeled_per_state < 1:
        raise InvalidConfigError(f"Invalid actions_labeled_per_state {config.actions_labeled_per_state}: must be >= 1")
    if config.mix_schedule not in MIX_SCHEDULES:
        raise InvalidConfigError(
            f"Invalid mix_schedule '{config.mix_schedule}'. Valid schedules are: {', '.join(MIX_SCHEDULES)}"
        )
    if not 0.0 <= config.mix_decay <= 1.0:
        raise InvalidConfigError(f"Invalid mix_decay {config.mix_decay}: expected 0 <= p <= 1")
    if config.oracle is not None and config.oracle not in ORACLE_KINDS:
        raise InvalidConfigError(f"Invalid oracle '{config.oracle}'. Valid oracles are: {', '.join(ORACLE_KINDS)}")
    if config.budget is not None and not (config.budget > 0 and math.isfinite(config.budget)):
        raise InvalidConfigError(f"Invalid budget {config.budget}: must be a finite value > 0")
    if config.seed < 0:
        raise InvalidConfigError(f"Invalid seed {config.seed}: must be >= 0")

    # Reward targets belong to the unconstrained problem, value-to-go targets to the budgeted one
    if config.uses_reward_target and config.budget is not None:
        raise ConfigMismatchError(
            f"Algorithm '{config.algorithm}' trains on one-step rewards and takes no budget; "
            f"use a Qval algorithm for budgeted problems"
        )
    if not config.uses_reward_target and config.budget is None:
        raise ConfigMismatchError(f"Algorithm '{config.algorithm}' is for budgeted problems and needs a budget")

    # Constructing these runs their own validation
    config.spec
    config.sensor_config
    config.forest_params


def _strict(cls, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfigError(ERROR_UNKNOWN_KEYS.format(where, ", ".join(unknown)))
    return data


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(_strict(TrainConfig, data, "training config"))
    if "algorithm" not in data:
        raise InvalidConfigError("Training config must name an algorithm")
    algorithm = data["algorithm"]
    data["algorithm"] = ALGORITHM_CLI_NAMES.get(algorithm, algorithm)
    data["sensor"] = SensorSection(**_strict(SensorSection, data.get("sensor", {}), "sensor"))
    data["forest"] = ForestSection(**_strict(ForestSection, data.get("forest", {}), "forest"))
    config = TrainConfig(**data)
    validate_train_config(config)
    return config


def load_train_config_from_file(path: str) -> TrainConfig:
    with open(path, "r") as f:
        data = json.load(f)

    try:
        return train_config_from_dict(data)
    except InvalidConfigError as e:
        raise type(e)(f"Error in {path}: {str(e)}")
    except (TypeError, ValueError) as e:
        raise InvalidConfigError(f"Error in {path}: {str(e)}")
