from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.belief import Belief, extract_features_batch
from src.config import get_logger
from src.constants import (
    METRIC_FEATURES, HEURISTIC_CLI_NAMES, FEATURE_NAMES, FEATURE_TRANSLATION, ERROR_NO_FEASIBLE_ACTION,
)
from src.exceptions import InvalidConfigError, NoFeasibleActionError
from src.models import NodeSet, ProblemSpec, SensorConfig
from src.policies import Episode

# Set up logger for this module
logger = get_logger(__name__)

TRANSLATION_COLUMN = FEATURE_NAMES.index(FEATURE_TRANSLATION)


@dataclass(frozen=True)
class HeuristicPolicy:
    """Information-gain heuristic with an optional per-meter motion penalty."""
    metric: str
    motion_penalty: float = 0.0
    name: str = field(default="")

    def __post_init__(self):
        if self.metric not in METRIC_FEATURES:
            raise InvalidConfigError(
                f"Invalid metric '{self.metric}'. Valid metrics are: {', '.join(METRIC_FEATURES)}"
            )
        if not self.motion_penalty >= 0:
            raise InvalidConfigError(f"Invalid motion penalty {self.motion_penalty}: must be >= 0")
        if not self.name:
            cli = {v: k for k, v in HEURISTIC_CLI_NAMES.items()}[self.metric]
            object.__setattr__(self, "name", cli)

    @classmethod
    def from_cli_name(cls, cli_name: str, motion_penalty: float = 0.0) -> "HeuristicPolicy":
        if cli_name not in HEURISTIC_CLI_NAMES:
            raise InvalidConfigError(
                f"Unknown heuristic '{cli_name}'. Valid heuristics are: {', '.join(HEURISTIC_CLI_NAMES)}"
            )
        return cls(metric=HEURISTIC_CLI_NAMES[cli_name], motion_penalty=motion_penalty, name=cli_name)

    @property
    def column(self) -> int:
        return FEATURE_NAMES.index(METRIC_FEATURES[self.metric])

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features[:, self.column] - self.motion_penalty * features[:, TRANSLATION_COLUMN]

    def act(self, episode: Episode) -> int:
        return heuristic_act(self, episode.belief, episode.visited, episode.feasible(), episode.nodes,
                             episode.spec, episode.sensor, cost=episode.state.cost)


def heuristic_act(policy: HeuristicPolicy, belief: Belief, visited: Sequence[int], feasible: Sequence[int],
                  nodes: NodeSet, spec: ProblemSpec, cfg: SensorConfig, cost: Optional[float] = None) -> int:
    """
    argmax over the feasible set of metric - penalty * translation; lowest id on ties.

    Raises:
        NoFeasibleActionError: If the feasible set is empty
    """
    candidates = np.sort(np.asarray(feasible, dtype=np.int64))
    if candidates.size == 0:
        raise NoFeasibleActionError(ERROR_NO_FEASIBLE_ACTION.format(visited[-1], list(visited), cost or 0.0))
    features = extract_features_batch(belief, visited, candidates, nodes, spec, cfg, cost)
    return int(candidates[int(np.argmax(policy.scores(features)))])
