from __future__ import annotations

from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from src.belief import Belief, belief_update, extract_features_batch
from src.config import get_logger
from src.constants import ORACLE_GREEDY, POLICY_RANDOM, POLICY_ORACLE
from src.exceptions import InvalidConfigError, NoFeasibleActionError
from src.models import ProblemSpec
from src.oracles import oracle_action, validate_oracle_kind
from src.rng import child_rng
from src.utility import CoverageInstance, CoverageState, feasible_actions

# Set up logger for this module
logger = get_logger(__name__)


class Episode:
    """
    One rollout in progress: the hidden instance, the coverage state, the belief and a private random stream.

    `t` is the 1-based index of the next action, so an episode runs for t = 1..T.
    """

    def __init__(self, instance: CoverageInstance, spec: ProblemSpec,
                 rng: Optional[np.random.Generator] = None, world_index: int = 0):
        self.instance = instance
        self.spec = spec
        self.rng = rng if rng is not None else child_rng(0)
        self.world_index = world_index
        self.state = CoverageState.start(instance)
        start = self.state.current
        empty = Belief.empty(instance.world.dims, instance.world.resolution)
        self.belief = belief_update(empty, start, instance.measurement(start))

    @property
    def nodes(self):
        return self.instance.nodes

    @property
    def sensor(self):
        return self.instance.cfg

    @property
    def visited(self):
        return self.state.visited

    @property
    def t(self) -> int:
        return len(self.state.visited)

    @property
    def steps_remaining(self) -> int:
        return self.spec.horizon - self.t + 1

    def feasible(self) -> np.ndarray:
        return feasible_actions(self.state, self.spec)

    def features(self, candidates: Sequence[int]) -> np.ndarray:
        return extract_features_batch(self.belief, self.state.visited, candidates, self.nodes,
                                      self.spec, self.sensor, cost=self.state.cost)

    def advance(self, action: int) -> float:
        """
        Execute an action: move, observe, update the belief.

        Raises:
            NoFeasibleActionError: If the action is not in the feasible set
        """
        action = int(action)
        if action not in set(self.feasible().tolist()):
            raise NoFeasibleActionError(f"Action {action} is not feasible at t={self.t}")
        step_reward = self.state.apply(action)
        self.belief = belief_update(self.belief, action, self.instance.measurement(action))
        return step_reward


@runtime_checkable
class Policy(Protocol):
    name: str

    def act(self, episode: Episode) -> int:
        ...


def require_feasible(episode: Episode) -> np.ndarray:
    feasible = episode.feasible()
    if feasible.size == 0:
        raise NoFeasibleActionError(f"No feasible action at t={episode.t} from node {episode.state.current}")
    return feasible


class RandomPolicy:
    """Uniformly random feasible action, drawn from the episode's stream."""

    def __init__(self, name: str = POLICY_RANDOM):
        self.name = name

    def act(self, episode: Episode) -> int:
        feasible = require_feasible(episode)
        return int(feasible[int(episode.rng.integers(0, feasible.size))])


class ClairvoyantPolicy:
    """The oracle, reading the hidden world through the episode's instance."""

    def __init__(self, kind: str = ORACLE_GREEDY, name: str = POLICY_ORACLE):
        validate_oracle_kind(kind)
        self.kind = kind
        self.name = name

    def act(self, episode: Episode) -> int:
        return oracle_action(self.kind, episode.state, episode.spec, episode.steps_remaining)


class MixturePolicy:
    """Per-step Bernoulli(alpha) choice between the oracle and the learner."""

    def __init__(self, oracle: Policy, learner: Policy, alpha: float, name: str = "mixture"):
        if not 0.0 <= alpha <= 1.0:
            raise InvalidConfigError(f"Invalid mixing weight {alpha}: expected 0 <= alpha <= 1")
        self.oracle = oracle
        self.learner = learner
        self.alpha = alpha
        self.name = name

    def act(self, episode: Episode) -> int:
        if episode.rng.random() < self.alpha:
            return self.oracle.act(episode)
        return self.learner.act(episode)
