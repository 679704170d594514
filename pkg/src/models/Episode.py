from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

from src.constants import VARIANT_UNC, VARIANT_CON, TERMINAL_HORIZON
from src.exceptions import InvalidConfigError


@dataclass(frozen=True)
class ProblemSpec:
    """Horizon T, travel budget Omega and problem variant."""
    horizon: int
    budget: float = math.inf
    variant: str = VARIANT_UNC
    allow_revisits: bool = False

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidConfigError(f"Invalid horizon {self.horizon}: must be >= 1")
        if self.variant not in (VARIANT_UNC, VARIANT_CON):
            raise InvalidConfigError(f"Invalid variant '{self.variant}'. Must be '{VARIANT_UNC}' or '{VARIANT_CON}'")
        if self.variant == VARIANT_CON and not (self.budget > 0 and math.isfinite(self.budget)):
            raise InvalidConfigError(f"Budgeted problems need a finite budget > 0, got {self.budget}")
        if self.variant == VARIANT_UNC and self.budget != math.inf:
            raise InvalidConfigError("Unconstrained problems take no budget")

    @classmethod
    def unconstrained(cls, horizon: int, allow_revisits: bool = False) -> "ProblemSpec":
        return cls(horizon=horizon, budget=math.inf, variant=VARIANT_UNC, allow_revisits=allow_revisits)

    @classmethod
    def budgeted(cls, horizon: int, budget: float, allow_revisits: bool = False) -> "ProblemSpec":
        return cls(horizon=horizon, budget=float(budget), variant=VARIANT_CON, allow_revisits=allow_revisits)

    @property
    def is_budgeted(self) -> bool:
        return self.variant == VARIANT_CON

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "budget": None if math.isinf(self.budget) else self.budget,
            "variant": self.variant,
            "allow_revisits": self.allow_revisits,
        }


@dataclass(frozen=True)
class StepRecord:
    t: int
    node_id: int
    reward: float
    cumulative_reward: float
    remaining_budget: float
    num_feasible: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "node_id": self.node_id,
            "reward": self.reward,
            "cumulative_reward": self.cumulative_reward,
            "remaining_budget": None if math.isinf(self.remaining_budget) else self.remaining_budget,
            "num_feasible": self.num_feasible,
        }


@dataclass
class Trajectory:
    """
    One rollout. Record t = 0 is the start node's own observation, so
    cumulative_reward always equals the coverage of the nodes visited so far.
    """
    policy: str
    world_index: int
    records: List[StepRecord] = field(default_factory=list)
    terminal: str = TERMINAL_HORIZON
    error: Optional[str] = None

    @property
    def visited(self) -> List[int]:
        return [record.node_id for record in self.records]

    @property
    def num_actions(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def final_reward(self) -> float:
        return self.records[-1].cumulative_reward if self.records else 0.0

    @property
    def action_reward(self) -> float:
        """Reward gathered by actions only, excluding the start observation."""
        if not self.records:
            return 0.0
        return math.fsum(record.reward for record in self.records[1:])

    def cumulative_curve(self, horizon: int) -> List[float]:
        """Cumulative reward at t = 0..horizon, holding the last value after early termination."""
        values = [record.cumulative_reward for record in self.records[: horizon + 1]]
        last = values[-1] if values else 0.0
        return values + [last] * (horizon + 1 - len(values))

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "world_index": self.world_index,
            "terminal": self.terminal,
            "error": self.error,
            "records": [record.to_dict() for record in self.records],
        }
