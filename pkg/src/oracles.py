from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.config import get_logger
from src.constants import ORACLE_GREEDY, ORACLE_KINDS, MIN_EDGE_COST, ERROR_NO_FEASIBLE_ACTION
from src.exceptions import InvalidConfigError, NoFeasibleActionError
from src.models import ProblemSpec
from src.utility import CoverageState, feasible_actions

# Set up logger for this module
logger = get_logger(__name__)


@dataclass(frozen=True)
class OraclePlan:
    """Node sequence after the current node, with per-step gains (cell counts) and total added cost."""
    nodes: Tuple[int, ...]
    gain_counts: Tuple[int, ...]
    cost: float
    denominator: int

    @property
    def gains(self) -> Tuple[float, ...]:
        return tuple(g / self.denominator for g in self.gain_counts)

    @property
    def value_count(self) -> int:
        return int(sum(self.gain_counts))

    @property
    def value(self) -> float:
        return self.value_count / self.denominator


def validate_oracle_kind(kind: str) -> None:
    if kind not in ORACLE_KINDS:
        raise InvalidConfigError(f"Invalid oracle '{kind}'. Valid oracles are: {', '.join(ORACLE_KINDS)}")


def _require_feasible(state: CoverageState, spec: ProblemSpec) -> np.ndarray:
    feasible = feasible_actions(state, spec)
    if feasible.size == 0:
        raise NoFeasibleActionError(ERROR_NO_FEASIBLE_ACTION.format(state.current, state.visited, state.cost))
    return feasible


def greedy_step(state: CoverageState, spec: ProblemSpec) -> int:
    """
    Feasible node with the largest marginal gain on the known world; lowest id on ties.

    Raises:
        NoFeasibleActionError: If the feasible set is empty
    """
    feasible = _require_feasible(state, spec)
    gains = state.instance.gain_counts(state.covered, feasible)
    return int(feasible[int(np.argmax(gains))])


def gcb_plan(state: CoverageState, spec: ProblemSpec, horizon: Optional[int] = None) -> OraclePlan:
    """
    Generalized cost-benefit routing on the known world.

    Repeatedly appends the feasible node with the best gain per appended edge
    length until the horizon, the budget or the positive gains run out, then
    returns the best single feasible node instead if it alone is strictly better.

    Raises:
        NoFeasibleActionError: If the feasible set is empty
    """
    steps = spec.horizon if horizon is None else horizon
    instance = state.instance
    first_feasible = _require_feasible(state, spec)

    sim = state.copy()
    chosen, counts = [], []
    start_cost = state.cost
    while len(chosen) < steps:
        feasible = feasible_actions(sim, spec)
        if feasible.size == 0:
            break
        gains = instance.gain_counts(sim.covered, feasible)
        if gains.max() <= 0:
            break
        edges = np.maximum(instance.distances[sim.current, feasible], MIN_EDGE_COST)
        ratio = np.where(gains > 0, gains / edges, -np.inf)
        pick = int(np.argmax(ratio))
        chosen.append(int(feasible[pick]))
        counts.append(int(gains[pick]))
        sim.apply(chosen[-1])

    plan = OraclePlan(tuple(chosen), tuple(counts), sim.cost - start_cost, instance.denominator)
    if steps < 1:
        return plan

    single_gains = instance.gain_counts(state.covered, first_feasible)
    best = int(np.argmax(single_gains))
    if int(single_gains[best]) > plan.value_count:
        node = int(first_feasible[best])
        logger.debug(f"GCB singleton {node} ({int(single_gains[best])} cells) beats plan ({plan.value_count} cells)")
        return OraclePlan((node,), (int(single_gains[best]),),
                          float(instance.distances[state.current, node]), instance.denominator)
    return plan


def oracle_action(kind: str, state: CoverageState, spec: ProblemSpec, steps_remaining: int) -> int:
    """Next node the clairvoyant oracle of this kind takes."""
    if kind == ORACLE_GREEDY:
        return greedy_step(state, spec)
    validate_oracle_kind(kind)
    plan = gcb_plan(state, spec, steps_remaining)
    if plan.nodes:
        return plan.nodes[0]
    return int(_require_feasible(state, spec)[0])


def oracle_rollout_count(kind: str, state: CoverageState, spec: ProblemSpec, steps: int) -> int:
    """
    Cells the oracle covers when it acts for `steps` steps from `state`.

    Each step asks oracle_action again with the steps left, exactly as
    ClairvoyantPolicy does in an episode. Stops early when nothing is
    feasible. `state` is not modified.
    """
    sim = state.copy()
    total = 0
    for left in range(steps, 0, -1):
        if feasible_actions(sim, spec).size == 0:
            break
        action = oracle_action(kind, sim, spec, left)
        total += sim.gain_count(action)
        sim.apply(action)
    return total


def q_value_count(kind: str, state: CoverageState, action: int, steps_remaining: int, spec: ProblemSpec) -> int:
    """Integer-count form of q_value_to_go."""
    validate_oracle_kind(kind)
    if steps_remaining < 1:
        raise InvalidConfigError(f"Invalid steps_remaining {steps_remaining}: must be >= 1")
    sim = state.copy()
    total = sim.gain_count(action)
    sim.apply(action)
    return total + oracle_rollout_count(kind, sim, spec, steps_remaining - 1)


def q_value_to_go(kind: str, state: CoverageState, action: int, steps_remaining: int, spec: ProblemSpec) -> float:
    """
    One-step reward of `action` plus the oracle's reward over the remaining steps_remaining - 1 steps.

    Early termination (empty feasible set) contributes nothing further.
    """
    return q_value_count(kind, state, action, steps_remaining, spec) / state.instance.denominator
