"""
Exhaustive reference computations on tiny, enumerable instances.

The sensor is deterministic, so the posterior over an explicit ensemble of
worlds is uniform over the worlds consistent with every recorded measurement.
Everything here is brute force; size caps keep it tractable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from skimage.draw import rectangle

from src.belief import Belief, belief_update
from src.config import get_logger
from src.constants import (
    BRUTE_FORCE_MAX_NODES, BRUTE_FORCE_MAX_HORIZON, ADAPTIVE_MAX_NODES, ADAPTIVE_MAX_HORIZON, ADAPTIVE_MAX_WORLDS,
    TINY_ENSEMBLE_MAX_WORLDS, TINY_GRID_DIMS, TINY_NUM_RAYS, TINY_MAX_RANGE, ORACLE_GREEDY,
    WORLD_GENERATION_RETRIES, ERROR_GENERATION_RETRIES, ERROR_INSTANCE_TOO_LARGE, ERROR_NO_CONSISTENT_WORLD, ERROR_NO_FEASIBLE_ACTION,
)
from src.exceptions import (
    InvalidConfigError, InstanceTooLargeError, NoConsistentWorldError, NoFeasibleActionError,
    ZeroCoverableWorldError,
)
from src.models import WorldMap, Node, NodeSet, SensorConfig, Measurement, ProblemSpec, validate_nodes
from src.oracles import q_value_to_go, validate_oracle_kind
from src.policies import Episode
from src.rng import child_rng
from src.utility import CoverageInstance, CoverageState, feasible_actions

# Set up logger for this module
logger = get_logger(__name__)

# Action distribution of a belief-driven roll-in: (belief, visited, feasible) -> {action: probability}
RollIn = Callable[[Belief, Sequence[int], np.ndarray], Dict[int, float]]


@dataclass(frozen=True, eq=False)
class TinyEnsemble:
    """Explicit world ensemble with a uniform prior and one node set shared by every world."""
    worlds: Tuple[WorldMap, ...]
    nodes: NodeSet
    cfg: SensorConfig
    instances: Tuple[CoverageInstance, ...] = field(init=False, repr=False)

    def __post_init__(self):
        worlds = tuple(self.worlds)
        if not 1 <= len(worlds) <= TINY_ENSEMBLE_MAX_WORLDS:
            raise InvalidConfigError(f"Ensembles hold 1..{TINY_ENSEMBLE_MAX_WORLDS} worlds, got {len(worlds)}")
        for world in worlds[1:]:
            if world.dims != worlds[0].dims or world.resolution != worlds[0].resolution:
                raise InvalidConfigError("All ensemble worlds must share dims and resolution")
        for world in worlds:
            validate_nodes(world, self.nodes)
        object.__setattr__(self, "worlds", worlds)
        object.__setattr__(self, "instances", tuple(CoverageInstance(w, self.nodes, self.cfg) for w in worlds))

    def __len__(self) -> int:
        return len(self.worlds)

    @property
    def prior(self) -> np.ndarray:
        return np.full(len(self.worlds), 1.0 / len(self.worlds))

    def measurement(self, world: int, node_id: int) -> Measurement:
        return self.instances[world].measurement(node_id)

    def state(self, world: int, visited: Sequence[int]) -> CoverageState:
        return CoverageState.from_visited(self.instances[world], list(visited))

    def start_belief(self, world: int) -> Belief:
        start = self.nodes.start_id
        empty = Belief.empty(self.worlds[0].dims, self.worlds[0].resolution)
        return belief_update(empty, start, self.measurement(world, start))


def make_tiny_ensemble(seed: int, num_worlds: int = 4, num_nodes: int = 6,
                       grid_dims: Tuple[int, int] = TINY_GRID_DIMS, cfg: Optional[SensorConfig] = None,
                       max_blocks: int = 3) -> TinyEnsemble:
    """
    Random small-block worlds over one node set.

    Node cells are reserved first and kept Free in every world; each world then
    gets 1..max_blocks random rectangles. Worlds with nothing coverable are redrawn.
    """
    cfg = cfg or SensorConfig(num_rays=TINY_NUM_RAYS, max_range=TINY_MAX_RANGE)
    rng = child_rng(seed)
    height, width = grid_dims
    cells = rng.choice(height * width, size=num_nodes, replace=False)
    rows, cols = np.divmod(cells, width)
    offsets = 0.1 + 0.8 * rng.random((num_nodes, 2))
    headings = rng.uniform(0.0, 2.0 * math.pi, size=num_nodes)
    nodes = NodeSet(
        nodes=tuple(Node(id=i, x=float(cols[i] + offsets[i, 0]), y=float(rows[i] + offsets[i, 1]),
                         heading=float(headings[i])) for i in range(num_nodes)),
        start_id=0,
    )

    worlds: List[WorldMap] = []
    attempts = 0
    while len(worlds) < num_worlds:
        attempts += 1
        if attempts > WORLD_GENERATION_RETRIES * num_worlds:
            raise InvalidConfigError(ERROR_GENERATION_RETRIES.format("tiny-ensemble", attempts - 1))
        grid = np.zeros(grid_dims, dtype=bool)
        for _ in range(int(rng.integers(1, max_blocks, endpoint=True))):
            r, c = int(rng.integers(0, height)), int(rng.integers(0, width))
            h, w = rng.integers(1, 3, size=2, endpoint=True)
            rr, cc = rectangle(start=(r, c), extent=(int(h), int(w)), shape=grid_dims)
            grid[rr, cc] = True
        grid[rows, cols] = False
        world = WorldMap(occupied=grid)
        try:
            CoverageInstance(world, nodes, cfg)
        except ZeroCoverableWorldError:
            continue
        worlds.append(world)
    return TinyEnsemble(worlds=tuple(worlds), nodes=nodes, cfg=cfg)


@dataclass(frozen=True)
class BruteForceResult:
    path: Tuple[int, ...]
    count: int
    start_count: int
    denominator: int

    @property
    def utility(self) -> float:
        return self.count / self.denominator

    @property
    def action_value(self) -> float:
        """Coverage gathered beyond the start observation."""
        return (self.count - self.start_count) / self.denominator


def brute_force_path(world: WorldMap, nodes: NodeSet, spec: ProblemSpec, cfg: Optional[SensorConfig] = None,
                     instance: Optional[CoverageInstance] = None) -> BruteForceResult:
    """
    Optimal path by enumerating every feasible node sequence from the start.

    Ties keep the lexicographically smallest path.

    Raises:
        InstanceTooLargeError: If |V| > 10 or T > 4
    """
    if len(nodes) > BRUTE_FORCE_MAX_NODES or spec.horizon > BRUTE_FORCE_MAX_HORIZON:
        raise InstanceTooLargeError(ERROR_INSTANCE_TOO_LARGE.format(
            f"|V|={len(nodes)}, T={spec.horizon} (limits {BRUTE_FORCE_MAX_NODES}, {BRUTE_FORCE_MAX_HORIZON})"))
    instance = instance or CoverageInstance(world, nodes, cfg or SensorConfig())
    start = CoverageState.start(instance)
    best = [start.covered_count, tuple(start.visited)]

    def search(state: CoverageState, steps_left: int) -> None:
        if state.covered_count > best[0]:
            best[0], best[1] = state.covered_count, tuple(state.visited)
        if steps_left == 0:
            return
        for action in feasible_actions(state, spec):
            child = state.copy()
            child.apply(int(action))
            search(child, steps_left - 1)

    search(start, spec.horizon)
    return BruteForceResult(path=best[1], count=best[0], start_count=start.covered_count,
                            denominator=instance.denominator)


def _consistent(ensemble: TinyEnsemble, history: Sequence[Tuple[int, Measurement]]) -> List[int]:
    return [w for w in range(len(ensemble))
            if all(ensemble.measurement(w, v) == y for v, y in history)]


def exact_posterior(ensemble: TinyEnsemble, belief: Belief) -> np.ndarray:
    """
    Uniform weights over the worlds consistent with every (node, measurement) in the history.

    Raises:
        NoConsistentWorldError: If no world reproduces the history
    """
    consistent = _consistent(ensemble, belief.history)
    if not consistent:
        raise NoConsistentWorldError(ERROR_NO_CONSISTENT_WORLD)
    weights = np.zeros(len(ensemble))
    weights[consistent] = 1.0 / len(consistent)
    return weights


def _feasible(ensemble: TinyEnsemble, visited: Sequence[int], spec: ProblemSpec) -> np.ndarray:
    # feasibility depends on the path only, so any world answers it
    return feasible_actions(ensemble.state(0, visited), spec)


def expected_q_values(ensemble: TinyEnsemble, visited: Sequence[int], belief: Belief, spec: ProblemSpec,
                      kind: str, steps_remaining: int, actions: np.ndarray) -> np.ndarray:
    posterior = exact_posterior(ensemble, belief)
    values = np.zeros(actions.size)
    for w in np.flatnonzero(posterior):
        state = ensemble.state(int(w), visited)
        values += posterior[w] * np.array(
            [q_value_to_go(kind, state, int(a), steps_remaining, spec) for a in actions])
    return values


def hallucinating_act(ensemble: TinyEnsemble, visited: Sequence[int], belief: Belief, spec: ProblemSpec,
                      kind: str = ORACLE_GREEDY, steps_remaining: Optional[int] = None) -> int:
    """
    argmax over feasible actions of the posterior-expected oracle value-to-go; lowest id on ties.

    Raises:
        NoConsistentWorldError: If the belief is not generated by the ensemble
        NoFeasibleActionError: If the feasible set is empty
    """
    validate_oracle_kind(kind)
    actions = _feasible(ensemble, visited, spec)
    if actions.size == 0:
        raise NoFeasibleActionError(ERROR_NO_FEASIBLE_ACTION.format(visited[-1], list(visited), 0.0))
    steps = spec.horizon - len(visited) + 1 if steps_remaining is None else steps_remaining
    values = expected_q_values(ensemble, visited, belief, spec, kind, steps, actions)
    return int(actions[int(np.argmax(values))])


def adaptive_greedy_act(ensemble: TinyEnsemble, visited: Sequence[int], belief: Belief, spec: ProblemSpec) -> int:
    """Action with the highest posterior-expected marginal gain; lowest id on ties."""
    actions = _feasible(ensemble, visited, spec)
    if actions.size == 0:
        raise NoFeasibleActionError(ERROR_NO_FEASIBLE_ACTION.format(visited[-1], list(visited), 0.0))
    posterior = exact_posterior(ensemble, belief)
    expected = np.zeros(actions.size)
    for w in np.flatnonzero(posterior):
        instance = ensemble.instances[int(w)]
        covered = instance.covered_mask(visited)
        expected += posterior[w] * (instance.gain_counts(covered, actions) / instance.denominator)
    return int(actions[int(np.argmax(expected))])


class HallucinatingPolicy:
    """Posterior-expected oracle policy over a tiny ensemble; one_step gives adaptive greedy."""

    def __init__(self, ensemble: TinyEnsemble, kind: str = ORACLE_GREEDY, one_step: bool = False,
                 name: str = "hallucinating"):
        validate_oracle_kind(kind)
        self.ensemble = ensemble
        self.kind = kind
        self.one_step = one_step
        self.name = name

    def act(self, episode: Episode) -> int:
        return hallucinating_act(self.ensemble, episode.visited, episode.belief, episode.spec, self.kind,
                                 1 if self.one_step else episode.steps_remaining)


def deterministic_rollin(choose: Callable[[Belief, Sequence[int], np.ndarray], int]) -> RollIn:
    def distribution(belief: Belief, visited: Sequence[int], feasible: np.ndarray) -> Dict[int, float]:
        return {int(choose(belief, visited, feasible)): 1.0}
    return distribution


def uniform_rollin(belief: Belief, visited: Sequence[int], feasible: np.ndarray) -> Dict[int, float]:
    return {int(a): 1.0 / feasible.size for a in feasible}


def _rollin_branches(ensemble: TinyEnsemble, world: int, rollin: RollIn, t: int,
                     spec: ProblemSpec) -> List[Tuple[Tuple[int, ...], Belief, float]]:
    """(visited, belief, probability) for every way the roll-in reaches timestep t in this world."""
    branches = [((ensemble.nodes.start_id,), ensemble.start_belief(world), 1.0)]
    for _ in range(t - 1):
        expanded = []
        for visited, belief, p in branches:
            feasible = _feasible(ensemble, visited, spec)
            if feasible.size == 0:
                # terminated branches keep their mass and stop moving
                expanded.append((visited, belief, p))
                continue
            for action, q in sorted(rollin(belief, visited, feasible).items()):
                if q > 0:
                    expanded.append((visited + (action,),
                                     belief_update(belief, action, ensemble.measurement(world, action)), p * q))
        branches = expanded
    return branches


@dataclass(frozen=True)
class Lemma1Result:
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def lemma1_check(ensemble: TinyEnsemble, rollin: RollIn, t: int, action: int, spec: ProblemSpec,
                 kind: str = ORACLE_GREEDY) -> Lemma1Result:
    """
    Compare the expected clairvoyant value of `action` at timestep t with the
    same expectation taken through the posterior over hallucinated worlds.

    Both sides enumerate the prior and every roll-in branch exactly. Branches
    where `action` is not feasible (or that terminated early) contribute 0 to both sides.
    """
    if t < 1 or t > spec.horizon:
        raise InvalidConfigError(f"Invalid timestep {t}: expected 1 <= t <= {spec.horizon}")
    ensemble.nodes.check_id(action)
    prior = ensemble.prior
    cache: Dict[Tuple[int, Tuple[int, ...]], float] = {}

    def q(world: int, visited: Tuple[int, ...]) -> float:
        key = (world, visited)
        if key not in cache:
            cache[key] = q_value_to_go(kind, ensemble.state(world, visited), action,
                                       spec.horizon - len(visited) + 1, spec)
        return cache[key]

    lhs = 0.0
    rhs = 0.0
    for world in range(len(ensemble)):
        for visited, belief, p in _rollin_branches(ensemble, world, rollin, t, spec):
            if len(visited) != t or action not in set(_feasible(ensemble, visited, spec).tolist()):
                continue
            posterior = exact_posterior(ensemble, belief)
            inner = 0.0
            for other in range(len(ensemble)):
                if posterior[other] > 0:
                    inner += posterior[other] * q(other, visited)
            lhs += prior[world] * p * q(world, visited)
            rhs += prior[world] * p * inner
    return Lemma1Result(lhs=lhs, rhs=rhs)


def _check_adaptive_size(ensemble: TinyEnsemble, horizon: int) -> None:
    if len(ensemble.nodes) > ADAPTIVE_MAX_NODES or horizon > ADAPTIVE_MAX_HORIZON or len(ensemble) > ADAPTIVE_MAX_WORLDS:
        raise InstanceTooLargeError(ERROR_INSTANCE_TOO_LARGE.format(
            f"|V|={len(ensemble.nodes)}, T={horizon}, worlds={len(ensemble)} "
            f"(limits {ADAPTIVE_MAX_NODES}, {ADAPTIVE_MAX_HORIZON}, {ADAPTIVE_MAX_WORLDS})"))


def _gain(ensemble: TinyEnsemble, world: int, visited: Tuple[int, ...], action: int) -> float:
    instance = ensemble.instances[world]
    covered = instance.covered_mask(visited)
    return int(np.count_nonzero(instance.visibility[action] & ~covered)) / instance.denominator


def optimal_adaptive_value(ensemble: TinyEnsemble, spec: ProblemSpec, horizon: Optional[int] = None) -> float:
    """
    Expected reward gathered by the T actions of the optimal adaptive policy.

    Backward induction over (visited path, set of still-consistent worlds);
    the start observation is not counted, so T = 0 gives 0.

    Raises:
        InstanceTooLargeError: If |V| > 8, T > 3 or the ensemble has more than 8 worlds
    """
    steps = spec.horizon if horizon is None else horizon
    _check_adaptive_size(ensemble, steps)
    start = ensemble.nodes.start_id
    memo: Dict[Tuple[Tuple[int, ...], FrozenSet[int], int], float] = {}

    def value(visited: Tuple[int, ...], worlds: FrozenSet[int], steps_left: int) -> float:
        if steps_left == 0:
            return 0.0
        key = (visited, worlds, steps_left)
        if key in memo:
            return memo[key]
        best = 0.0
        members = sorted(worlds)
        for action in _feasible(ensemble, visited, spec):
            action = int(action)
            groups: Dict[Measurement, List[int]] = {}
            for w in members:
                groups.setdefault(ensemble.measurement(w, action), []).append(w)
            total = sum(_gain(ensemble, w, visited, action) for w in members) / len(members)
            for group in groups.values():
                total += len(group) / len(members) * value(visited + (action,), frozenset(group), steps_left - 1)
            best = max(best, total)
        memo[key] = best
        return best

    total = 0.0
    start_groups: Dict[Measurement, List[int]] = {}
    for w in range(len(ensemble)):
        start_groups.setdefault(ensemble.measurement(w, start), []).append(w)
    for group in start_groups.values():
        total += len(group) / len(ensemble) * value((start,), frozenset(group), steps)
    return total


def policy_value(ensemble: TinyEnsemble, spec: ProblemSpec,
                 choose: Callable[[int, Tuple[int, ...], Belief], int], horizon: Optional[int] = None) -> float:
    """Expected action reward of a belief-driven deterministic policy, by running it in every world."""
    steps = spec.horizon if horizon is None else horizon
    total = 0.0
    for world in range(len(ensemble)):
        visited = (ensemble.nodes.start_id,)
        belief = ensemble.start_belief(world)
        gathered = 0.0
        for _ in range(steps):
            if _feasible(ensemble, visited, spec).size == 0:
                break
            action = choose(world, visited, belief)
            gathered += _gain(ensemble, world, visited, action)
            visited = visited + (action,)
            belief = belief_update(belief, action, ensemble.measurement(world, action))
        total += gathered / len(ensemble)
    return total


def hallucinating_greedy_value(ensemble: TinyEnsemble, spec: ProblemSpec) -> float:
    _check_adaptive_size(ensemble, spec.horizon)
    return policy_value(ensemble, spec, lambda w, visited, belief: adaptive_greedy_act(ensemble, visited, belief, spec))


def _segment_cells(origin: np.ndarray, direction: np.ndarray, dims: Tuple[int, int]) -> List[Tuple[float, int]]:
    """(entry distance, cell) for every cell whose interior the ray passes through, in entry order."""
    height, width = dims
    rows, cols = np.indices(dims)
    low = np.zeros(dims)
    high = np.full(dims, np.inf)
    for o, d, a in ((float(origin[0]), float(direction[0]), cols), (float(origin[1]), float(direction[1]), rows)):
        if d == 0.0:
            outside = ~((a <= o) & (o < a + 1))
            high = np.where(outside, -np.inf, high)
            continue
        t0, t1 = (a - o) / d, (a + 1 - o) / d
        low = np.maximum(low, np.minimum(t0, t1))
        high = np.minimum(high, np.maximum(t0, t1))
    hit = high > low
    cells = (rows * width + cols)[hit]
    entries = low[hit]
    order = np.lexsort((cells, entries))
    return [(float(entries[i]), int(cells[i])) for i in order]


def slab_traversal_oracle(blocking: np.ndarray, origin: np.ndarray, direction: np.ndarray,
                          max_range: float) -> Tuple[FrozenSet[int], int]:
    """
    Analytic ray/cell-box intersection: (passable cells traversed, hit cell or -1).

    Cells are taken in entry order; a cell is reached when its entry distance is
    within max_range. The origin cell counts as passable.
    """
    flat = blocking.ravel()
    origin_cell = int(math.floor(origin[1])) * blocking.shape[1] + int(math.floor(origin[0]))
    passed = set()
    for entry, cell in _segment_cells(origin, direction, blocking.shape):
        if entry > max_range:
            break
        if flat[cell] and cell != origin_cell:
            return frozenset(passed), cell
        passed.add(cell)
    return frozenset(passed), -1


def marching_traversal_oracle(blocking: np.ndarray, origin: np.ndarray, direction: np.ndarray,
                              max_range: float, step: float = 0.01) -> FrozenSet[int]:
    """Cells visited by sampling the ray every `step` cells, up to and including the first blocking cell."""
    height, width = blocking.shape
    origin_cell = int(math.floor(origin[1])) * width + int(math.floor(origin[0]))
    seen = set()
    for s in np.arange(0.0, max_range, step):
        x, y = origin[0] + s * direction[0], origin[1] + s * direction[1]
        row, col = int(math.floor(y)), int(math.floor(x))
        if not (0 <= row < height and 0 <= col < width):
            break
        cell = row * width + col
        seen.add(cell)
        if blocking[row, col] and cell != origin_cell:
            break
    return frozenset(seen)
