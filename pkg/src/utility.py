from __future__ import annotations

import threading
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.config import get_logger
from src.constants import ERROR_ZERO_COVERABLE
from src.exceptions import ZeroCoverableWorldError
from src.models import WorldMap, NodeSet, SensorConfig, Measurement, ProblemSpec
from src.sensor import raycast, visibility_matrix

# Set up logger for this module
logger = get_logger(__name__)


def pairwise_distances(nodes: NodeSet) -> np.ndarray:
    positions = nodes.positions
    diff = positions[None, :, :] - positions[:, None, :]
    return np.hypot(diff[..., 0], diff[..., 1])


class CoverageInstance:
    """
    A (world, nodes, sensor) triple with everything the coverage utility needs precomputed.

    Visibility is kept as a (num_nodes, D) boolean matrix over the D coverable
    cells, so marginal gains are integer column counts.
    """

    def __init__(self, world: WorldMap, nodes: NodeSet, cfg: SensorConfig):
        self.world = world
        self.nodes = nodes
        self.cfg = cfg
        full = visibility_matrix(world, nodes, cfg)
        coverable = full.any(axis=0)
        self.denominator = int(coverable.sum())
        if self.denominator == 0:
            raise ZeroCoverableWorldError(ERROR_ZERO_COVERABLE)
        self.coverable_cells = np.flatnonzero(coverable)
        self.visibility = np.ascontiguousarray(full[:, coverable])
        self.visibility.setflags(write=False)
        self.distances = pairwise_distances(nodes)
        self.distances.setflags(write=False)
        self._measurements: Dict[int, Measurement] = {}
        self._measurements_lock = threading.Lock()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def hit_cells(self, node_id: int) -> frozenset:
        """Global cell indices seen Occupied from a node."""
        self.nodes.check_id(node_id)
        return frozenset(int(c) for c in self.coverable_cells[self.visibility[node_id]])

    def measurement(self, node_id: int) -> Measurement:
        """Raycast from a node, cached per instance; safe to call from several worker threads."""
        with self._measurements_lock:
            cached = self._measurements.get(node_id)
            if cached is None:
                cached = raycast(self.world, self.nodes[node_id], self.cfg)
                self._measurements[node_id] = cached
        return cached

    def covered_mask(self, visited: Iterable[int]) -> np.ndarray:
        ids = [int(v) for v in visited]
        for v in ids:
            self.nodes.check_id(v)
        if not ids:
            return np.zeros(self.denominator, dtype=bool)
        return self.visibility[ids].any(axis=0)

    def gain_counts(self, covered: np.ndarray, candidates: Optional[np.ndarray] = None) -> np.ndarray:
        """Number of newly covered cells for each candidate (all nodes by default)."""
        rows = self.visibility if candidates is None else self.visibility[candidates]
        return np.count_nonzero(rows & ~covered, axis=1)


class CoverageState:
    """
    Per-episode state s_t: the visited sequence, the covered cells and the travelled cost.

    Rewards come from integer cell counts divided by D once, so coverage is exact.
    """

    def __init__(self, instance: CoverageInstance, visited: List[int], covered: np.ndarray, cost: float):
        self.instance = instance
        self.visited = visited
        self.covered = covered
        self.cost = cost

    @classmethod
    def start(cls, instance: CoverageInstance, start_id: Optional[int] = None) -> "CoverageState":
        start_id = instance.nodes.start_id if start_id is None else start_id
        return cls(instance, [start_id], instance.visibility[start_id].copy(), 0.0)

    @classmethod
    def from_visited(cls, instance: CoverageInstance, visited: Sequence[int]) -> "CoverageState":
        state = cls.start(instance, visited[0])
        for node_id in visited[1:]:
            state.apply(node_id)
        return state

    @property
    def current(self) -> int:
        return self.visited[-1]

    @property
    def covered_count(self) -> int:
        return int(np.count_nonzero(self.covered))

    @property
    def coverage(self) -> float:
        return self.covered_count / self.instance.denominator

    def gain_count(self, action: int) -> int:
        self.instance.nodes.check_id(action)
        return int(np.count_nonzero(self.instance.visibility[action] & ~self.covered))

    def remaining_budget(self, spec: ProblemSpec) -> float:
        return spec.budget - self.cost

    def apply(self, action: int) -> float:
        """Move to `action`, returning the one-step reward. Revisits earn 0."""
        gain = self.gain_count(action)
        self.cost = self.cost + float(self.instance.distances[self.current, action])
        self.covered |= self.instance.visibility[action]
        self.visited.append(int(action))
        return gain / self.instance.denominator

    def copy(self) -> "CoverageState":
        return CoverageState(self.instance, list(self.visited), self.covered.copy(), self.cost)


def coverage(instance: CoverageInstance, visited: Iterable[int]) -> float:
    """Fraction of the D coverable cells seen from the visited nodes."""
    return int(np.count_nonzero(instance.covered_mask(visited))) / instance.denominator


def marginal_gain_count(instance: CoverageInstance, node_id: int, visited: Iterable[int]) -> int:
    covered = instance.covered_mask(visited)
    instance.nodes.check_id(node_id)
    return int(np.count_nonzero(instance.visibility[node_id] & ~covered))


def marginal_gain(instance: CoverageInstance, node_id: int, visited: Iterable[int]) -> float:
    return marginal_gain_count(instance, node_id, visited) / instance.denominator


def reward(state: CoverageState, action: int) -> float:
    """Normalized marginal gain of `action` from `state`, without moving."""
    return state.gain_count(action) / state.instance.denominator


def travel_cost(path: Sequence[int], nodes: NodeSet) -> float:
    """Sum of Euclidean edge lengths along the path."""
    ids = [int(v) for v in path]
    for v in ids:
        nodes.check_id(v)
    if len(ids) < 2:
        return 0.0
    positions = nodes.positions
    diff = positions[ids[1:]] - positions[ids[:-1]]
    total = 0.0
    for length in np.hypot(diff[:, 0], diff[:, 1]):
        total = total + float(length)
    return total


def feasible_actions(state: CoverageState, spec: ProblemSpec) -> np.ndarray:
    """
    Sorted node ids the episode may move to next.

    Visited nodes are excluded unless the problem allows revisits. Under a
    budget, a node is feasible when cost + edge <= budget.
    """
    instance = state.instance
    mask = np.ones(instance.num_nodes, dtype=bool)
    if not spec.allow_revisits:
        mask[state.visited] = False
    else:
        mask[state.current] = False
    if spec.is_budgeted:
        mask &= state.cost + instance.distances[state.current] <= spec.budget
    return np.flatnonzero(mask)
