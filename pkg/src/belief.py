"""
Belief over the hidden world and the features the learner and the heuristics share.

With a deterministic sensor every Unknown cell carries one bit of entropy and
every observed cell none, so the entropy-style metrics below are counts of
Unknown cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.config import get_logger
from src.constants import (
    BELIEF_UNKNOWN, BELIEF_FREE, BELIEF_OCCUPIED, FEATURE_NAMES, ERROR_OBSERVATION_CONFLICT,
)
from src.exceptions import ObservationConflictError
from src.models import NodeSet, SensorConfig, Measurement, ProblemSpec
from src.sensor import ray_directions, trace_rays
from src.utility import travel_cost

# Set up logger for this module
logger = get_logger(__name__)

FOUR_NEIGHBORHOOD = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class Belief:
    """
    History of (node, measurement) records and its three-state occupancy fold.
    """
    occ: np.ndarray
    history: Tuple[Tuple[int, Measurement], ...]
    resolution: float = 1.0

    def __post_init__(self):
        grid = np.array(self.occ, dtype=np.int8, copy=True)
        grid.setflags(write=False)
        object.__setattr__(self, "occ", grid)
        object.__setattr__(self, "history", tuple(self.history))

    @classmethod
    def empty(cls, dims: Tuple[int, int], resolution: float = 1.0) -> "Belief":
        return cls(occ=np.full(dims, BELIEF_UNKNOWN, dtype=np.int8), history=(), resolution=resolution)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.occ.shape

    @property
    def covered_estimate(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.occ == BELIEF_OCCUPIED))

    @property
    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.occ == BELIEF_UNKNOWN))

    @property
    def is_fully_known(self) -> bool:
        return self.unknown_count == 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Belief):
            return NotImplemented
        return self.history == other.history and np.array_equal(self.occ, other.occ)

    def __hash__(self) -> int:
        return hash((self.history, self.occ.tobytes()))


def belief_update(belief: Belief, node_id: int, measurement: Measurement) -> Belief:
    """
    Fold one measurement into the belief.

    Re-applying a record already in the history returns the belief unchanged.

    Raises:
        ObservationConflictError: If a cell would be both Free and Occupied
    """
    if (node_id, measurement) in belief.history:
        return belief

    flat = belief.occ.ravel()
    free = np.fromiter(measurement.free_cells, dtype=np.int64, count=len(measurement.free_cells))
    hits = np.fromiter(measurement.hit_cells, dtype=np.int64, count=len(measurement.hit_cells))
    conflicts = (
        int(np.count_nonzero(flat[free] == BELIEF_OCCUPIED))
        + int(np.count_nonzero(flat[hits] == BELIEF_FREE))
        + len(measurement.free_cells & measurement.hit_cells)
    )
    if conflicts:
        raise ObservationConflictError(ERROR_OBSERVATION_CONFLICT.format(node_id, conflicts))

    occ = flat.copy()
    occ[free] = BELIEF_FREE
    occ[hits] = BELIEF_OCCUPIED
    return Belief(occ=occ.reshape(belief.dims), history=belief.history + ((node_id, measurement),),
                  resolution=belief.resolution)


@dataclass(frozen=True)
class FeatureVector:
    """Named feature components in the fixed FEATURE_NAMES order."""
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(FEATURE_NAMES):
            raise ValueError(f"Expected {len(FEATURE_NAMES)} feature values, got {len(self.values)}")

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURE_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


def _wrap_angle(angle: np.ndarray) -> np.ndarray:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _closest_point_distance(cells: np.ndarray, width: int, positions: np.ndarray, res: float) -> np.ndarray:
    """(k, len(cells)) distance from each position to the closest point of each cell."""
    rows, cols = np.divmod(cells, width)
    x, y = positions[:, 0:1], positions[:, 1:2]
    dx = np.maximum.reduce([cols * res - x, np.zeros_like(x - cols), x - (cols + 1) * res])
    dy = np.maximum.reduce([rows * res - y, np.zeros_like(y - rows), y - (rows + 1) * res])
    return np.hypot(dx, dy)


def _center_distance(cells: np.ndarray, width: int, positions: np.ndarray, res: float) -> np.ndarray:
    rows, cols = np.divmod(cells, width)
    return np.hypot((cols + 0.5) * res - positions[:, 0], (rows + 0.5) * res - positions[:, 1])


def _unique_pairs(owner: np.ndarray, cells: np.ndarray, num_cells: int) -> Tuple[np.ndarray, np.ndarray]:
    keys = np.unique(owner.astype(np.int64) * num_cells + cells)
    return keys // num_cells, keys % num_cells


def extract_features_batch(belief: Belief, visited: Sequence[int], candidates: Sequence[int], nodes: NodeSet,
                           spec: ProblemSpec, cfg: SensorConfig, cost: Optional[float] = None,
                           optimistic: bool = True) -> np.ndarray:
    """
    Feature rows for several candidate actions, shape (len(candidates), len(FEATURE_NAMES)).

    Information-gain components ray-cast over the belief grid from each
    candidate: Occupied blocks, Unknown is transparent (optimistic) or blocking
    (pessimistic). Distances are in meters.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    k = candidates.size
    features = np.zeros((k, len(FEATURE_NAMES)), dtype=np.float64)
    if k == 0:
        return features

    res = belief.resolution
    height, width = belief.dims
    num_cells = height * width
    max_range = cfg.max_range
    flat = belief.occ.ravel()
    unknown = flat == BELIEF_UNKNOWN
    positions = nodes.positions[candidates]

    if unknown.any():
        blocking = belief.occ == BELIEF_OCCUPIED if optimistic else belief.occ != BELIEF_FREE
        directions = np.concatenate([ray_directions(cfg, nodes[int(a)].heading) for a in candidates], axis=0)
        num_rays = directions.shape[0] // k
        owner = np.repeat(np.arange(k), num_rays)
        batch = trace_rays(blocking, np.repeat(positions / res, num_rays, axis=0), directions, max_range / res)

        traversed = batch.cells >= 0
        traversed_unknown = traversed & unknown[np.where(traversed, batch.cells, 0)]
        has_hit = batch.hit_cell >= 0
        hit_state = flat[np.where(has_hit, batch.hit_cell, 0)]
        unknown_hit = has_hit & (hit_state == BELIEF_UNKNOWN)
        occupied_hit = has_hit & (hit_state == BELIEF_OCCUPIED)

        # avg_entropy_gain
        per_ray = traversed_unknown.sum(axis=1) + unknown_hit
        features[:, 0] = per_ray.reshape(k, num_rays).mean(axis=1)

        # unknown_cells_in_range
        unknown_cells = np.flatnonzero(unknown)
        in_range = _closest_point_distance(unknown_cells[None, :], width, positions, res) <= max_range
        features[:, 1] = in_range.sum(axis=1)

        # rear_side_voxel_count and rear_side_entropy_gain
        behind_ok = occupied_hit & (batch.behind_cell >= 0) & (batch.behind_entry <= max_range / res)
        behind_unknown = behind_ok & unknown[np.where(behind_ok, batch.behind_cell, 0)]
        if behind_unknown.any():
            who, cell = _unique_pairs(owner[behind_unknown], batch.behind_cell[behind_unknown], num_cells)
            weight = 1.0 / (1.0 + _center_distance(cell, width, positions[who], res))
            features[:, 2] = np.bincount(who, minlength=k)
            features[:, 3] = np.bincount(who, weights=weight, minlength=k)

        # occlusion_aware_gain
        ray_idx, step_idx = np.nonzero(traversed_unknown)
        seen_owner = np.concatenate([owner[ray_idx], owner[unknown_hit]])
        seen_cell = np.concatenate([batch.cells[ray_idx, step_idx], batch.hit_cell[unknown_hit]])
        if seen_cell.size:
            who, cell = _unique_pairs(seen_owner, seen_cell, num_cells)
            weight = 1.0 / (1.0 + _center_distance(cell, width, positions[who], res))
            features[:, 4] = np.bincount(who, weights=weight, minlength=k)

        # expected_new_surface: Occupied frontier hits (an Unknown 4-neighbour anywhere)
        frontier = (belief.occ == BELIEF_OCCUPIED) & ndimage.binary_dilation(
            belief.occ == BELIEF_UNKNOWN, structure=FOUR_NEIGHBORHOOD)
        frontier_hit = occupied_hit & frontier.ravel()[np.where(occupied_hit, batch.hit_cell, 0)]
        if frontier_hit.any():
            who, _ = _unique_pairs(owner[frontier_hit], batch.hit_cell[frontier_hit], num_cells)
            features[:, 5] = np.bincount(who, minlength=k)

    # motion and context
    visited = [int(v) for v in visited]
    current = nodes.positions[visited[-1]]
    offset = positions - current
    features[:, 6] = np.hypot(offset[:, 0], offset[:, 1])
    if len(visited) >= 2:
        last_move = current - nodes.positions[visited[-2]]
        turn = _wrap_angle(np.arctan2(offset[:, 1], offset[:, 0]) - math.atan2(last_move[1], last_move[0]))
        moving = (features[:, 6] > 0) & (np.hypot(*last_move) > 0)
        features[:, 7] = np.where(moving, np.abs(turn), 0.0)
    if spec.is_budgeted:
        spent = travel_cost(visited, nodes) if cost is None else cost
        features[:, 8] = max(spec.budget - spent, 0.0) / spec.budget
    else:
        features[:, 8] = 1.0
    features[:, 9] = len(visited) / spec.horizon
    return features


def extract_features(belief: Belief, visited: Sequence[int], action: int, nodes: NodeSet,
                     spec: ProblemSpec, cfg: SensorConfig, cost: Optional[float] = None) -> FeatureVector:
    row = extract_features_batch(belief, visited, [action], nodes, spec, cfg, cost)[0]
    return FeatureVector(values=tuple(float(v) for v in row))
