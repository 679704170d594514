from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from src.config import get_logger
from src.constants import ERROR_NODE_IN_OBSTACLE
from src.exceptions import NodeInsideObstacleError
from src.models import WorldMap, Node, NodeSet, SensorConfig, Measurement

# Set up logger for this module
logger = get_logger(__name__)


@dataclass(frozen=True)
class RayBatch:
    """
    Result of tracing a batch of rays through a grid, in cell units.

    cells/entry hold the non-blocking cells each ray passed through, in order,
    padded with -1 / nan. hit_cell is the first blocking cell (-1 when the ray
    ran out of range or left the grid). behind_cell is the cell right after
    the hit along the same ray, -1 when there is none.
    """
    cells: np.ndarray
    entry: np.ndarray
    hit_cell: np.ndarray
    hit_entry: np.ndarray
    behind_cell: np.ndarray
    behind_entry: np.ndarray

    @property
    def num_rays(self) -> int:
        return self.hit_cell.shape[0]


def ray_directions(cfg: SensorConfig, heading: float) -> np.ndarray:
    """
    Unit direction vectors, shape (num_rays, 2).

    Omnidirectional sensors ignore the heading. When num_rays is a multiple of
    four the table is built from one quadrant by exact 90 degree rotations, so
    rotating a world by 90 degrees permutes the rays exactly.
    """
    n = cfg.num_rays
    if cfg.is_omnidirectional:
        if n % 4 == 0:
            quarter = n // 4
            angles = (np.arange(quarter) + 0.5) * (2.0 * math.pi / n)
            base = np.stack([np.cos(angles), np.sin(angles)], axis=1)
            quadrants = [base]
            for _ in range(3):
                prev = quadrants[-1]
                quadrants.append(np.stack([-prev[:, 1], prev[:, 0]], axis=1))
            return np.concatenate(quadrants, axis=0)
        angles = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    else:
        angles = heading - cfg.fov / 2.0 + (np.arange(n) + 0.5) * (cfg.fov / n)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def trace_rays(blocking: np.ndarray, origins: np.ndarray, directions: np.ndarray, max_range: float) -> RayBatch:
    """
    Exact grid traversal of many rays at once (incremental cell stepping).

    Args:
        blocking: (H, W) bool grid, True where a ray stops
        origins: (n, 2) or (2,) ray origins as (x, y) in cell units
        directions: (n, 2) unit vectors
        max_range: range in cell units; a cell whose entry distance exceeds it is not reached

    The origin cell is always treated as passable. On exact corner crossings
    the step along x is taken first.
    """
    height, width = blocking.shape
    directions = np.asarray(directions, dtype=np.float64)
    n = directions.shape[0]
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), (n, 2))
    ox, oy = origins[:, 0], origins[:, 1]
    dx, dy = directions[:, 0], directions[:, 1]

    col = np.floor(ox).astype(np.int64)
    row = np.floor(oy).astype(np.int64)
    step_x = np.sign(dx).astype(np.int64)
    step_y = np.sign(dy).astype(np.int64)

    with np.errstate(divide="ignore", invalid="ignore"):
        delta_x = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        delta_y = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        t_max_x = np.where(dx > 0, (col + 1 - ox) / dx, np.where(dx < 0, (col - ox) / dx, np.inf))
        t_max_y = np.where(dy > 0, (row + 1 - oy) / dy, np.where(dy < 0, (row - oy) / dy, np.inf))

    max_steps = int(math.ceil(2.0 * max_range)) + 3
    cells = np.full((n, max_steps), -1, dtype=np.int64)
    entry_out = np.full((n, max_steps), np.nan)
    hit_cell = np.full(n, -1, dtype=np.int64)
    hit_entry = np.full(n, np.nan)
    behind_cell = np.full(n, -1, dtype=np.int64)
    behind_entry = np.full(n, np.nan)

    entry = np.zeros(n)
    active = np.ones(n, dtype=bool)
    pending_behind = np.zeros(n, dtype=bool)

    for k in range(max_steps + 1):
        in_grid = (row >= 0) & (row < height) & (col >= 0) & (col < width)
        flat = np.where(in_grid, row * width + col, -1)

        if pending_behind.any():
            found = pending_behind & in_grid
            behind_cell[found] = flat[found]
            behind_entry[found] = entry[found]
            pending_behind[:] = False

        active &= in_grid & (entry <= max_range)
        if not active.any() or k == max_steps:
            break

        safe_row = np.clip(row, 0, height - 1)
        safe_col = np.clip(col, 0, width - 1)
        blocked = active & blocking[safe_row, safe_col]
        if k == 0:
            blocked[:] = False
        passable = active & ~blocked

        hit_cell[blocked] = flat[blocked]
        hit_entry[blocked] = entry[blocked]
        pending_behind = blocked.copy()
        cells[passable, k] = flat[passable]
        entry_out[passable, k] = entry[passable]
        active &= ~blocked

        along_x = t_max_x <= t_max_y
        entry = np.where(along_x, t_max_x, t_max_y)
        col = col + np.where(along_x, step_x, 0)
        row = row + np.where(along_x, 0, step_y)
        t_max_x = t_max_x + np.where(along_x, delta_x, 0.0)
        t_max_y = t_max_y + np.where(along_x, 0.0, delta_y)

    return RayBatch(
        cells=cells,
        entry=entry_out,
        hit_cell=hit_cell,
        hit_entry=hit_entry,
        behind_cell=behind_cell,
        behind_entry=behind_entry,
    )


def _check_node(world: WorldMap, node: Node) -> None:
    if not world.is_free_position(node.x, node.y):
        raise NodeInsideObstacleError(ERROR_NODE_IN_OBSTACLE.format(node.id, node.x, node.y))


def raycast(world: WorldMap, node: Node, cfg: SensorConfig) -> Measurement:
    """
    Deterministic measurement H(v, phi) at one node.

    Raises:
        NodeInsideObstacleError: If the node is outside the grid or inside an Occupied cell
    """
    _check_node(world, node)
    res = world.resolution
    origin = np.array([node.x / res, node.y / res])
    batch = trace_rays(world.occupied, origin, ray_directions(cfg, node.heading), cfg.max_range / res)

    hits = batch.hit_cell[batch.hit_cell >= 0]
    free = np.unique(batch.cells[batch.cells >= 0])
    if not cfg.include_origin_cell:
        row, col = world.cell_of(node.x, node.y)
        free = free[free != row * world.width + col]
    ranges = np.where(batch.hit_cell >= 0, batch.hit_entry * res, cfg.max_range)

    return Measurement(
        node_id=node.id,
        hit_cells=frozenset(int(c) for c in hits),
        free_cells=frozenset(int(c) for c in free),
        ranges=tuple(float(r) for r in ranges),
    )


def visible_surface(world: WorldMap, node: Node, cfg: SensorConfig) -> frozenset:
    """Hit cells of raycast at this node."""
    return raycast(world, node, cfg).hit_cells


def visibility_matrix(world: WorldMap, nodes: NodeSet, cfg: SensorConfig,
                      node_ids: Optional[Iterable[int]] = None) -> np.ndarray:
    """
    Boolean (num_nodes, num_cells) matrix; row v marks the hit cells of node v.

    All rays of all requested nodes are traced in one batch.
    """
    ids = list(range(len(nodes))) if node_ids is None else [int(i) for i in node_ids]
    res = world.resolution
    blocks = []
    for node_id in ids:
        node = nodes[node_id]
        _check_node(world, node)
        blocks.append(ray_directions(cfg, node.heading))
    directions = np.concatenate(blocks, axis=0)
    per_node = np.array([len(b) for b in blocks])
    origins = np.repeat(nodes.positions[ids] / res, per_node, axis=0)

    batch = trace_rays(world.occupied, origins, directions, cfg.max_range / res)
    owner = np.repeat(np.arange(len(ids)), per_node)
    hit = batch.hit_cell >= 0

    matrix = np.zeros((len(ids), world.num_cells), dtype=bool)
    matrix[owner[hit], batch.hit_cell[hit]] = True
    logger.debug(f"Visibility matrix for {len(ids)} nodes: {int(matrix.any(axis=0).sum())} coverable cells")
    return matrix
