from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
from scipy import ndimage

from src.constants import SPLITS, ERROR_UNKNOWN_NODE
from src.exceptions import InvalidConfigError, UnknownNodeError

FOUR_NEIGHBORHOOD = ndimage.generate_binary_structure(2, 1)


def surface_mask(occupied: np.ndarray) -> np.ndarray:
    """Occupied cells with at least one Free 4-neighbour inside the grid."""
    free = ~occupied
    near_free = ndimage.binary_dilation(free, structure=FOUR_NEIGHBORHOOD)
    return occupied & near_free


@dataclass(frozen=True, eq=False)
class WorldMap:
    """
    Hidden 2D world: a binary occupancy grid.

    Cell (row r, col c) covers x in [c, c+1) * resolution and y in [r, r+1) * resolution.
    The flat cell index is r * width + c.
    """
    occupied: np.ndarray
    resolution: float = 1.0

    def __post_init__(self):
        grid = np.array(self.occupied, dtype=bool, copy=True)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise InvalidConfigError(f"World grid must be 2D with at least one cell, got shape {grid.shape}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InvalidConfigError(f"Invalid resolution {self.resolution}: must be > 0")
        grid.setflags(write=False)
        surface = surface_mask(grid)
        surface.setflags(write=False)
        object.__setattr__(self, "occupied", grid)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "_surface", surface)

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def num_cells(self) -> int:
        return self.occupied.size

    @property
    def surface(self) -> np.ndarray:
        return self._surface

    @property
    def surface_cells(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self._surface))

    def occupied_indices(self) -> np.ndarray:
        return np.flatnonzero(self.occupied)

    def free_count(self) -> int:
        return int(self.num_cells - np.count_nonzero(self.occupied))

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """(row, col) of the cell containing a metric position."""
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def is_free_position(self, x: float, y: float) -> bool:
        row, col = self.cell_of(x, y)
        return self.in_bounds(row, col) and not self.occupied[row, col]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldMap):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.occupied, other.occupied)

    def __hash__(self) -> int:
        return hash((self.resolution, self.occupied.shape, self.occupied.tobytes()))


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class NodeSet:
    """Candidate sensing locations V with the distinguished start node v_s."""
    nodes: Tuple[Node, ...]
    start_id: int

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if not nodes:
            raise InvalidConfigError("NodeSet must contain at least one node")
        for expected, node in enumerate(nodes):
            if node.id != expected:
                raise InvalidConfigError(f"Node ids must be 0..n-1 without gaps; position {expected} holds id {node.id}")
        if not 0 <= self.start_id < len(nodes):
            raise InvalidConfigError(f"Invalid start_id {self.start_id} for {len(nodes)} nodes")
        positions = np.array([[n.x, n.y] for n in nodes], dtype=np.float64)
        positions.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_positions", positions)

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def start(self) -> Node:
        return self.nodes[self.start_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def __getitem__(self, node_id: int) -> Node:
        if not isinstance(node_id, (int, np.integer)) or not 0 <= node_id < len(self.nodes):
            raise UnknownNodeError(ERROR_UNKNOWN_NODE.format(node_id))
        return self.nodes[int(node_id)]

    def check_id(self, node_id: int) -> int:
        """
        Raises:
            UnknownNodeError: If node_id is not in 0..n-1
        """
        return self[node_id].id


@dataclass(frozen=True)
class WorldEntry:
    world: WorldMap
    nodes: NodeSet


@dataclass(frozen=True)
class WorldDataset:
    entries: Tuple[WorldEntry, ...]
    seed: int
    generator_name: str
    split: str

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise InvalidConfigError("WorldDataset must contain at least one entry")
        if self.split not in SPLITS:
            raise InvalidConfigError(f"Invalid split '{self.split}'. Valid splits are: {', '.join(SPLITS)}")
        dims = {entry.world.dims for entry in entries}
        resolutions = {entry.world.resolution for entry in entries}
        if len(dims) != 1 or len(resolutions) != 1:
            raise InvalidConfigError("All worlds in a dataset must share dims and resolution")
        object.__setattr__(self, "entries", entries)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.entries[0].world.dims

    @property
    def resolution(self) -> float:
        return self.entries[0].world.resolution

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[WorldEntry]:
        return iter(self.entries)


def validate_nodes(world: WorldMap, nodes: NodeSet) -> None:
    """
    Check that every node sits inside a Free cell of the world.

    Raises:
        InvalidConfigError: If a node lies outside the grid or inside an obstacle
    """
    for node in nodes:
        if not world.is_free_position(node.x, node.y):
            raise InvalidConfigError(f"Node {node.id} at ({node.x:.3f}, {node.y:.3f}) is not in a free cell")
