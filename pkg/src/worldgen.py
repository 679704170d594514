from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage
from skimage.draw import disk, line, rectangle

from src.config import get_logger
from src.constants import (
    DEFAULT_GRID_DIMS, DEFAULT_RESOLUTION, MIN_GRID_DIM, DEFAULT_NUM_NODES,
    LINE_LENGTH_RANGE, LINE_SEPARATION_RANGE, BLOCK_COUNT_RANGE, BLOCK_HALF_EXTENT_RANGE,
    MARGIN_BAND_FRACTION, POISSON_RADIUS_RANGE, DEFAULT_POISSON_INTENSITY,
    NODE_CELL_MARGIN, NODE_SAMPLING_RETRY_FACTOR, WORLD_GENERATION_RETRIES,
    GENERATOR_PARALLEL_LINES, GENERATOR_DISTRIBUTED_BLOCKS, GENERATOR_POISSON_FOREST, GENERATOR_NAMES,
    SPLITS, SPLIT_TRAIN, STREAM_WORLDGEN,
    ERROR_INVALID_GRID_DIMS, ERROR_LINE_DOES_NOT_FIT, ERROR_INVALID_RANGE, ERROR_INVALID_MARGIN,
    ERROR_INVALID_INTENSITY, ERROR_GENERATION_RETRIES, ERROR_INSUFFICIENT_FREE_SPACE, ERROR_UNKNOWN_GENERATOR,
)
from src.exceptions import InvalidConfigError, InsufficientFreeSpaceError
from src.models import WorldMap, Node, NodeSet, WorldEntry, WorldDataset
from src.rng import child_rng

# Set up logger for this module
logger = get_logger(__name__)

EIGHT_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)

GridDims = Tuple[int, int]
DrawFn = Callable[[np.random.Generator], np.ndarray]


def validate_grid_dims(grid_dims: GridDims) -> None:
    height, width = grid_dims
    if height < MIN_GRID_DIM or width < MIN_GRID_DIM:
        raise InvalidConfigError(ERROR_INVALID_GRID_DIMS.format(tuple(grid_dims), MIN_GRID_DIM))


def validate_range(name: str, value_range: Tuple[float, float]) -> None:
    low, high = value_range
    if not (0 < low <= high):
        raise InvalidConfigError(ERROR_INVALID_RANGE.format(name, tuple(value_range)))


def validate_world(world: WorldMap, num_nodes: int = 1) -> bool:
    """A usable world has room for the nodes and at least one surface cell."""
    return world.free_count() >= max(num_nodes, 1) and bool(world.surface.any())


def obstacle_components(world: WorldMap) -> int:
    """Number of 8-connected Occupied components."""
    _, count = ndimage.label(world.occupied, structure=EIGHT_NEIGHBORHOOD)
    return int(count)


def draw_parallel_lines(rng: np.random.Generator, grid_dims: GridDims,
                        length_range: Tuple[float, float] = LINE_LENGTH_RANGE,
                        separation_range: Tuple[float, float] = LINE_SEPARATION_RANGE) -> np.ndarray:
    """
    Two equal-length one-cell-thick segments under a shared rotation, translation and scale.

    The pair is drawn in cell-centre coordinates; its bounding box is kept inside the grid.
    """
    height, width = grid_dims
    for _ in range(WORLD_GENERATION_RETRIES):
        theta = rng.uniform(0.0, math.pi)
        separation = rng.uniform(*separation_range)
        ux, uy = math.cos(theta), math.sin(theta)
        nx, ny = -uy, ux

        # longest segment whose pair still fits at this angle
        fits = []
        for along, across, span in ((abs(ux), abs(nx), width - 1), (abs(uy), abs(ny), height - 1)):
            room = span - across * separation
            fits.append(math.inf if along < 1e-12 else room / along)
        longest = min(length_range[1], *fits)
        if longest < length_range[0]:
            continue
        length = rng.uniform(length_range[0], longest)

        ext_x = abs(ux) * length / 2.0 + abs(nx) * separation / 2.0
        ext_y = abs(uy) * length / 2.0 + abs(ny) * separation / 2.0
        cx = rng.uniform(ext_x, width - 1 - ext_x)
        cy = rng.uniform(ext_y, height - 1 - ext_y)

        grid = np.zeros(grid_dims, dtype=bool)
        for side in (-0.5, 0.5):
            mx, my = cx + side * separation * nx, cy + side * separation * ny
            c0 = int(np.clip(round(mx - ux * length / 2.0), 0, width - 1))
            r0 = int(np.clip(round(my - uy * length / 2.0), 0, height - 1))
            c1 = int(np.clip(round(mx + ux * length / 2.0), 0, width - 1))
            r1 = int(np.clip(round(my + uy * length / 2.0), 0, height - 1))
            rr, cc = line(r0, c0, r1, c1)
            grid[rr, cc] = True
        return grid
    raise InvalidConfigError(ERROR_GENERATION_RETRIES.format(GENERATOR_PARALLEL_LINES, WORLD_GENERATION_RETRIES))


def draw_distributed_blocks(rng: np.random.Generator, grid_dims: GridDims,
                            count_range: Tuple[int, int] = BLOCK_COUNT_RANGE,
                            half_extent_range: Tuple[int, int] = BLOCK_HALF_EXTENT_RANGE,
                            margin_fraction: float = MARGIN_BAND_FRACTION) -> np.ndarray:
    """Axis-aligned filled rectangles centred in the outer margin band; overlaps allowed."""
    height, width = grid_dims
    band_rows = int(math.floor(margin_fraction * height))
    band_cols = int(math.floor(margin_fraction * width))
    rows, cols = np.indices(grid_dims)
    band = (rows < band_rows) | (rows >= height - band_rows) | (cols < band_cols) | (cols >= width - band_cols)
    band_cells = np.flatnonzero(band)

    grid = np.zeros(grid_dims, dtype=bool)
    num_blocks = int(rng.integers(count_range[0], count_range[1], endpoint=True))
    for _ in range(num_blocks):
        center = int(band_cells[rng.integers(0, band_cells.size)])
        r, c = divmod(center, width)
        half_r, half_c = rng.integers(half_extent_range[0], half_extent_range[1], size=2, endpoint=True)
        rr, cc = rectangle(start=(r - half_r, c - half_c), end=(r + half_r, c + half_c), shape=grid_dims)
        grid[rr, cc] = True
    return grid


def draw_poisson_forest(rng: np.random.Generator, grid_dims: GridDims,
                        intensity: float = DEFAULT_POISSON_INTENSITY,
                        radius_range: Tuple[float, float] = POISSON_RADIUS_RANGE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Disks at a Poisson number of uniform locations.

    Returns the grid and the (k, 2) array of disk centres (row, col) so the
    obstacle count can be inspected.
    """
    height, width = grid_dims
    count = int(rng.poisson(intensity * height * width))
    centers = np.column_stack([rng.uniform(0.0, height, size=count), rng.uniform(0.0, width, size=count)])
    radii = rng.uniform(radius_range[0], radius_range[1], size=count)

    grid = np.zeros(grid_dims, dtype=bool)
    for (r, c), radius in zip(centers, radii):
        rr, cc = disk((r, c), radius, shape=grid_dims)
        grid[rr, cc] = True
    return grid, centers


def sample_nodes(world: WorldMap, n: int, seed: Union[int, np.random.Generator]) -> NodeSet:
    """
    Rejection-sample n nodes over distinct Free cells.

    Positions are uniform within the inner part of the chosen cell, headings
    uniform in [0, 2*pi). The start node is the one nearest the grid centre.

    Raises:
        InsufficientFreeSpaceError: If the world has fewer than n Free cells
    """
    if n < 1:
        raise InvalidConfigError(f"Invalid node count {n}: must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else child_rng(seed)
    free = ~world.occupied.ravel()
    free_total = int(free.sum())
    if free_total < n:
        raise InsufficientFreeSpaceError(ERROR_INSUFFICIENT_FREE_SPACE.format(free_total, n))

    chosen: List[int] = []
    used = set()
    attempts = 0
    cap = n * NODE_SAMPLING_RETRY_FACTOR
    while len(chosen) < n and attempts < cap:
        batch = rng.integers(0, world.num_cells, size=n - len(chosen))
        attempts += batch.size
        for idx in batch:
            idx = int(idx)
            if free[idx] and idx not in used:
                used.add(idx)
                chosen.append(idx)

    if len(chosen) < n:
        logger.debug(f"Rejection sampling placed {len(chosen)}/{n} nodes; drawing the rest without replacement")
        remaining = np.array([i for i in np.flatnonzero(free) if int(i) not in used], dtype=np.int64)
        extra = rng.choice(remaining, size=n - len(chosen), replace=False)
        chosen.extend(int(i) for i in extra)

    cells = np.array(chosen, dtype=np.int64)
    rows, cols = np.divmod(cells, world.width)
    offsets = NODE_CELL_MARGIN + (1.0 - 2.0 * NODE_CELL_MARGIN) * rng.random((n, 2))
    xs = (cols + offsets[:, 0]) * world.resolution
    ys = (rows + offsets[:, 1]) * world.resolution
    headings = rng.uniform(0.0, 2.0 * math.pi, size=n)

    nodes = tuple(Node(id=i, x=float(xs[i]), y=float(ys[i]), heading=float(headings[i])) for i in range(n))
    center = np.array([world.width * world.resolution / 2.0, world.height * world.resolution / 2.0])
    start_id = int(np.argmin(np.hypot(xs - center[0], ys - center[1])))
    return NodeSet(nodes=nodes, start_id=start_id)


def _generate_entry(name: str, draw: DrawFn, seed: int, split_key: int, index: int,
                    num_nodes: int, resolution: float) -> WorldEntry:
    rng = child_rng(seed, STREAM_WORLDGEN, split_key, index)
    for _ in range(WORLD_GENERATION_RETRIES):
        world = WorldMap(occupied=draw(rng), resolution=resolution)
        if validate_world(world, num_nodes):
            return WorldEntry(world=world, nodes=sample_nodes(world, num_nodes, rng))
    raise InvalidConfigError(ERROR_GENERATION_RETRIES.format(name, WORLD_GENERATION_RETRIES))


def _generate(name: str, draw: DrawFn, count: int, seed: int, num_nodes: int,
              resolution: float, split: str, threads: int) -> WorldDataset:
    if count < 1:
        raise InvalidConfigError(f"Invalid count {count}: must be >= 1")
    if split not in SPLITS:
        raise InvalidConfigError(f"Invalid split '{split}'. Valid splits are: {', '.join(SPLITS)}")
    split_key = SPLITS.index(split)

    def build(index: int) -> WorldEntry:
        return _generate_entry(name, draw, seed, split_key, index, num_nodes, resolution)

    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(build, range(count)))
    else:
        entries = [build(i) for i in range(count)]

    logger.info(f"Generated {count} '{name}' worlds for split '{split}' (seed {seed})")
    return WorldDataset(entries=tuple(entries), seed=seed, generator_name=name, split=split)


def gen_parallel_lines(grid_dims: GridDims = DEFAULT_GRID_DIMS, count: int = 1, seed: int = 0,
                       num_nodes: int = DEFAULT_NUM_NODES, resolution: float = DEFAULT_RESOLUTION,
                       split: str = SPLIT_TRAIN, threads: int = 1,
                       length_range: Tuple[float, float] = LINE_LENGTH_RANGE,
                       separation_range: Tuple[float, float] = LINE_SEPARATION_RANGE) -> WorldDataset:
    validate_range("line length", length_range)
    validate_range("line separation", separation_range)
    if min(grid_dims) - 1 < length_range[0]:
        raise InvalidConfigError(ERROR_LINE_DOES_NOT_FIT.format(tuple(grid_dims), length_range[0]))
    validate_grid_dims(grid_dims)

    def draw(rng: np.random.Generator) -> np.ndarray:
        return draw_parallel_lines(rng, grid_dims, length_range, separation_range)

    return _generate(GENERATOR_PARALLEL_LINES, draw, count, seed, num_nodes, resolution, split, threads)


def gen_distributed_blocks(grid_dims: GridDims = DEFAULT_GRID_DIMS, count: int = 1, seed: int = 0,
                           num_nodes: int = DEFAULT_NUM_NODES, resolution: float = DEFAULT_RESOLUTION,
                           split: str = SPLIT_TRAIN, threads: int = 1,
                           count_range: Tuple[int, int] = BLOCK_COUNT_RANGE,
                           half_extent_range: Tuple[int, int] = BLOCK_HALF_EXTENT_RANGE,
                           margin_fraction: float = MARGIN_BAND_FRACTION) -> WorldDataset:
    validate_grid_dims(grid_dims)
    validate_range("block count", count_range)
    validate_range("block half extent", half_extent_range)
    if not (0 < margin_fraction < 0.5) or int(math.floor(margin_fraction * min(grid_dims))) < 1:
        raise InvalidConfigError(ERROR_INVALID_MARGIN.format(margin_fraction))

    def draw(rng: np.random.Generator) -> np.ndarray:
        return draw_distributed_blocks(rng, grid_dims, count_range, half_extent_range, margin_fraction)

    return _generate(GENERATOR_DISTRIBUTED_BLOCKS, draw, count, seed, num_nodes, resolution, split, threads)


def gen_poisson_forest(grid_dims: GridDims = DEFAULT_GRID_DIMS, count: int = 1, seed: int = 0,
                       intensity: float = DEFAULT_POISSON_INTENSITY,
                       num_nodes: int = DEFAULT_NUM_NODES, resolution: float = DEFAULT_RESOLUTION,
                       split: str = SPLIT_TRAIN, threads: int = 1,
                       radius_range: Tuple[float, float] = POISSON_RADIUS_RANGE) -> WorldDataset:
    if not (intensity > 0 and math.isfinite(intensity)):
        raise InvalidConfigError(ERROR_INVALID_INTENSITY.format(intensity))
    validate_grid_dims(grid_dims)
    validate_range("disk radius", radius_range)

    def draw(rng: np.random.Generator) -> np.ndarray:
        return draw_poisson_forest(rng, grid_dims, intensity, radius_range)[0]

    return _generate(GENERATOR_POISSON_FOREST, draw, count, seed, num_nodes, resolution, split, threads)


GENERATORS: Dict[str, Callable[..., WorldDataset]] = {
    GENERATOR_PARALLEL_LINES: gen_parallel_lines,
    GENERATOR_DISTRIBUTED_BLOCKS: gen_distributed_blocks,
    GENERATOR_POISSON_FOREST: gen_poisson_forest,
}


def generate_dataset(generator_name: str, grid_dims: GridDims = DEFAULT_GRID_DIMS, count: int = 1,
                     seed: int = 0, num_nodes: int = DEFAULT_NUM_NODES, split: str = SPLIT_TRAIN,
                     threads: int = 1, resolution: float = DEFAULT_RESOLUTION,
                     intensity: Optional[float] = None) -> WorldDataset:
    """Dispatch to a generator by name."""
    if generator_name not in GENERATORS:
        raise InvalidConfigError(ERROR_UNKNOWN_GENERATOR.format(generator_name, ", ".join(GENERATOR_NAMES)))
    kwargs = dict(grid_dims=tuple(grid_dims), count=count, seed=seed, num_nodes=num_nodes,
                  resolution=resolution, split=split, threads=threads)
    if generator_name == GENERATOR_POISSON_FOREST and intensity is not None:
        kwargs["intensity"] = intensity
    return GENERATORS[generator_name](**kwargs)
