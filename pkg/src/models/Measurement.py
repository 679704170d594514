from __future__ import annotations

import math
from dataclasses import dataclass
from typing import FrozenSet, Tuple

from src.constants import DEFAULT_NUM_RAYS, DEFAULT_FOV, DEFAULT_MAX_RANGE
from src.exceptions import InvalidConfigError


@dataclass(frozen=True)
class SensorConfig:
    """Simulated planar laser: num_rays evenly spread over fov, centred on the node heading."""
    num_rays: int = DEFAULT_NUM_RAYS
    fov: float = DEFAULT_FOV
    max_range: float = DEFAULT_MAX_RANGE
    include_origin_cell: bool = True

    def __post_init__(self):
        if int(self.num_rays) != self.num_rays or self.num_rays < 1:
            raise InvalidConfigError(f"Invalid num_rays {self.num_rays}: must be a positive integer")
        if not (0 < self.fov <= 2.0 * math.pi + 1e-12):
            raise InvalidConfigError(f"Invalid fov {self.fov}: expected 0 < fov <= 2*pi")
        if not (self.max_range > 0 and math.isfinite(self.max_range)):
            raise InvalidConfigError(f"Invalid max_range {self.max_range}: must be > 0")

    @property
    def is_omnidirectional(self) -> bool:
        return self.fov >= 2.0 * math.pi - 1e-12

    def to_dict(self) -> dict:
        return {
            "num_rays": self.num_rays,
            "fov": self.fov,
            "max_range": self.max_range,
            "include_origin_cell": self.include_origin_cell,
        }


@dataclass(frozen=True)
class Measurement:
    """Observation y = H(v, phi) received at one node."""
    node_id: int
    hit_cells: FrozenSet[int]
    free_cells: FrozenSet[int]
    ranges: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "hit_cells": sorted(self.hit_cells),
            "free_cells": sorted(self.free_cells),
            "ranges": list(self.ranges),
        }
