from .World import WorldMap, Node, NodeSet, WorldEntry, WorldDataset, validate_nodes, surface_mask
from .Measurement import SensorConfig, Measurement
from .Episode import ProblemSpec, StepRecord, Trajectory

__all__ = [
    'WorldMap', 'Node', 'NodeSet', 'WorldEntry', 'WorldDataset', 'validate_nodes', 'surface_mask',
    'SensorConfig', 'Measurement',
    'ProblemSpec', 'StepRecord', 'Trajectory',
]
