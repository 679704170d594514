from __future__ import annotations


class InfoGatherError(Exception):
    """Base class for every error raised by this package"""


class InvalidConfigError(InfoGatherError, ValueError):
    """A parameter set that cannot produce a valid result"""


class ConfigMismatchError(InvalidConfigError):
    """Training algorithm and problem variant disagree"""


class InsufficientFreeSpaceError(InfoGatherError):
    pass


class NodeInsideObstacleError(InfoGatherError, ValueError):
    pass


class ZeroCoverableWorldError(InfoGatherError):
    pass


class UnknownNodeError(InfoGatherError, KeyError):
    pass


class ObservationConflictError(InfoGatherError):
    """A cell was observed both Free and Occupied; the sensor and world disagree"""


class NoFeasibleActionError(InfoGatherError):
    pass


class EmptyDatasetError(InfoGatherError):
    pass


class SchemaMismatchError(InfoGatherError):
    pass


class InstanceTooLargeError(InfoGatherError):
    pass


class NoConsistentWorldError(InfoGatherError):
    pass


class DatasetFormatError(InfoGatherError):
    """A world, model or policy file could not be decoded"""


class FormatVersionError(DatasetFormatError):
    pass
