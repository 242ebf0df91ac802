"""Exception types raised across the package.

The CLI maps these onto exit codes, so every error a user can trigger from a
file or flag should derive from one of the classes here.
"""


class TadError(Exception):
    """Base class for all package errors."""


class InvariantViolation(TadError, ValueError):
    """A domain object (segment, detection, label space...) is invalid."""


# datasetio
class MalformedJson(TadError):
    pass


class SchemaViolation(TadError):
    pass


class BadOverrideTarget(TadError, ValueError):
    pass


class VideoIdCollision(TadError):
    pass


# fusion
class WeightLengthMismatch(TadError, ValueError):
    pass


class EmptyModelList(TadError, ValueError):
    pass


class EmptyCluster(TadError, ValueError):
    pass


# evaluation
class ZeroGroundTruth(TadError, ValueError):
    pass


class UnknownLabel(TadError):
    pass


class UnknownVideo(TadError):
    pass


# simulator
class InfeasibleConfig(TadError, ValueError):
    pass
