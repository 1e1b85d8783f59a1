class MapMergeError(Exception):
    pass


class ConfigError(MapMergeError, ValueError):
    pass


class BoundaryError(MapMergeError):
    """Adjacent keyframes needed around a loop closure do not exist."""


class InsufficientMatches(MapMergeError):
    pass


class DegenerateGeometry(MapMergeError):
    pass


class NumericalError(MapMergeError):
    pass


class NoAcceptablePair(MapMergeError):
    pass


class TooFewPoints(MapMergeError):
    pass


class SingularHessian(MapMergeError):
    pass


class MissingEstimate(MapMergeError):
    pass


class NotConnected(MapMergeError):
    pass


class GaugeUnfixed(MapMergeError):
    pass


class SessionTimeout(MapMergeError):
    pass


class DisconnectedAgents(MapMergeError):
    pass


class CyclicMerge(MapMergeError):
    pass


class LengthMismatch(MapMergeError, ValueError):
    pass
