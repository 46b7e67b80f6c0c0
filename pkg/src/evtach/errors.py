"""Exception types raised across the package."""


class EvTachError(Exception):
    pass


class EventParseError(EvTachError, ValueError):
    pass


class EventValidationError(EvTachError, ValueError):
    pass


class SceneError(EvTachError, ValueError):
    pass


class EmptyInput(EvTachError, ValueError):
    pass


class InsufficientCandidates(EvTachError):
    pass


class UndefinedMetric(EvTachError, ValueError):
    """Metric evaluated outside its domain (DBI with k < 2, RMAE of nothing)."""


class ExtractionFailed(EvTachError):
    pass


class SymmetryUndetermined(EvTachError):
    pass


class DegenerateGeometry(EvTachError):
    pass


class TooFewEvents(EvTachError):
    pass


class EstimationFailed(EvTachError):
    pass
