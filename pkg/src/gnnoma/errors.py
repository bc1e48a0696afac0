"""Exception types raised across the package."""


class OMAError(Exception):
    """Base class for all package errors."""


class ConfigError(OMAError, ValueError):
    pass


class DegenerateMesh(OMAError):
    pass


class NoSupportableNodes(OMAError):
    pass


class PopulationError(OMAError):
    """A structure in a population failed to generate."""

    def __init__(self, index, cause):
        super().__init__(f"structure {index}: {cause}")
        self.index = index
        self.cause = cause


class SingularSystem(OMAError):
    pass


class IllConditioned(OMAError):
    pass


class BadLength(OMAError, ValueError):
    pass


class TooShort(OMAError, ValueError):
    pass


class AllZero(OMAError, ValueError):
    pass


class ShapeMismatch(OMAError, ValueError):
    pass


class NotScalarLoss(OMAError, ValueError):
    pass


class EmptyGraph(OMAError, ValueError):
    pass


class ZeroTarget(OMAError, ValueError):
    pass


class NoKnownNodes(OMAError, ValueError):
    pass


class EmptyDataset(OMAError, ValueError):
    pass


class TooFewRecords(OMAError, ValueError):
    pass


class NumericalFailure(OMAError):
    pass


class InsufficientPeaks(OMAError):
    def __init__(self, found, wanted):
        super().__init__(f"found {found} peaks, need {wanted}")
        self.found = found
        self.wanted = wanted


class BellTooNarrow(OMAError):
    pass


class ZeroVector(OMAError, ValueError):
    pass


class Empty(OMAError, ValueError):
    pass


class SchemaMismatch(OMAError):
    pass


class CorruptPayload(OMAError):
    pass
