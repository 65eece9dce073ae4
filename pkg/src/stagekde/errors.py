"""Exception types raised by stagekde."""


class StageKDEError(Exception):
    """Base class for all library errors."""


class DomainError(StageKDEError, ValueError):
    """A divergence map was evaluated outside its domain."""


class DegenerateDataError(StageKDEError, ValueError):
    """Data cannot support the requested bandwidth rule (too few points, zero variance)."""


class CoverageError(StageKDEError):
    """The integration box misses more mass than the tolerance allows."""


class NumericIntegrityError(StageKDEError):
    """A computed quantity violates a mathematical guarantee (negative divergence, gamma <= 0)."""


class FitError(StageKDEError):
    """The stagewise fit could not proceed."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class SchemaError(StageKDEError, ValueError):
    """A scenario or config document failed validation."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)
