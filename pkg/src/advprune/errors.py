"""Exception hierarchy shared by every module."""


class AdvpruneError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AdvpruneError):
    """Shapes are incompatible with the requested operation."""


class ParameterError(AdvpruneError):
    """A numeric argument is out of its admissible range."""


class ContractError(AdvpruneError):
    """An API precondition was violated by the caller."""


class ParseError(AdvpruneError):
    """A file or string could not be decoded; message carries the offset."""


class ValidationError(AdvpruneError):
    """Loaded or configured data violates a documented invariant."""


class FormatError(AdvpruneError):
    """A structured file has the wrong magic, version, or schema."""


class EstimationError(AdvpruneError):
    """A numeric estimation procedure has no usable samples."""
