"""Exception types shared across the package."""


class BmmError(Exception):
    """Base class for errors raised by this package."""


class FormatError(BmmError):
    """A file does not parse under its declared format."""


class ValidationError(BmmError):
    """Parsed or supplied data violates an invariant."""


class ParameterError(BmmError):
    """A caller-supplied parameter is out of range or inconsistent."""


class InsufficientSamplesError(BmmError):
    """A mode holds too few samples to fit Gaussian statistics."""


class NumericalError(BmmError):
    """A numerical routine failed or produced a non-finite result."""


class InfeasibleMatchError(BmmError):
    """The assignment problem admits no one-to-one matching."""


class TreeFormatError(FormatError):
    """A persisted mode tree is unreadable or has an incompatible version."""
