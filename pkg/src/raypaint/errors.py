"""Exception taxonomy shared across the package.

Every error raised by the public API is one of these, so the CLI and the
HTTP layer can map them to exit codes / ApiError codes mechanically.
"""


class RaypaintError(Exception):
    """Base class for all domain errors."""


class ConfigurationError(RaypaintError, ValueError):
    """Invalid configuration value (bad weight, bad resolution, unknown prompt...)."""


class ContractViolation(RaypaintError, ValueError):
    """Caller broke an operation precondition (shape mismatch, non-unit direction...)."""


class FormatError(RaypaintError, ValueError):
    """On-disk artifact is malformed; message names the offending file."""


class MissingFileError(FormatError):
    """A file referenced by a meta/provenance record does not exist."""


class ConflictError(RaypaintError, RuntimeError):
    """Operation refused because a conflicting one is in progress."""


class NumericFault(RaypaintError, RuntimeError):
    """Non-finite value produced where finiteness is guaranteed."""


class DegenerateFieldError(RaypaintError, RuntimeError):
    """Field state unusable for the requested operation (e.g. all-zero features)."""


class NotFittedError(RaypaintError, RuntimeError):
    """Estimator used before fit()."""
