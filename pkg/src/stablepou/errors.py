"""Exception types shared across the package."""


class StablePOUError(Exception):
    """Base class for all package errors."""


class CertificateNotFound(StablePOUError):
    """The stability-certificate search found no valid Q.

    Existence is guaranteed under the standing assumptions, so this usually
    means the line-search grid was too coarse.  ``diagnostics`` carries the
    best candidate that was tried.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DivergedError(StablePOUError):
    """A trajectory left the finite range (or crossed the divergence sentinel)."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class NumericalFailure(StablePOUError):
    """A numerical routine produced non-finite intermediates."""


class ConfigError(StablePOUError, ValueError):
    """A configuration field is missing or violates its constraint."""

    def __init__(self, field, constraint):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint


class StageError(StablePOUError):
    """An experiment stage failed; names the stage and the repeat index."""

    def __init__(self, stage, repeat, cause):
        super().__init__(f"stage {stage!r} failed at repeat {repeat}: {cause}")
        self.stage = stage
        self.repeat = repeat
        self.cause = cause
