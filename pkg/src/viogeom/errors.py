"""Exception hierarchy shared across the package."""


class ViogeomError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ViogeomError):
    """A dataset or text file could not be parsed.

    Carries enough context (path, line/row) to locate the offending input.
    """

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + ctx)
        self.path = path
        self.line = line


class FormatError(ParseError):
    """A binary file violates its format (bad magic, truncated payload, ...)."""


class ConfigError(ViogeomError):
    """Run configuration is invalid (unknown key, bad type, bad value)."""


class StreamError(ViogeomError):
    """An IMU sample stream is malformed (empty, non-monotone timestamps)."""


class RegistrationError(ViogeomError):
    """Point-cloud registration failed (degenerate geometry, no matches)."""


class GeometryError(ViogeomError):
    """A geometric precondition is violated (e.g. point behind camera)."""


class TrustRegionError(ViogeomError):
    """A first-order bias correction exceeds its linearization trust region.

    The caller should re-preintegrate at the corrected bias instead.
    """


class OptimizationError(ViogeomError):
    """The status-update solver hit singular normal equations."""
