"""Exception hierarchy shared across the package."""


class SemgateError(Exception):
    """Base class for all semgate errors."""


class DimensionMismatch(SemgateError, ValueError):
    pass


class ZeroVector(SemgateError, ValueError):
    pass


class InvalidEntry(SemgateError, ValueError):
    pass


class CorruptSnapshot(SemgateError):
    pass


class IoFailure(SemgateError, OSError):
    pass


class EmptyText(SemgateError, ValueError):
    pass


class ProviderError(SemgateError):
    """Raised by embedding and completion clients."""


class UpstreamUnavailable(ProviderError):
    """Network failure or 5xx from an upstream API (retryable)."""


class AuthFailure(ProviderError):
    """401/403 from an upstream API (never retried)."""


class SchemaError(ProviderError):
    """Upstream answered, but the body does not have the expected shape."""


class EmbeddingFailed(SemgateError):
    pass


class UpstreamFailed(SemgateError):
    pass


class OutOfRange(SemgateError, ValueError):
    pass


class InvalidFraction(SemgateError, ValueError):
    pass


class InvalidRecord(SemgateError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TargetUnavailable(SemgateError):
    pass
