"""Exception hierarchy shared across the simulator."""


class EonsimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(EonsimError):
    """Invalid or inconsistent configuration value.

    The message names the offending key path, e.g.
    ``local_mem.granularity_bytes: must be a power of two``.
    """


class TraceError(EonsimError):
    """Malformed trace file or trace contents."""


class TraceLengthError(TraceError):
    """Source trace too short for the requested workload.

    Carries the number of indices required and available.
    """

    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(
            f"trace too short: {required} indices required, {available} available"
        )


class RatioUndefinedError(EonsimError):
    """Hit ratio requested for a stream with zero accesses."""


class CacheMismatchError(EonsimError):
    """Cross-validation found diverging hit/miss counts."""


class UsageError(EonsimError):
    """Bad command line arguments."""
