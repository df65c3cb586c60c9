"""Exception hierarchy shared by the library, the service, and the CLI.

Each error class carries the process exit code the CLI maps it to.
"""


class GCNetError(Exception):
    """Base class for all gcnet errors."""

    exit_code = 1


class ConfigError(GCNetError):
    """Invalid configuration: bad weights, duplicate GC positions, missing paths."""

    exit_code = 2


class DataError(GCNetError):
    """Malformed or unusable input data (IDX/CSV parse failures, bad labels)."""

    exit_code = 3


class NumericError(GCNetError):
    """Non-finite values, divergence, or dimension mismatches during computation."""

    exit_code = 4


class DimensionError(NumericError):
    """Tensor shapes incompatible with the requested operation."""


class EquivalenceError(GCNetError):
    """Monolithic and split-network outputs disagree."""

    exit_code = 5


class UndefinedMetricError(GCNetError):
    """A rate whose denominator is zero; reported as absent, never as 0 or NaN."""
