"""Exception types raised across the package.

Every failure class named by an operation contract gets its own type so
callers (and the CLI) can map failures to exit codes without string
matching.
"""


class NeuropathError(Exception):
    """Base class for all package errors."""


class InvalidChannelError(NeuropathError):
    """Image channel count outside the supported {1, 3}."""


class InvalidFactorError(NeuropathError):
    """Subsampling factor of zero (or otherwise unusable)."""


class LayerRangeError(NeuropathError):
    """Layer indices outside the network's 1..L range, or s > t."""


class ShapeError(NeuropathError):
    """Grid extents incompatible with an operation (e.g. not divisible
    by a pooling stride)."""


class DomainError(NeuropathError):
    """Value outside an operation's domain (e.g. negative input to the
    neuron matching function, which only accepts post-ReLU values)."""


class UnsupportedConfigError(NeuropathError):
    """Network configuration the engine refuses (e.g. overlapping
    pooling windows)."""


class MismatchedStackError(NeuropathError):
    """Reference/searched activation stacks that do not come from the
    same network or extents."""


class PathCountOverflowError(NeuropathError):
    """Path count would exceed the 64-bit counter."""


class EmptyEvaluationError(NeuropathError):
    """Disparity evaluation with zero valid ground-truth pixels."""


class FormatError(NeuropathError):
    """Malformed binary file (weights, cost volumes, images)."""


class BadMagicError(FormatError):
    """Stream does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Stream has an unsupported format version."""


class TruncatedStreamError(FormatError):
    """Stream ended before the declared payload was read."""


class ChannelChainError(FormatError):
    """Consecutive layers whose channel counts do not chain."""
