"""Exception types shared across the package.

The CLI maps these onto its three machine-parsable categories
(ParseError, ConfigError, CacheMiss); library code raises the
specific type.
"""


class NPTCError(Exception):
    """Base class for all package errors."""


class ArgumentError(NPTCError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class ShapeError(NPTCError, ValueError):
    """Array shapes disagree with an operation's contract."""


class ConfigError(NPTCError, ValueError):
    """A configuration document is invalid (unknown key, bad value)."""


class ParseError(NPTCError, ValueError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc += f" [{path}"
            loc += f":{line}]" if line is not None else "]"
        super().__init__(message + loc)


class EmptyCloud(NPTCError, ValueError):
    """An input point cloud contains no points."""


class DisconnectedBand(NPTCError, RuntimeError):
    """A point-containing voxel was unreachable from the seed set.

    ``representative`` is the (i, j, k) index of one unreached voxel.
    """

    def __init__(self, message, representative=None):
        self.representative = representative
        if representative is not None:
            message += f" (unreached voxel {tuple(int(v) for v in representative)})"
        super().__init__(message)


class CacheMissError(NPTCError, RuntimeError):
    """A required cache artifact is missing or stale (upstream hash mismatch)."""

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message += f" [{path}]"
        super().__init__(message)


class InternalError(NPTCError, RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
