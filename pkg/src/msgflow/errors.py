"""Exception types raised by the public API."""

from __future__ import annotations


class MsgflowError(Exception):
    """Base class for all errors raised by this package."""


class TraceFormatError(MsgflowError, ValueError):
    """A trace record violates the event grammar."""


class BundleError(MsgflowError):
    """A trace bundle directory cannot be read or decoded."""


class ValidationError(MsgflowError):
    """Strict loading rejected a bundle with validation violations."""


class SyncError(MsgflowError):
    """Clock corrections cannot be estimated or applied."""


class GraphError(MsgflowError):
    """The reconstructed flow graph violates a structural guarantee."""


class UnknownMessageError(MsgflowError, KeyError):
    """A message key does not name any publish in the trace."""

    def __str__(self) -> str:  # KeyError quotes its payload; keep the message readable
        return self.args[0] if self.args else ""


class ConfigError(MsgflowError, ValueError):
    """A simulation config is malformed or inconsistent."""
