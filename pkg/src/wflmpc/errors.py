"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class MPCError(Exception):
    """Base class for all engine errors."""


class InputError(MPCError, ValueError):
    """Bad caller-supplied input; detected before any protocol traffic."""


class ConfigError(InputError):
    pass


class ConfigMismatch(InputError):
    """Arithmetic between values bound to different field configurations."""


class OutOfRange(InputError):
    pass


class NonPositiveWeight(InputError):
    pass


class EmptyVector(InputError):
    pass


class MissingComponent(InputError):
    pass


class InsufficientTrials(InputError):
    pass


class ProtocolError(MPCError):
    """Failure while parties are exchanging messages."""


class LengthMismatch(ProtocolError):
    pass


class SessionMismatch(ProtocolError):
    pass


class ClientSetMismatch(ProtocolError):
    pass


class TripleReuse(ProtocolError):
    pass


class ZeroTotalWeight(ProtocolError):
    pass


class ChannelClosed(ProtocolError):
    pass


class DecodeError(ProtocolError):
    pass


class PayloadTooLarge(ProtocolError):
    pass


class Timeout(ProtocolError, TimeoutError):
    """No matching frame arrived before the deadline."""


class DealerUnavailable(Timeout):
    pass


class RoundFailed(MPCError):
    """A round aborted; ``stage`` names the pipeline step that failed."""

    def __init__(self, stage: str, role: str, cause: BaseException):
        super().__init__(f"{role} failed during {stage}: {cause!r}")
        self.stage = stage
        self.role = role
        self.cause = cause
