"""Backend-neutral channel interface, frame selectors and role names."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

from ..errors import SessionMismatch
from .frame import Frame

SERVERS = ("server1", "server2", "server3")
AGGREGATOR = "aggregator"
DEALER = "dealer"

DEFAULT_TIMEOUT = 10.0


def server_role(i: int) -> str:
    return SERVERS[i - 1]


def client_role(client_id: str) -> str:
    return f"client:{client_id}"


def server_index(role: str) -> int:
    return SERVERS.index(role) + 1


@dataclass(frozen=True)
class Selector:
    """Frame filter for :meth:`Channel.recv`; ``None`` fields match anything."""

    src: Optional[str] = None
    session_id: Optional[bytes] = None
    round: Optional[int] = None
    step: Optional[int] = None
    msg_type: Optional[int] = None

    def matches(self, src: str, f: Frame) -> bool:
        return ((self.src is None or self.src == src)
                and (self.msg_type is None or self.msg_type == f.msg_type)
                and (self.step is None or self.step == f.step)
                and (self.round is None or self.round == f.round)
                and (self.session_id is None or self.session_id == f.session_id))


@dataclass
class TapEntry:
    direction: str  # "in" or "out"
    peer: str
    frame: Frame


@dataclass
class Tap:
    """Every frame sent or received by one role, in local order."""

    role: str
    entries: List[TapEntry] = field(default_factory=list)


class FrameBuffer:
    """Arrived-but-unclaimed frames, in arrival order."""

    def __init__(self, expected_session: Optional[bytes] = None):
        self._items: List[Tuple[str, Frame]] = []
        self.expected_session = expected_session
        self.error: Optional[Exception] = None

    def put(self, src: str, f: Frame) -> None:
        if self.expected_session is not None and f.session_id != self.expected_session:
            self.error = SessionMismatch(
                f"frame from {src} for session {f.session_id.hex()} "
                f"(expected {self.expected_session.hex()})")
            return
        self._items.append((src, f))

    def take(self, sel: Selector) -> Optional[Tuple[str, Frame]]:
        if self.error is not None:
            err, self.error = self.error, None
            raise err
        for idx, (src, f) in enumerate(self._items):
            if sel.matches(src, f):
                del self._items[idx]
                return src, f
        return None

    def pending_from(self, srcs: Iterable[str]) -> bool:
        srcs = set(srcs)
        return any(s in srcs for s, _ in self._items)

    def __len__(self):
        return len(self._items)


class Channel(ABC):
    """One role's endpoint on a mesh."""

    role: str

    @abstractmethod
    async def send(self, dest: str, frame: Frame) -> None:
        ...

    @abstractmethod
    async def recv(self, selector: Selector, timeout: Optional[float] = DEFAULT_TIMEOUT) -> Tuple[str, Frame]:
        """First buffered or arriving frame matching ``selector``.

        Raises ``Timeout`` past the deadline (``None`` waits forever) and
        ``ChannelClosed`` once every possible sender is gone.
        """
