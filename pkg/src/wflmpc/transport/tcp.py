"""Stream-socket mesh over asyncio.

Only the three servers listen.  Server i dials every server j < i; the
aggregator, the dealer and clients dial all three servers.  Each connection
is bidirectional and opens with a hello (u16 length + UTF-8 role name), then
carries frames in the shared layout.  TCP ordering gives per-channel FIFO.
"""

from __future__ import annotations

import asyncio
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, Iterable, Mapping, Optional, Tuple

from ..errors import ChannelClosed, ConfigError, DecodeError, Timeout
from .base import DEFAULT_TIMEOUT, SERVERS, Channel, FrameBuffer, Selector, Tap, TapEntry
from .frame import HEADER_SIZE, Frame, decode_frame, decode_header, encode_frame

logger = logging.getLogger(__name__)

Address = Tuple[str, int]
ProgramFactory = Callable[[Channel], Awaitable[object]]


def parse_address(text: str) -> Address:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def dial_targets(role: str) -> Tuple[str, ...]:
    if role in SERVERS:
        return SERVERS[: SERVERS.index(role)]
    return SERVERS


@dataclass
class MeshConfig:
    role: str
    peers: Dict[str, Address]
    listen: Optional[Address] = None
    timeout: float = DEFAULT_TIMEOUT
    expected_session: Optional[bytes] = None
    tap: Optional[Tap] = field(default=None, repr=False)


class TcpChannel(Channel):
    def __init__(self, cfg: MeshConfig):
        self.cfg = cfg
        self.role = cfg.role
        self.buffer = FrameBuffer(cfg.expected_session)
        self._writers: Dict[str, asyncio.StreamWriter] = {}
        self._connected: Dict[str, asyncio.Event] = {}
        self._closed: set = set()
        self._cond = asyncio.Condition()
        self._server: Optional[asyncio.AbstractServer] = None
        self._tasks: list = []
        self.frames_sent = 0

    @property
    def port(self) -> Optional[int]:
        if self._server is None:
            return None
        return self._server.sockets[0].getsockname()[1]

    def _event(self, role: str) -> asyncio.Event:
        return self._connected.setdefault(role, asyncio.Event())

    async def listen(self) -> None:
        if self.cfg.listen is not None:
            host, port = self.cfg.listen
            self._server = await asyncio.start_server(self._on_accept, host, port)

    async def start(self) -> None:
        """Listen (servers) and dial outbound peers in the background."""
        if self._server is None:
            await self.listen()
        for peer in dial_targets(self.role):
            if peer in self.cfg.peers:
                self._tasks.append(asyncio.ensure_future(self._dial(peer)))

    async def _dial(self, peer: str) -> None:
        host, port = self.cfg.peers[peer]
        deadline = time.monotonic() + self.cfg.timeout
        delay = 0.01
        while True:
            try:
                reader, writer = await asyncio.open_connection(host, port)
                break
            except OSError:
                if time.monotonic() >= deadline:
                    logger.warning("%s: giving up dialing %s at %s:%s", self.role, peer, host, port)
                    return
                await asyncio.sleep(delay)
                delay = min(delay * 2, 0.2)
        name = self.role.encode()
        writer.write(struct.pack("<H", len(name)) + name)
        await writer.drain()
        await self._attach(peer, reader, writer)

    async def _on_accept(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            (n,) = struct.unpack("<H", await reader.readexactly(2))
            peer = (await reader.readexactly(n)).decode()
        except (asyncio.IncompleteReadError, UnicodeDecodeError, ConnectionError):
            writer.close()
            return
        await self._attach(peer, reader, writer)

    async def _attach(self, peer: str, reader, writer) -> None:
        self._writers[peer] = writer
        self._closed.discard(peer)
        self._event(peer).set()
        self._tasks.append(asyncio.ensure_future(self._read_loop(peer, reader)))

    async def _read_loop(self, peer: str, reader: asyncio.StreamReader) -> None:
        try:
            while True:
                head = await reader.readexactly(HEADER_SIZE)
                _, length = decode_header(head)
                body = await reader.readexactly(length)
                frame = decode_frame(head + body)
                if self.cfg.tap is not None:
                    self.cfg.tap.entries.append(TapEntry("in", peer, frame))
                async with self._cond:
                    self.buffer.put(peer, frame)
                    self._cond.notify_all()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except DecodeError as e:
            logger.error("%s: malformed frame from %s: %s", self.role, peer, e)
        finally:
            async with self._cond:
                self._closed.add(peer)
                self._cond.notify_all()

    async def send(self, dest: str, frame: Frame) -> None:
        data = encode_frame(frame)
        ev = self._event(dest)
        try:
            await asyncio.wait_for(ev.wait(), self.cfg.timeout)
        except asyncio.TimeoutError:
            raise Timeout(f"{self.role}: no connection to {dest} within {self.cfg.timeout}s") from None
        if dest in self._closed:
            raise ChannelClosed(f"{self.role}: connection to {dest} closed")
        writer = self._writers[dest]
        writer.write(data)
        try:
            await writer.drain()
        except ConnectionError as e:
            raise ChannelClosed(f"{self.role} -> {dest}: {e}") from e
        self.frames_sent += 1
        if self.cfg.tap is not None:
            self.cfg.tap.entries.append(TapEntry("out", dest, frame))

    def _all_closed(self, sel: Selector) -> bool:
        if sel.src is not None:
            return sel.src in self._closed
        return bool(self._writers) and all(p in self._closed for p in self._writers)

    async def recv(self, selector: Selector, timeout: Optional[float] = DEFAULT_TIMEOUT):
        deadline = None if timeout is None else time.monotonic() + timeout
        async with self._cond:
            while True:
                hit = self.buffer.take(selector)
                if hit is not None:
                    return hit
                if self._all_closed(selector):
                    raise ChannelClosed(f"{self.role}: peers closed while waiting for {selector}")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise Timeout(f"{self.role}: no frame matching {selector} within {timeout}s")
                try:
                    await asyncio.wait_for(self._cond.wait(), remaining)
                except asyncio.TimeoutError:
                    pass

    async def close(self) -> None:
        for w in list(self._writers.values()):
            try:
                if w.can_write_eof():
                    w.write_eof()
            except (OSError, RuntimeError):
                pass
        if self._server is not None:
            self._server.close()
        pending = [t for t in self._tasks if not t.done()]
        if pending:
            # let peers drain what we already wrote before tearing sockets down
            await asyncio.wait(pending, timeout=self.cfg.timeout)
        for w in list(self._writers.values()):
            w.close()
        for t in self._tasks:
            t.cancel()


async def run_mesh(programs: Mapping[str, ProgramFactory], peers_listen: Mapping[str, Address] = None,
                   timeout: float = DEFAULT_TIMEOUT, expected_session: Optional[bytes] = None,
                   taps: Iterable[str] = (), host: str = "127.0.0.1") -> Tuple[Dict[str, object], Dict[str, Tap], int]:
    """Run several roles in one event loop over real localhost sockets.

    ``programs`` maps role -> callable taking the role's channel and returning
    a coroutine.  Servers bind ephemeral ports unless ``peers_listen`` pins
    them.  Returns (results, taps, frames sent).
    """
    from .sim import root_error

    tap_objs = {r: Tap(r) for r in taps}
    channels: Dict[str, TcpChannel] = {}
    peers: Dict[str, Address] = {}
    for role in SERVERS:
        if role in programs:
            listen = (peers_listen or {}).get(role, (host, 0))
            ch = TcpChannel(MeshConfig(role, peers, listen, timeout, expected_session, tap_objs.get(role)))
            await ch.listen()
            peers[role] = (host, ch.port)
            channels[role] = ch
    for role in programs:
        if role not in channels:
            channels[role] = TcpChannel(MeshConfig(role, peers, None, timeout, expected_session,
                                                   tap_objs.get(role)))
    for ch in channels.values():
        await ch.start()

    async def guarded(role: str):
        ch = channels[role]
        try:
            return await programs[role](ch)
        finally:
            await ch.close()

    roles = list(programs)
    outcomes = await asyncio.gather(*(guarded(r) for r in roles), return_exceptions=True)
    errors = [(r, o) for r, o in zip(roles, outcomes) if isinstance(o, BaseException)]
    if errors:
        for _, e in errors:
            if not isinstance(e, Exception):
                raise e
        raise root_error(errors)
    frames = sum(ch.frames_sent for ch in channels.values())
    return dict(zip(roles, outcomes)), tap_objs, frames

