"""Deterministic in-process network.

Party programs are ordinary ``async def`` coroutines that only await
``Channel.send``/``Channel.recv``; the simulator drives them itself instead of
using an asyncio loop.  Delivery latency and the order in which runnable
parties are stepped both come from one seeded RNG, so a seed fixes the global
transcript byte for byte.  Time is virtual (seconds).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass
from typing import Any, Callable, Coroutine, Dict, Iterable, List, Mapping, Optional, Tuple

from ..errors import ChannelClosed, DealerUnavailable, MPCError, Timeout
from ..field import derive_seed
from .base import DEFAULT_TIMEOUT, Channel, FrameBuffer, Selector, Tap, TapEntry
from .frame import Frame, decode_frame, encode_frame

LatencyModel = Callable[[random.Random, str, str], float]


def uniform_latency(lo: float = 0.001, hi: float = 0.005) -> LatencyModel:
    return lambda rng, src, dst: rng.uniform(lo, hi)


class _Wait:
    __slots__ = ("selector", "timeout", "deadline")

    def __init__(self, selector: Selector, timeout: Optional[float]):
        self.selector = selector
        self.timeout = timeout
        self.deadline: Optional[float] = None

    def __await__(self):
        hit = yield self
        return hit


class SimChannel(Channel):
    def __init__(self, net: "SimNetwork", role: str, expected_session: Optional[bytes] = None):
        self.net = net
        self.role = role
        self.buffer = FrameBuffer(expected_session)

    async def send(self, dest: str, frame: Frame) -> None:
        self.net._send(self.role, dest, frame)

    async def recv(self, selector: Selector, timeout: Optional[float] = DEFAULT_TIMEOUT):
        hit = self.buffer.take(selector)
        if hit is not None:
            return hit
        return await _Wait(selector, timeout)


@dataclass
class TranscriptEntry:
    time: float
    src: str
    dst: str
    data: bytes


class _Task:
    __slots__ = ("role", "coro", "daemon", "wait", "done", "result", "error")

    def __init__(self, role: str, coro: Coroutine, daemon: bool):
        self.role = role
        self.coro = coro
        self.daemon = daemon
        self.wait: Optional[_Wait] = None
        self.done = False
        self.result: Any = None
        self.error: Optional[BaseException] = None


def root_error(errors: List[Tuple[str, BaseException]]) -> BaseException:
    """Pick the error most likely to be the cause rather than a symptom."""

    def rank(e: BaseException) -> int:
        inner = getattr(e, "cause", e)
        if isinstance(inner, DealerUnavailable):
            return 1
        return 2 if isinstance(inner, (Timeout, ChannelClosed)) else 0

    return min(errors, key=lambda item: rank(item[1]))[1]


class SimNetwork:
    """A seeded, single-threaded mesh of :class:`SimChannel` endpoints."""

    def __init__(self, seed: int = 0, latency: Optional[LatencyModel] = None):
        self.seed = seed
        self._rng = random.Random(derive_seed("sim-network", seed))
        self._latency = latency or uniform_latency()
        self.now = 0.0
        self._heap: List[tuple] = []
        self._seq = 0
        self._last: Dict[Tuple[str, str], float] = {}
        self._channels: Dict[str, SimChannel] = {}
        self._tasks: Dict[str, _Task] = {}
        self._ready: List[tuple] = []
        self.transcript: List[TranscriptEntry] = []
        self.taps: Dict[str, Tap] = {}
        self.frames_sent = 0

    def channel(self, role: str, expected_session: Optional[bytes] = None) -> SimChannel:
        if role in self._channels:
            raise ValueError(f"role {role!r} already has a channel")
        ch = SimChannel(self, role, expected_session)
        self._channels[role] = ch
        return ch

    def tap(self, role: str) -> Tap:
        return self.taps.setdefault(role, Tap(role))

    # sending / delivery

    def _send(self, src: str, dst: str, frame: Frame) -> None:
        if dst not in self._channels:
            raise ChannelClosed(f"{src} -> {dst}: no such endpoint")
        data = encode_frame(frame)
        t = self.now + self._latency(self._rng, src, dst)
        t = max(t, self._last.get((src, dst), 0.0))  # per-channel FIFO
        self._last[(src, dst)] = t
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, src, dst, data))
        self.frames_sent += 1
        if src in self.taps:
            self.taps[src].entries.append(TapEntry("out", dst, frame))

    def _deliver(self) -> None:
        t, _, src, dst, data = heapq.heappop(self._heap)
        self.now = t
        frame = decode_frame(data)
        self.transcript.append(TranscriptEntry(t, src, dst, data))
        if dst in self.taps:
            self.taps[dst].entries.append(TapEntry("in", src, frame))
        ch = self._channels[dst]
        ch.buffer.put(src, frame)
        task = self._tasks.get(dst)
        if task is not None and task.wait is not None:
            try:
                hit = ch.buffer.take(task.wait.selector)
            except MPCError as e:
                self._resume(task, exc=e)
                return
            if hit is not None:
                self._resume(task, value=hit)

    # scheduling

    def _resume(self, task: _Task, value: Any = None, exc: Optional[BaseException] = None) -> None:
        task.wait = None
        self._ready.append((task, value, exc))

    def _step(self, task: _Task, value: Any, exc: Optional[BaseException], errors: list) -> None:
        try:
            w = task.coro.throw(exc) if exc is not None else task.coro.send(value)
        except StopIteration as stop:
            task.done = True
            task.result = stop.value
        except Exception as e:  # noqa: BLE001 - reported after the run
            task.done = True
            task.error = e
            errors.append((task.role, e))
        else:
            if not isinstance(w, _Wait):
                raise RuntimeError(f"{task.role} awaited a non-simulator object: {w!r}")
            w.deadline = None if w.timeout is None else self.now + w.timeout
            task.wait = w

    def _closed_waiters(self) -> None:
        in_flight = {(src, dst) for _, _, src, dst, _ in self._heap}
        for task in self._tasks.values():
            if task.wait is None:
                continue
            sel = task.wait.selector
            if sel.src is not None:
                senders: Iterable[str] = (sel.src,)
            else:
                senders = [r for r in self._channels if r != task.role]
            alive = [s for s in senders
                     if (s in self._tasks and not self._tasks[s].done) or (s, task.role) in in_flight]
            if not alive:
                self._resume(task, exc=ChannelClosed(f"{task.role}: every sender for {sel} has finished"))

    def run(self, programs: Mapping[str, Coroutine], daemons: Iterable[str] = ()) -> Dict[str, Any]:
        """Drive ``programs`` (role -> coroutine) to completion.

        Daemon roles do not keep the run alive.  The first root-cause error is
        re-raised after all other parties have settled.
        """
        daemons = set(daemons)
        for role, coro in programs.items():
            if role not in self._channels:
                raise ValueError(f"no channel for role {role!r}")
            task = _Task(role, coro, role in daemons)
            self._tasks[role] = task
            self._ready.append((task, None, None))
        errors: List[Tuple[str, BaseException]] = []
        try:
            while True:
                while self._ready:
                    idx = self._rng.randrange(len(self._ready))
                    task, value, exc = self._ready.pop(idx)
                    self._step(task, value, exc, errors)
                if all(t.done or t.daemon for t in self._tasks.values()):
                    break
                self._closed_waiters()
                if self._ready:
                    continue
                t_next = self._heap[0][0] if self._heap else math.inf
                waiting = [t for t in self._tasks.values() if t.wait is not None]
                deadlines = [t.wait.deadline for t in waiting if t.wait.deadline is not None]
                t_dead = min(deadlines, default=math.inf)
                if t_next == math.inf and t_dead == math.inf:
                    for t in waiting:
                        if not t.daemon:
                            self._resume(t, exc=Timeout(f"{t.role}: deadlock waiting for {t.wait.selector}"))
                    if not self._ready:
                        break
                elif t_next <= t_dead:
                    self._deliver()
                else:
                    self.now = t_dead
                    for t in waiting:
                        if t.wait.deadline == t_dead:
                            sel = t.wait.selector
                            self._resume(t, exc=Timeout(f"{t.role}: no frame matching {sel} "
                                                        f"within {t.wait.timeout}s"))
        finally:
            for t in self._tasks.values():
                if not t.done:
                    t.coro.close()
        if errors:
            raise root_error(errors)
        return {role: t.result for role, t in self._tasks.items()}
