"""Three-server operations on additive shares.

Every operation is a coroutine run by each server on its own share; parties
stay in lock-step through a per-session step counter that tags every frame.
Party i always talks to ``next_party(i)`` / ``prev_party(i)`` on the ring.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .errors import (ChannelClosed, ConfigError, DealerUnavailable, DecodeError, LengthMismatch,
                     MissingComponent, ProtocolError, Timeout, TripleReuse)
from .field import FieldConfig, SeededRng, pack_elements, unpack_elements
from .sharing import next_party, prev_party
from .transport.base import AGGREGATOR, DEALER, DEFAULT_TIMEOUT, SERVERS, Channel, Selector, server_role
from .transport.frame import Frame, MsgType

ZERO_SUM = "zeroSum"
BEAVER = "beaverDealer"
_ORACLE_NAMES = {"zeroSum": ZERO_SUM, "zero-sum": ZERO_SUM, "zero_sum": ZERO_SUM,
                 "beaverDealer": BEAVER, "beaver": BEAVER}
MAX_STEP = 0xFFFF


@dataclass
class Hooks:
    """Fault injection for negative-control tests; all off in normal runs."""

    zero_reshare: bool = False
    zero_triples: bool = False
    replay_triple: bool = False


@dataclass
class SessionContext:
    io: Channel
    role: str
    field: FieldConfig
    session_id: bytes
    rng: SeededRng
    round: int = 0
    timeout: float = DEFAULT_TIMEOUT
    hooks: Hooks = field(default_factory=Hooks)
    step: int = 0
    used_triples: set = field(default_factory=set)

    @property
    def party(self) -> int:
        return SERVERS.index(self.role) + 1

    def next_step(self) -> int:
        self.step += 1
        if self.step > MAX_STEP:
            raise ProtocolError("step counter exhausted for this session")
        return self.step

    def frame(self, msg_type: MsgType, step: int, payload: bytes = b"") -> Frame:
        return Frame(self.session_id, self.round, step, int(msg_type), payload)

    async def send(self, dest: str, msg_type: MsgType, step: int, payload: bytes = b"") -> None:
        await self.io.send(dest, self.frame(msg_type, step, payload))

    async def recv(self, src: Optional[str], msg_type: MsgType, step: Optional[int],
                   timeout: Optional[float] = -1.0) -> Tuple[str, Frame]:
        sel = Selector(src, self.session_id, self.round, step, int(msg_type))
        return await self.io.recv(sel, self.timeout if timeout == -1.0 else timeout)


def _expect_len(values: Sequence[int], n: int, what: str) -> None:
    if len(values) != n:
        raise LengthMismatch(f"{what}: expected {n} elements, got {len(values)}")


def _broadcast(xs: Sequence[int], ys: Sequence[int]) -> Tuple[List[int], List[int]]:
    if len(xs) == len(ys):
        return list(xs), list(ys)
    if len(xs) == 1:
        return list(xs) * len(ys), list(ys)
    if len(ys) == 1:
        return list(xs), list(ys) * len(xs)
    raise LengthMismatch(f"cannot multiply vectors of length {len(xs)} and {len(ys)}")


async def reshare(ctx: SessionContext, values: Sequence[int]) -> List[int]:
    """Re-randomize this party's shares with a fresh zero-sum pad.

    Sends one pad per coordinate to the ring successor, receives the
    predecessor's pads, and returns ``x + r_own - r_prev``.
    """
    i, p, n = ctx.party, ctx.field.p, len(values)
    step = ctx.next_step()
    pads = [0] * n if ctx.hooks.zero_reshare else ctx.field.sample_many(ctx.rng, n)
    await ctx.send(server_role(next_party(i)), MsgType.RESHARE_R, step, pack_elements(pads))
    _, f = await ctx.recv(server_role(prev_party(i)), MsgType.RESHARE_R, step)
    prev_pads, _ = unpack_elements(f.payload, ctx.field)
    _expect_len(prev_pads, n, "RESHARE_R")
    return [(x + r - q) % p for x, r, q in zip(values, pads, prev_pads)]


async def mul_zero_sum(ctx: SessionContext, xs: Sequence[int], ys: Sequence[int]) -> List[int]:
    """Elementwise product of shared vectors (length-1 operands broadcast).

    Both operands are reshared in a single batched frame, then each party
    forwards its reshared pair to its successor and combines its own pair
    with its predecessor's:  z = x'y' + x'y_prev' + x_prev'y'.
    """
    i, p = ctx.party, ctx.field.p
    _broadcast(xs, ys)
    nx = len(xs)
    padded = await reshare(ctx, list(xs) + list(ys))
    own_x, own_y = padded[:nx], padded[nx:]
    step = ctx.next_step()
    await ctx.send(server_role(next_party(i)), MsgType.MUL_FORWARD, step,
                   pack_elements(own_x) + pack_elements(own_y))
    _, f = await ctx.recv(server_role(prev_party(i)), MsgType.MUL_FORWARD, step)
    prev_x, off = unpack_elements(f.payload, ctx.field)
    prev_y, _ = unpack_elements(f.payload, ctx.field, off)
    _expect_len(prev_x, nx, "MUL_FORWARD x")
    _expect_len(prev_y, len(ys), "MUL_FORWARD y")
    own_x, own_y = _broadcast(own_x, own_y)
    prev_x, prev_y = _broadcast(prev_x, prev_y)
    return [(xa * ya + xa * yb + xb * ya) % p
            for xa, ya, xb, yb in zip(own_x, own_y, prev_x, prev_y)]


def encode_triple(triple_id: int, a: Sequence[int], b: Sequence[int], c: Sequence[int]) -> bytes:
    return struct.pack("<Q", triple_id) + pack_elements(a) + pack_elements(b) + pack_elements(c)


def decode_triple(payload: bytes, field: FieldConfig) -> Tuple[int, List[int], List[int], List[int]]:
    if len(payload) < 8:
        raise DecodeError("truncated triple id")
    (tid,) = struct.unpack_from("<Q", payload)
    a, off = unpack_elements(payload, field, 8)
    b, off = unpack_elements(payload, field, off)
    c, _ = unpack_elements(payload, field, off)
    if not len(a) == len(b) == len(c):
        raise DecodeError("triple components differ in length")
    return tid, a, b, c


async def mul_beaver(ctx: SessionContext, xs: Sequence[int], ys: Sequence[int]) -> List[int]:
    """Elementwise product using one dealer triple per coordinate."""
    i, p = ctx.party, ctx.field.p
    xs, ys = _broadcast(xs, ys)
    n = len(xs)
    step = ctx.next_step()
    try:
        await ctx.send(DEALER, MsgType.TRIPLE_REQUEST, step, struct.pack("<I", n))
        _, f = await ctx.recv(DEALER, MsgType.BEAVER_TRIPLE, step)
    except (Timeout, ChannelClosed) as e:
        raise DealerUnavailable(f"{ctx.role}: no triple for step {step}: {e}") from e
    tid, a, b, c = decode_triple(f.payload, ctx.field)
    _expect_len(a, n, "BEAVER_TRIPLE")
    if tid in ctx.used_triples:
        raise TripleReuse(f"{ctx.role}: triple {tid} already consumed")
    ctx.used_triples.add(tid)

    d = [(x - ai) % p for x, ai in zip(xs, a)]
    e = [(y - bi) % p for y, bi in zip(ys, b)]
    step = ctx.next_step()
    others = [r for r in SERVERS if r != ctx.role]
    payload = pack_elements(d) + pack_elements(e)
    for r in others:
        await ctx.send(r, MsgType.BEAVER_OPEN, step, payload)
    for r in others:
        _, f = await ctx.recv(r, MsgType.BEAVER_OPEN, step)
        dj, off = unpack_elements(f.payload, ctx.field)
        ej, _ = unpack_elements(f.payload, ctx.field, off)
        _expect_len(dj, n, "BEAVER_OPEN d")
        _expect_len(ej, n, "BEAVER_OPEN e")
        d = [u + v for u, v in zip(d, dj)]
        e = [u + v for u, v in zip(e, ej)]
    d = [v % p for v in d]
    e = [v % p for v in e]
    z = [(ci + dv * bi + ev * ai) % p for ci, dv, ev, ai, bi in zip(c, d, e, a, b)]
    if i == 1:
        z = [(zi + dv * ev) % p for zi, dv, ev in zip(z, d, e)]
    return z


class MultiplicationOracle:
    """Shares of x and y in, shares of x*y out.  ``name`` tags the backend."""

    name: str

    async def multiply(self, ctx: SessionContext, xs: Sequence[int], ys: Sequence[int]) -> List[int]:
        raise NotImplementedError


class ZeroSumOracle(MultiplicationOracle):
    name = ZERO_SUM

    async def multiply(self, ctx, xs, ys):
        return await mul_zero_sum(ctx, xs, ys)


class BeaverOracle(MultiplicationOracle):
    name = BEAVER

    async def multiply(self, ctx, xs, ys):
        return await mul_beaver(ctx, xs, ys)


def oracle_name(name: str) -> str:
    try:
        return _ORACLE_NAMES[name]
    except KeyError:
        raise ConfigError(f"unknown multiplication oracle {name!r}") from None


def make_oracle(name: str) -> MultiplicationOracle:
    return ZeroSumOracle() if oracle_name(name) == ZERO_SUM else BeaverOracle()


async def scalar_vector_mul(ctx: SessionContext, n_i: int, w_i: Sequence[int],
                            oracle: MultiplicationOracle) -> List[int]:
    """Shares of ``n * w_j`` for every coordinate, in one batched multiplication."""
    if len(w_i) == 0:
        raise LengthMismatch("empty feature vector")
    return await oracle.multiply(ctx, [n_i], list(w_i))


async def dealer_service(ctx: SessionContext) -> int:
    """Trusted triple dealer.

    Waits until all three servers request triples for the same step, then
    sends each its shares of fresh ``(a, b, c = a*b)``.  Returns the number of
    triples served once every server has hung up.
    """
    f_cfg, p = ctx.field, ctx.field.p
    pending: dict = {}
    served: set = set()
    first_payloads: Optional[List[bytes]] = None
    next_id = 0
    while True:
        try:
            src, f = await ctx.io.recv(Selector(msg_type=int(MsgType.TRIPLE_REQUEST)), timeout=None)
        except ChannelClosed:
            return next_id
        if src not in SERVERS:
            continue
        key = (f.session_id, f.round, f.step)
        if key in served:
            raise TripleReuse(f"triple for step {f.step} already served")
        if len(f.payload) != 4:
            raise DecodeError("TRIPLE_REQUEST payload must be a u32 count")
        (count,) = struct.unpack("<I", f.payload)
        reqs = pending.setdefault(key, {})
        reqs[src] = count
        if len(reqs) < 3:
            continue
        del pending[key]
        served.add(key)
        if len(set(reqs.values())) != 1:
            raise LengthMismatch(f"servers requested different triple counts: {reqs}")
        if ctx.hooks.zero_triples:
            a = b = [0] * count
        else:
            a = f_cfg.sample_many(ctx.rng, count)
            b = f_cfg.sample_many(ctx.rng, count)
        c = [x * y % p for x, y in zip(a, b)]
        next_id += 1
        comps = [_split_list(v, ctx.rng, f_cfg, ctx.hooks.zero_triples) for v in (a, b, c)]
        payloads = [encode_triple(next_id, comps[0][k], comps[1][k], comps[2][k]) for k in range(3)]
        if ctx.hooks.replay_triple and first_payloads is not None:
            payloads = first_payloads
        first_payloads = first_payloads or payloads
        for k, role in enumerate(SERVERS):
            await ctx.io.send(role, Frame(f.session_id, f.round, f.step, int(MsgType.BEAVER_TRIPLE),
                                          payloads[k]))


def _split_list(values: Sequence[int], rng: SeededRng, field: FieldConfig, zero: bool) -> List[List[int]]:
    p = field.p
    cols: List[List[int]] = [[], [], []]
    for v in values:
        s1, s2 = (0, 0) if zero else (rng.below(p), rng.below(p))
        cols[0].append(s1)
        cols[1].append(s2)
        cols[2].append((v - s1 - s2) % p)
    return cols


def encode_open(party: int, values: Sequence[int]) -> bytes:
    return struct.pack("<B", party) + pack_elements(values)


async def open_value(ctx: SessionContext, values: Optional[Sequence[int]],
                     receiver: str = AGGREGATOR) -> Optional[List[int]]:
    """Reveal a shared vector to ``receiver`` only.

    Servers send their component and get ``None``; the receiver collects all
    three components and returns the reconstruction.
    """
    if ctx.role != receiver:
        step = ctx.next_step()
        await ctx.send(receiver, MsgType.OPEN_SHARE, step, encode_open(ctx.party, values))
        return None
    parts = {}
    steps = set()
    for role in SERVERS:
        _, f = await ctx.recv(role, MsgType.OPEN_SHARE, None)
        if not f.payload:
            raise DecodeError("empty OPEN_SHARE")
        idx = f.payload[0]
        if idx != SERVERS.index(role) + 1:
            raise MissingComponent(f"{role} sent component {idx}")
        parts[idx], _ = unpack_elements(f.payload, ctx.field, 1)
        steps.add(f.step)
    if len(steps) != 1:
        raise ProtocolError(f"servers opened at different steps: {sorted(steps)}")
    lengths = {len(v) for v in parts.values()}
    if len(lengths) != 1:
        raise LengthMismatch(f"opened components differ in length: {sorted(lengths)}")
    p = ctx.field.p
    return [(a + b + c) % p for a, b, c in zip(parts[1], parts[2], parts[3])]
