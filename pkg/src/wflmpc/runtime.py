"""Run a set of role programs on either transport backend."""

from __future__ import annotations

import asyncio
import hashlib
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Dict, Iterable, List, Mapping, Optional

from .errors import ConfigError
from .field import FieldConfig, SeededRng, derive_seed
from .protocol import Hooks, SessionContext
from .transport.base import DEFAULT_TIMEOUT, Tap
from .transport.sim import LatencyModel, SimNetwork, TranscriptEntry
from .transport.tcp import run_mesh

Program = Callable[[SessionContext], Awaitable[Any]]
TRANSPORTS = ("sim", "tcp")


def session_id_for(seed: Optional[int], round_no: int) -> bytes:
    return hashlib.sha256(f"wflmpc-session/{seed}/{round_no}".encode()).digest()[:16]


def party_rng(seed: Optional[int], round_no: int, role: str, record: Optional[list] = None) -> SeededRng:
    if seed is None:
        return SeededRng(None, record)
    return SeededRng(derive_seed("party", seed, round_no, role), record)


@dataclass
class Execution:
    results: Dict[str, Any]
    taps: Dict[str, Tap]
    frames: int
    contexts: Dict[str, SessionContext]
    randomness: Dict[str, List[int]] = field(default_factory=dict)
    transcript: Optional[List[TranscriptEntry]] = None


def execute(programs: Mapping[str, Program], field_cfg: FieldConfig, *, seed: Optional[int] = 0,
            round_no: int = 0, session_id: Optional[bytes] = None, transport: str = "sim",
            timeout: float = DEFAULT_TIMEOUT, hooks: Optional[Hooks] = None, taps: Iterable[str] = (),
            latency: Optional[LatencyModel] = None, record_randomness: bool = False,
            network: Optional[SimNetwork] = None) -> Execution:
    if transport not in TRANSPORTS:
        raise ConfigError(f"unknown transport {transport!r}")
    hooks = hooks or Hooks()
    session_id = session_id or session_id_for(seed, round_no)
    taps = list(taps)
    contexts: Dict[str, SessionContext] = {}
    randomness: Dict[str, List[int]] = {}

    def make_ctx(role, channel) -> SessionContext:
        record = randomness.setdefault(role, []) if record_randomness else None
        ctx = SessionContext(channel, role, field_cfg, session_id, party_rng(seed, round_no, role, record),
                             round_no, timeout, hooks)
        contexts[role] = ctx
        return ctx

    if transport == "sim":
        net = network or SimNetwork(0 if seed is None else seed, latency)
        tap_objs = {r: net.tap(r) for r in taps}
        coros = {role: prog(make_ctx(role, net.channel(role, session_id)))
                 for role, prog in programs.items()}
        results = net.run(coros)
        return Execution(results, tap_objs, net.frames_sent, contexts, randomness, net.transcript)

    factories = {role: (lambda ch, prog=prog, role=role: prog(make_ctx(role, ch)))
                 for role, prog in programs.items()}
    results, tap_objs, frames = asyncio.run(run_mesh(factories, timeout=timeout,
                                                     expected_session=session_id, taps=taps))
    return Execution(results, tap_objs, frames, contexts, randomness)


def multiply_pairs(pairs, field_cfg: FieldConfig, oracle: str = "zeroSum", *, seed: int = 0,
                   batch: bool = False, transport: str = "sim", hooks: Optional[Hooks] = None,
                   latency: Optional[LatencyModel] = None) -> List[int]:
    """Share each ``(x, y)``, multiply on the servers and open every product.

    With ``batch=False`` each pair is its own multiplication (and opening);
    with ``batch=True`` all pairs go through one elementwise multiplication.
    """
    from .protocol import BEAVER, dealer_service, make_oracle, oracle_name, open_value
    from .sharing import split_vector
    from .transport.base import AGGREGATOR, DEALER, SERVERS

    pairs = list(pairs)
    rng = SeededRng(derive_seed("inputs", seed))
    xs = split_vector([x for x, _ in pairs], rng, field_cfg)
    ys = split_vector([y for _, y in pairs], rng, field_cfg)
    orc = make_oracle(oracle)

    async def server(ctx: SessionContext):
        xi, yi = xs[ctx.party], ys[ctx.party]
        if batch:
            await open_value(ctx, await orc.multiply(ctx, xi, yi))
            return
        for a, b in zip(xi, yi):
            await open_value(ctx, await orc.multiply(ctx, [a], [b]))

    async def aggregator(ctx: SessionContext):
        if batch:
            return await open_value(ctx, None)
        out: List[int] = []
        for _ in pairs:
            out.extend(await open_value(ctx, None))
        return out

    programs: Dict[str, Program] = {r: server for r in SERVERS}
    programs[AGGREGATOR] = aggregator
    if oracle_name(oracle) == BEAVER:
        programs[DEALER] = dealer_service
    run = execute(programs, field_cfg, seed=seed, transport=transport, hooks=hooks, latency=latency)
    return run.results[AGGREGATOR]
