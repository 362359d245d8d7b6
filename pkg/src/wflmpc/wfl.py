"""Weighted federated averaging computed over shares.

Clients split their sample count ``n_k`` and fixed-point feature vector
``w_k`` across the three servers.  The servers add the count shares locally,
multiply each client's count into its features with the selected oracle and
accumulate, then open exactly two values to the aggregator, which divides in
the clear.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

from .errors import (ClientSetMismatch, DecodeError, EmptyVector, LengthMismatch, MPCError,
                     NonPositiveWeight, OutOfRange, ProtocolError, RoundFailed, ZeroTotalWeight)
from .field import DEFAULT_FIELD, FieldConfig, SeededRng
from .protocol import (BEAVER, Hooks, MultiplicationOracle, SessionContext, dealer_service,
                       make_oracle, open_value, oracle_name, scalar_vector_mul)
from .runtime import Execution, Program, execute
from .sharing import PARTIES, SecretShares, ShareVector, split, split_vector
from .transport.base import AGGREGATOR, DEALER, DEFAULT_TIMEOUT, SERVERS, client_role, server_role
from .transport.frame import MsgType
from .transport.sim import LatencyModel

CONTRIB_STEP = 0
_CONTRIB_HEAD = struct.Struct("<Q I")


@dataclass(frozen=True)
class ServerShare:
    """What one server receives from one client."""

    client_id: str
    weight: int
    features: Tuple[int, ...]


@dataclass(frozen=True)
class ClientContribution:
    client_id: str
    weight_shares: SecretShares
    feature_shares: ShareVector

    def for_server(self, i: int) -> ServerShare:
        return ServerShare(self.client_id, self.weight_shares[i].value, self.feature_shares[i])


def encode_contrib(share: ServerShare) -> bytes:
    cid = share.client_id.encode()
    return (struct.pack("<H", len(cid)) + cid + _CONTRIB_HEAD.pack(share.weight, len(share.features))
            + struct.pack(f"<{len(share.features)}Q", *share.features))


def decode_contrib(payload: bytes, field_cfg: FieldConfig) -> ServerShare:
    try:
        (n,) = struct.unpack_from("<H", payload)
        cid = payload[2:2 + n].decode()
        weight, d = _CONTRIB_HEAD.unpack_from(payload, 2 + n)
        off = 2 + n + _CONTRIB_HEAD.size
        if len(payload) != off + 8 * d:
            raise DecodeError(f"CONTRIB declares {d} features, payload has {len(payload) - off} bytes")
        feats = struct.unpack_from(f"<{d}Q", payload, off)
    except (struct.error, UnicodeDecodeError) as e:
        raise DecodeError(f"malformed CONTRIB: {e}") from e
    if weight >= field_cfg.p or any(v >= field_cfg.p for v in feats):
        raise DecodeError("CONTRIB element not reduced")
    return ServerShare(cid, weight, tuple(feats))


def _check_weight(n_k, field_cfg: FieldConfig, bounded: bool = True) -> int:
    if isinstance(n_k, bool) or int(n_k) != n_k:
        raise NonPositiveWeight(f"weight must be an integer sample count, got {n_k!r}")
    n_k = int(n_k)
    if n_k < 1:
        raise NonPositiveWeight(f"weight must be >= 1, got {n_k}")
    if bounded and 2 * n_k >= field_cfg.p:
        raise OutOfRange(f"weight {n_k} does not fit below p/2")
    return n_k


def share_contribution(client_id: str, weight: int, features: Sequence[int], field_cfg: FieldConfig,
                       rng: SeededRng) -> ClientContribution:
    """Split an already-encoded contribution (features as residues)."""
    if len(features) == 0:
        raise EmptyVector("feature vector is empty")
    return ClientContribution(client_id, split(field_cfg(weight), rng), split_vector(features, rng, field_cfg))


def client_contribute(n_k: int, w_k: Sequence, cfg: FieldConfig, rng: SeededRng,
                      client_id: str = "client") -> ClientContribution:
    n_k = _check_weight(n_k, cfg)
    if len(w_k) == 0:
        raise EmptyVector("feature vector is empty")
    return share_contribution(client_id, n_k, [cfg.encode(v) for v in w_k], cfg, rng)


def check_overflow(weights: Sequence[int], encoded: Sequence[Sequence[int]], cfg: FieldConfig) -> None:
    """Reject inputs whose weighted sum could wrap around p/2."""
    peak = max((abs(cfg.signed(v)) for vec in encoded for v in vec), default=0)
    total = sum(weights)
    if 2 * total >= cfg.p or 2 * total * peak >= cfg.p:
        raise OutOfRange(f"sum(n_k) * max|enc(w)| = {total * peak} would wrap modulo p={cfg.p}")


def local_weight_total(field_cfg: FieldConfig, contribs: Sequence[ServerShare]) -> int:
    return sum(c.weight for c in contribs) % field_cfg.p


def _client_ids(contribs: Sequence[ServerShare]) -> List[str]:
    return sorted(c.client_id for c in contribs)


def aggregate_weights(per_server: Sequence[Sequence[ServerShare]], field_cfg: FieldConfig = DEFAULT_FIELD) -> SecretShares:
    """Shares of ``sum(n_k)`` from the three servers' contribution lists."""
    if len(per_server) != 3:
        raise ClientSetMismatch(f"need contribution lists for 3 servers, got {len(per_server)}")
    ids = [_client_ids(lst) for lst in per_server]
    if not ids[0]:
        raise ClientSetMismatch("no contributions registered")
    if ids[0] != ids[1] or ids[0] != ids[2]:
        raise ClientSetMismatch(f"servers disagree on the client set: {ids}")
    return SecretShares(tuple(field_cfg(local_weight_total(field_cfg, lst)) for lst in per_server))


def order_contributions(contribs: Sequence[ServerShare]) -> List[ServerShare]:
    ordered = sorted(contribs, key=lambda c: c.client_id)
    if len({c.client_id for c in ordered}) != len(ordered):
        raise ClientSetMismatch("duplicate client id in round")
    if ordered:
        d = len(ordered[0].features)
        for c in ordered:
            if len(c.features) != d:
                raise LengthMismatch(f"client {c.client_id} sent {len(c.features)} features, round uses {d}")
    return ordered


async def aggregate_weighted(ctx: SessionContext, contribs: Sequence[ServerShare],
                             oracle: MultiplicationOracle) -> List[int]:
    """This server's share of ``sum_k n_k * w_k``; one multiplication per client."""
    p = ctx.field.p
    acc = [0] * len(contribs[0].features)
    for c in contribs:
        prod = await scalar_vector_mul(ctx, c.weight, c.features, oracle)
        acc = [(a + z) % p for a, z in zip(acc, prod)]
    return acc


def _decimal(q: Fraction) -> str:
    with localcontext() as dc:
        dc.prec = 40
        return format(Decimal(q.numerator) / Decimal(q.denominator), "f")


@dataclass(frozen=True)
class RoundResult:
    n: int
    weighted_sum: Tuple[Fraction, ...]
    average: Tuple[Fraction, ...]
    round: int = 0
    oracle: str = "zeroSum"

    def to_dict(self) -> dict:
        return {"n": self.n, "average": [_decimal(a) for a in self.average],
                "round": self.round, "oracle": self.oracle}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


async def finalize(ctx: SessionContext, n_share: Optional[int], ws_share: Optional[Sequence[int]],
                   oracle: str = "zeroSum") -> Optional[RoundResult]:
    """Open the total weight and weighted sum to the aggregator and divide."""
    if ctx.role != AGGREGATOR:
        await open_value(ctx, [n_share])
        await open_value(ctx, ws_share)
        return None
    (n,) = await open_value(ctx, None)
    ws = await open_value(ctx, None)
    if n == 0:
        raise ZeroTotalWeight("total weight opened to 0 mod p")
    weighted = tuple(ctx.field.decode(v) for v in ws)
    return RoundResult(n, weighted, tuple(w / n for w in weighted), ctx.round, oracle_name(oracle))


@contextmanager
def stage(name: str, role: str):
    try:
        yield
    except RoundFailed:
        raise
    except MPCError as e:
        raise RoundFailed(name, role, e) from e


def client_program(client_id: str, weight: int, features: Sequence[int]) -> Program:
    """Client role: split inside the client (own RNG) and send one CONTRIB per server."""

    async def run(ctx: SessionContext) -> None:
        with stage("contribute", ctx.role):
            contrib = share_contribution(client_id, weight, features, ctx.field, ctx.rng)
        with stage("dispatch", ctx.role):
            for i in PARTIES:
                await ctx.send(server_role(i), MsgType.CONTRIB, CONTRIB_STEP,
                               encode_contrib(contrib.for_server(i)))

    return run


async def collect_contributions(ctx: SessionContext, clients: Union[int, Sequence[str]]) -> List[ServerShare]:
    """Buffer CONTRIB frames until the declared client set is complete."""
    got: List[ServerShare] = []
    if isinstance(clients, int):
        seen = set()
        while len(got) < clients:
            src, f = await ctx.recv(None, MsgType.CONTRIB, CONTRIB_STEP)
            share = decode_contrib(f.payload, ctx.field)
            if src != client_role(share.client_id):
                raise ProtocolError(f"{src} sent a contribution labelled {share.client_id!r}")
            if share.client_id in seen:
                raise ClientSetMismatch(f"duplicate contribution from {share.client_id}")
            seen.add(share.client_id)
            got.append(share)
    else:
        for cid in clients:
            _, f = await ctx.recv(client_role(cid), MsgType.CONTRIB, CONTRIB_STEP)
            share = decode_contrib(f.payload, ctx.field)
            if share.client_id != cid:
                raise ClientSetMismatch(f"{client_role(cid)} sent a contribution labelled {share.client_id!r}")
            got.append(share)
    return order_contributions(got)


def server_program(clients: Union[int, Sequence[str]], oracle: MultiplicationOracle) -> Program:
    async def run(ctx: SessionContext) -> List[ServerShare]:
        with stage("collect", ctx.role):
            contribs = await collect_contributions(ctx, clients)
        with stage("aggregate_weights", ctx.role):
            n_share = local_weight_total(ctx.field, contribs)
        with stage("aggregate_weighted", ctx.role):
            ws_share = await aggregate_weighted(ctx, contribs, oracle)
        with stage("finalize", ctx.role):
            await finalize(ctx, n_share, ws_share)
        return contribs

    return run


def aggregator_program(oracle: str) -> Program:
    async def run(ctx: SessionContext) -> RoundResult:
        with stage("finalize", ctx.role):
            return await finalize(ctx, None, None, oracle)

    return run


def dealer_program() -> Program:
    async def run(ctx: SessionContext) -> int:
        with stage("dealer", ctx.role):
            return await dealer_service(ctx)

    return run


@dataclass
class RoundSpec:
    """Inputs of one round.

    ``features`` are signed rationals unless ``encoded`` is set, in which
    case they are taken as field residues verbatim.
    """

    weights: Sequence[int]
    features: Sequence[Sequence]
    field: FieldConfig = DEFAULT_FIELD
    oracle: str = "zeroSum"
    round_no: int = 0
    encoded: bool = False
    guard: bool = True
    client_ids: Optional[Sequence[str]] = None

    def ids(self) -> List[str]:
        if self.client_ids is not None:
            return list(self.client_ids)
        return [f"c{k:04d}" for k in range(len(self.weights))]

    def prepare(self) -> List[Tuple[str, int, List[int]]]:
        """Validate and encode everything before any traffic is generated."""
        if len(self.weights) == 0:
            raise EmptyVector("a round needs at least one client")
        if len(self.weights) != len(self.features):
            raise LengthMismatch("weights and features lists differ in length")
        ws = [_check_weight(n, self.field, self.guard) for n in self.weights]
        if self.encoded:
            enc = [[int(v) % self.field.p for v in vec] for vec in self.features]
        else:
            enc = [[self.field.encode(v) for v in vec] for vec in self.features]
        dims = {len(v) for v in enc}
        if 0 in dims:
            raise EmptyVector("feature vector is empty")
        if len(dims) != 1:
            raise LengthMismatch(f"feature dimensions differ across clients: {sorted(dims)}")
        if self.guard:
            check_overflow(ws, enc, self.field)
        return list(zip(self.ids(), ws, enc))


def round_programs(spec: RoundSpec) -> dict:
    prepared = spec.prepare()
    ids = [cid for cid, _, _ in prepared]
    oracle = make_oracle(spec.oracle)
    programs = {r: server_program(ids, oracle) for r in SERVERS}
    programs[AGGREGATOR] = aggregator_program(spec.oracle)
    if oracle.name == BEAVER:
        programs[DEALER] = dealer_program()
    for cid, n, enc in prepared:
        programs[client_role(cid)] = client_program(cid, n, enc)
    return programs


def execute_round(spec: RoundSpec, seed: Optional[int] = 0, *, transport: str = "sim",
                  hooks: Optional[Hooks] = None, latency: Optional[LatencyModel] = None,
                  taps=(), timeout: float = DEFAULT_TIMEOUT,
                  record_randomness: bool = False) -> Tuple[RoundResult, Execution]:
    programs = round_programs(spec)
    run = execute(programs, spec.field, seed=seed, round_no=spec.round_no, transport=transport,
                  timeout=timeout, hooks=hooks, taps=taps, latency=latency,
                  record_randomness=record_randomness)
    return run.results[AGGREGATOR], run


def run_round(clients: Sequence[Tuple[int, Sequence]], cfg: FieldConfig = DEFAULT_FIELD,
              oracle: str = "zeroSum", seed: Optional[int] = 0, *, transport: str = "sim",
              round_no: int = 0, **kwargs) -> RoundResult:
    """One full round: contribute, aggregate, multiply, open, divide."""
    spec = RoundSpec([n for n, _ in clients], [w for _, w in clients], cfg, oracle, round_no)
    result, _ = execute_round(spec, seed, transport=transport, **kwargs)
    return result


def clear_average(clients: Sequence[Tuple[int, Sequence]]) -> Tuple[Fraction, ...]:
    """Reference weighted average computed directly on plaintext rationals."""
    total = sum(n for n, _ in clients)
    d = len(clients[0][1])
    return tuple(sum(Fraction(n) * Fraction(w[j]) for n, w in clients) / total for j in range(d))
