"""Command-line entry points for every role plus the demo and self-test.

Exit codes: 0 success, 2 configuration/validation error, 3 protocol error,
4 timeout.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .errors import ConfigError, InputError, MPCError, RoundFailed, Timeout
from .field import FieldConfig, MERSENNE_61, DEFAULT_FRAC_BITS, SeededRng, derive_seed
from .protocol import SessionContext, make_oracle, oracle_name
from .runtime import party_rng, session_id_for
from .selftest import FAULTS, run_selftest
from .transport.base import AGGREGATOR, DEALER, DEFAULT_TIMEOUT, SERVERS, client_role, server_role
from .transport.tcp import Address, MeshConfig, TcpChannel, parse_address
from .wfl import (RoundSpec, aggregator_program, check_overflow, clear_average, client_program,
                  dealer_program, execute_round, server_program, _check_weight)

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_TIMEOUT = 0, 2, 3, 4

logger = logging.getLogger("wflmpc")


@dataclass
class CliConfig:
    peers: Dict[str, Address]
    field: FieldConfig
    oracle: str = "zeroSum"
    clients: Union[int, List[str]] = 1
    timeout: float = DEFAULT_TIMEOUT
    seed: Optional[int] = None
    round_no: int = 0
    listen: Optional[Address] = None
    session_id: Optional[bytes] = None
    extra: dict = field(default_factory=dict)

    @property
    def session(self) -> bytes:
        return self.session_id or session_id_for(self.seed, self.round_no)


def load_config(path: str) -> CliConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        peers = {role: parse_address(addr) for role, addr in raw.get("peers", {}).items()}
        missing = [s for s in SERVERS if s not in peers]
        if missing:
            raise ConfigError(f"peers missing {missing}")
        cfg_field = FieldConfig(int(raw.get("prime", MERSENNE_61)), int(raw.get("frac_bits", DEFAULT_FRAC_BITS)))
        clients = raw.get("clients", 1)
        if isinstance(clients, int):
            if clients < 1:
                raise ConfigError("clients must be >= 1")
        elif not (isinstance(clients, list) and clients and all(isinstance(c, str) for c in clients)):
            raise ConfigError("clients must be a positive count or a list of client ids")
        session = raw.get("session")
        return CliConfig(
            peers=peers,
            field=cfg_field,
            oracle=oracle_name(raw.get("oracle", "zero-sum")),
            clients=clients,
            timeout=float(raw.get("timeout_ms", DEFAULT_TIMEOUT * 1000)) / 1000.0,
            seed=raw.get("seed"),
            round_no=int(raw.get("round", 0)),
            listen=parse_address(raw["listen"]) if raw.get("listen") else None,
            session_id=bytes.fromhex(session) if session else None,
            extra={k: raw[k] for k in ("role",) if k in raw},
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {e}") from e


async def _run_role(cfg: CliConfig, role: str, program, listen: Optional[Address] = None):
    ch = TcpChannel(MeshConfig(role, cfg.peers, listen, cfg.timeout, cfg.session))
    await ch.start()
    ctx = SessionContext(ch, role, cfg.field, cfg.session, party_rng(cfg.seed, cfg.round_no, role),
                         cfg.round_no, cfg.timeout)
    try:
        return await program(ctx)
    finally:
        await ch.close()


def _exit_code(err: BaseException) -> int:
    cause = err.cause if isinstance(err, RoundFailed) else err
    if isinstance(cause, InputError):
        return EXIT_CONFIG
    if isinstance(cause, Timeout):
        return EXIT_TIMEOUT
    return EXIT_PROTOCOL


def read_features(path: str) -> List[Fraction]:
    try:
        lines = Path(path).read_text().split()
    except OSError as e:
        raise ConfigError(f"cannot read feature file {path}: {e}") from e
    try:
        return [Fraction(tok) for tok in lines]
    except ValueError as e:
        raise ConfigError(f"feature file {path}: {e}") from e


def cmd_server(args) -> int:
    cfg = load_config(args.config)
    role = server_role(args.id)
    listen = cfg.listen or cfg.peers[role]
    asyncio.run(_run_role(cfg, role, server_program(cfg.clients, make_oracle(cfg.oracle)), listen))
    return EXIT_OK


def cmd_aggregator(args) -> int:
    cfg = load_config(args.config)
    result = asyncio.run(_run_role(cfg, AGGREGATOR, aggregator_program(cfg.oracle)))
    print(result.to_json(), flush=True)
    return EXIT_OK


def cmd_client(args) -> int:
    cfg = load_config(args.config)
    weight = _check_weight(args.weight, cfg.field)
    features = read_features(args.features)
    if not features:
        raise ConfigError("feature file is empty")
    encoded = [cfg.field.encode(v) for v in features]
    check_overflow([weight], [encoded], cfg.field)
    cid = args.id or Path(args.features).stem
    if isinstance(cfg.clients, list) and cid not in cfg.clients:
        raise ConfigError(f"client id {cid!r} not declared in config {cfg.clients}")
    asyncio.run(_run_role(cfg, client_role(cid), client_program(cid, weight, encoded)))
    return EXIT_OK


def cmd_dealer(args) -> int:
    cfg = load_config(args.config)
    served = asyncio.run(_run_role(cfg, DEALER, dealer_program()))
    logger.info("dealer served %d triple batches", served)
    return EXIT_OK


def demo(clients: int, dim: int, seed: int, oracle: str, weight_range=(600, 600),
         transport: str = "sim", frac_bits: int = DEFAULT_FRAC_BITS, dyadic: bool = False) -> dict:
    """Synthetic round: MPC result next to the plaintext weighted average.

    With ``dyadic`` the features are snapped to the 2^-f grid, so encoding is
    exact and any deviation comes from the protocol itself.
    """
    if clients < 1 or dim < 1:
        raise ConfigError("clients and dim must be >= 1")
    lo, hi = weight_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad weight range {weight_range}")
    rng = SeededRng(derive_seed("demo-data", seed))
    weights = [rng.randint(lo, hi) for _ in range(clients)]
    feats = [[Fraction(rng.uniform(-1.0, 1.0)) for _ in range(dim)] for _ in range(clients)]
    if dyadic:
        feats = [[Fraction(round(v * 2**frac_bits), 2**frac_bits) for v in vec] for vec in feats]
    spec = RoundSpec(weights, feats, FieldConfig(MERSENNE_61, frac_bits), oracle)
    t0 = time.perf_counter()
    result, run = execute_round(spec, seed, transport=transport)
    wall = time.perf_counter() - t0
    clear = clear_average(list(zip(weights, feats)))
    dev = max(abs(a - b) for a, b in zip(result.average, clear))
    return {
        "clients": clients, "dim": dim, "seed": seed, "oracle": result.oracle,
        "mpc_average": result.to_dict()["average"],
        "clear_average": [f"{float(c):.12f}" for c in clear],
        "max_deviation": float(dev),
        "max_deviation_exact": str(dev),
        "deviation_bound": 2.0 ** -frac_bits,
        "within_bound": dev <= Fraction(1, 2 ** frac_bits),
        "frames": run.frames,
        "wall_time_s": round(wall, 4),
    }


def cmd_demo(args) -> int:
    out = demo(args.clients, args.dim, args.seed, args.oracle, tuple(args.weight_range), args.transport,
               dyadic=args.dyadic)
    print(json.dumps(out, indent=2))
    return EXIT_OK if out["within_bound"] else EXIT_PROTOCOL


def cmd_selftest(args) -> int:
    results = run_selftest(args.level, args.inject_fault)
    for r in results:
        print(json.dumps(r), flush=True)
    return EXIT_OK if all(r["pass"] for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wflmpc", description="Three-server weighted federated averaging over additive shares.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("server", help="run MPC server 1, 2 or 3")
    sp.add_argument("--config", required=True)
    sp.add_argument("--id", type=int, choices=(1, 2, 3), required=True)
    sp.set_defaults(func=cmd_server)

    sp = sub.add_parser("aggregator", help="collect the opened totals and print the round result")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_aggregator)

    sp = sub.add_parser("client", help="share one client's weight and features")
    sp.add_argument("--config", required=True)
    sp.add_argument("--weight", type=int, required=True)
    sp.add_argument("--features", required=True, help="one decimal value per line")
    sp.add_argument("--id", help="client id (default: feature file stem)")
    sp.set_defaults(func=cmd_client)

    sp = sub.add_parser("dealer", help="serve Beaver triples")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_dealer)

    sp = sub.add_parser("demo", help="synthetic in-process round with plaintext comparison")
    sp.add_argument("--clients", type=int, default=100)
    sp.add_argument("--dim", type=int, default=10)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--oracle", choices=("zero-sum", "beaver"), default="zero-sum")
    sp.add_argument("--weight-range", type=int, nargs=2, default=(600, 600), metavar=("LO", "HI"))
    sp.add_argument("--transport", choices=("sim", "tcp"), default="sim")
    sp.add_argument("--dyadic", action="store_true", help="snap features to the fixed-point grid")
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("selftest", help="run the verification battery")
    sp.add_argument("--level", choices=("quick", "full"), default="quick")
    sp.add_argument("--inject-fault", choices=FAULTS, default=None,
                    help="negative control: deliberately break the protocol")
    sp.set_defaults(func=cmd_selftest)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except MPCError as e:
        print(f"wflmpc: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
