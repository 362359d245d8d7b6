"""Built-in verification battery behind ``wflmpc selftest``."""

from __future__ import annotations

import random
import time
from typing import Callable, Dict, List, Optional

from .errors import DecodeError
from .field import FieldConfig, SeededRng
from .protocol import BEAVER, ZERO_SUM, Hooks
from .runtime import multiply_pairs
from .sharing import SecretShares, reconstruct, split
from .transport.frame import Frame, MsgType, decode_frame, encode_frame

FAULTS = ("reshare-off", "constant-split")


def _constant_split(x, rng):
    f = x.field
    return SecretShares((f(1), f(2), x - 3))


def _check(name: str, fn: Callable[[], dict]) -> dict:
    t0 = time.perf_counter()
    try:
        detail = fn()
        passed = bool(detail.pop("pass"))
    except Exception as e:  # noqa: BLE001 - a crash is a failed check
        detail, passed = {"error": repr(e)}, False
    return {"test": name, "pass": passed, "seconds": round(time.perf_counter() - t0, 3), **detail}


def exhaustive_multiplication(oracle: str, hooks: Optional[Hooks] = None, p: int = 31) -> dict:
    pairs = [(x, y) for x in range(p) for y in range(p)]
    got = multiply_pairs(pairs, FieldConfig(p, 0), oracle, seed=7, hooks=hooks)
    ok = sum(g == x * y % p for g, (x, y) in zip(got, pairs))
    return {"pass": ok == len(pairs), "cases": f"{ok}/{len(pairs)}"}


def frame_roundtrip(trials: int = 1000, seed: int = 0) -> dict:
    rng = random.Random(seed)
    types = [int(t) for t in MsgType]
    bad = 0
    for _ in range(trials):
        f = Frame(rng.randbytes(16), rng.getrandbits(32), rng.getrandbits(16), rng.choice(types),
                  rng.randbytes(rng.randrange(64)))
        bad += decode_frame(encode_frame(f)) != f
    for _ in range(trials):
        try:
            decode_frame(rng.randbytes(rng.randrange(60)))
        except DecodeError:
            pass
    return {"pass": bad == 0, "trials": trials}


def sharing_roundtrip(p: int = 31) -> dict:
    f = FieldConfig(p, 0)
    rng = SeededRng(3)
    bad = sum(reconstruct(split(f(x), rng)) != x for x in range(p))
    return {"pass": bad == 0, "cases": p}


def fixed_point_roundtrip(trials: int = 1000) -> dict:
    f = FieldConfig()
    rng = random.Random(5)
    worst = 0.0
    for _ in range(trials):
        v = rng.uniform(-1e6, 1e6)
        worst = max(worst, abs(float(f.decode(f.encode(v))) - v))
    return {"pass": worst <= 2.0 ** (-f.frac_bits - 1), "max_error": worst}


def run_selftest(level: str = "quick", inject: Optional[str] = None) -> List[Dict]:
    from . import privacy

    hooks = Hooks(zero_reshare=inject == "reshare-off")
    splitter = _constant_split if inject == "constant-split" else None
    checks = [
        ("mul_exhaustive_p31_zero_sum", lambda: exhaustive_multiplication(ZERO_SUM, hooks)),
        ("mul_exhaustive_p31_beaver", lambda: exhaustive_multiplication(BEAVER, hooks)),
        ("frame_roundtrip", frame_roundtrip),
        ("sharing_roundtrip_p31", sharing_roundtrip),
        ("fixed_point_roundtrip", fixed_point_roundtrip),
    ]
    if level == "full":
        def report(r):
            return {"pass": r.passed, **{k: v for k, v in r.to_dict().items() if k not in ("pass", "parts")}}

        def recon():
            out = {}
            for party in ("server1", "server2", "server3"):
                views, targets, _ = privacy.reconstruction_runs(party=party)
                out[party] = privacy.assert_non_reconstructible(views, targets, FieldConfig(5, 0)).passed
            return {"pass": all(out.values()), **out}

        checks += [
            ("share_uniformity_p31", lambda: report(
                privacy.test_share_uniformity(17, 100_000, 31, splitter=splitter))),
            ("share_pair_uniformity_p5", lambda: report(
                privacy.test_share_uniformity(3, 100_000, 5, pairs=True, splitter=splitter))),
            ("reshare_pad_p5", lambda: report(privacy.test_reshare_pad(5, 100_000, hooks=hooks))),
            ("reshare_pad_two_rounds_p3", lambda: report(
                privacy.test_reshare_pad(3, 100_000, rounds=2, hooks=hooks))),
            ("non_reconstructible_p5", recon),
        ]
    return [_check(name, fn) for name, fn in checks]
