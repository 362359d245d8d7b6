"""Statistical checks of what a single honest-but-curious server can see.

Views are captured from the simulator taps.  Hiding is checked with
chi-square goodness-of-fit at tiny primes (every share a server sees should be
uniform), and non-reconstructibility by brute force over small signed sums
of view elements across many independent runs.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import InsufficientTrials, OutOfRange
from .field import FieldConfig, SeededRng, derive_seed, unpack_elements
from .protocol import Hooks, SessionContext, decode_triple, make_oracle
from .runtime import execute
from .sharing import split
from .transport.base import SERVERS, TapEntry
from .transport.frame import Frame, MsgType
from .wfl import RoundResult, RoundSpec, ServerShare, decode_contrib, execute_round

ALPHA = 0.001


def frame_values(frame: Frame, field_cfg: FieldConfig) -> List[int]:
    """Every field element carried by a frame's payload."""
    t, data = frame.msg_type, frame.payload
    if t in (MsgType.RESHARE_R,):
        return unpack_elements(data, field_cfg)[0]
    if t in (MsgType.MUL_FORWARD, MsgType.BEAVER_OPEN):
        a, off = unpack_elements(data, field_cfg)
        return a + unpack_elements(data, field_cfg, off)[0]
    if t == MsgType.OPEN_SHARE:
        return unpack_elements(data, field_cfg, 1)[0]
    if t == MsgType.BEAVER_TRIPLE:
        _, a, b, c = decode_triple(data, field_cfg)
        return a + b + c
    if t == MsgType.CONTRIB:
        share = decode_contrib(data, field_cfg)
        return [share.weight, *share.features]
    return []


@dataclass
class PartyView:
    """Everything one server held, sent, received and sampled in a session."""

    party: str
    inputs: List[int] = field(default_factory=list)
    frames: List[TapEntry] = field(default_factory=list)
    randomness: List[int] = field(default_factory=list)

    def elements(self, field_cfg: FieldConfig) -> List[int]:
        out = list(self.inputs)
        for e in self.frames:
            out.extend(frame_values(e.frame, field_cfg))
        out.extend(self.randomness)
        return out

    def augmented(self, extra: Sequence[int]) -> "PartyView":
        return PartyView(self.party, self.inputs + list(extra), list(self.frames), list(self.randomness))


def capture_views(spec: RoundSpec, seed: int = 0, *, hooks: Optional[Hooks] = None,
                  latency=None) -> Tuple[RoundResult, Tuple[PartyView, PartyView, PartyView]]:
    """Run a round on the simulator with taps on all three servers."""
    result, run = execute_round(spec, seed, hooks=hooks, latency=latency, taps=SERVERS,
                                record_randomness=True)
    views = []
    for role in SERVERS:
        held: List[ServerShare] = run.results[role]
        inputs = [v for c in held for v in (c.weight, *c.features)]
        views.append(PartyView(role, inputs, list(run.taps[role].entries), list(run.randomness.get(role, []))))
    return result, tuple(views)


@dataclass
class UniformityReport:
    label: str
    cell_counts: List[int]
    statistic: float
    degrees_of_freedom: int
    critical_value: float
    passed: bool
    parts: List["UniformityReport"] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"label": self.label, "statistic": round(self.statistic, 4),
                "df": self.degrees_of_freedom, "critical": round(self.critical_value, 4),
                "pass": self.passed, "parts": [p.to_dict() for p in self.parts]}


def chi_square_report(counts: Sequence[int], label: str, alpha: float = ALPHA) -> UniformityReport:
    counts = list(counts)
    n, k = sum(counts), len(counts)
    expected = n / k
    stat = sum((c - expected) ** 2 for c in counts) / expected
    df = k - 1
    crit = float(stats.chi2.ppf(1 - alpha, df))
    return UniformityReport(label, counts, stat, df, crit, stat < crit)


def combine(label: str, parts: Sequence[UniformityReport]) -> UniformityReport:
    worst = max(parts, key=lambda r: r.statistic / r.critical_value)
    return UniformityReport(label, worst.cell_counts, worst.statistic, worst.degrees_of_freedom,
                            worst.critical_value, all(r.passed for r in parts), list(parts))


Splitter = Callable[[object, SeededRng], object]


def test_share_uniformity(secret: int, trials: int, p: int, *, seed: int = 0,
                          splitter: Optional[Splitter] = None, pairs: bool = False,
                          alpha: float = ALPHA) -> UniformityReport:
    """Chi-square of each share component (or each component pair) of a fixed secret."""
    cells = p * p if pairs else p
    if trials < 100 * cells:
        raise InsufficientTrials(f"need >= {100 * cells} trials for {cells} cells, got {trials}")
    field_cfg = FieldConfig(p, 0)
    splitter = splitter or split
    rng = SeededRng(derive_seed("share-uniformity", seed, p, secret, pairs))
    groups = list(itertools.combinations(range(3), 2)) if pairs else [(0,), (1,), (2,)]
    counts = [Counter() for _ in groups]
    for _ in range(trials):
        comps = [int(c) for c in splitter(field_cfg(secret), rng).components]
        for g, idx in enumerate(groups):
            key = comps[idx[0]] * p + comps[idx[1]] if pairs else comps[idx[0]]
            counts[g][key] += 1
    parts = [chi_square_report([counts[g][c] for c in range(cells)],
                               "share" + "".join(str(i + 1) for i in idx), alpha)
             for g, idx in enumerate(groups)]
    return combine(f"share uniformity p={p} secret={secret}" + (" (pairs)" if pairs else ""), parts)


def forwarded_pads(p: int, trials: int, *, seed: int = 0, hooks: Optional[Hooks] = None,
                   rounds: int = 1, batch: int = 20000, x: int = 2, y: int = 3,
                   subtract_known_pad: bool = False) -> List[Tuple[int, ...]]:
    """Samples of what server 2 receives from server 1 in zero-sum multiplications.

    Inputs are fixed shares of ``x`` and ``y``; every coordinate of a batched
    multiplication is an independent trial.  Each sample concatenates the
    forwarded ``(x1', y1')`` over ``rounds`` consecutive multiplications.
    With ``subtract_known_pad`` the pad server 2 itself received from
    server 1 is removed first, leaving ``x1 - r3``.
    """
    field_cfg = FieldConfig(p, 0)
    rng = SeededRng(derive_seed("pad-inputs", seed, p))
    xs, ys = split(field_cfg(x), rng), split(field_cfg(y), rng)
    oracle = make_oracle("zeroSum")
    samples: List[Tuple[int, ...]] = []
    session = 0
    while len(samples) < trials:
        n = min(batch, trials - len(samples))

        async def server(ctx: SessionContext, n=n):
            xi, yi = xs[ctx.party].value, ys[ctx.party].value
            for _ in range(rounds):
                await oracle.multiply(ctx, [xi] * n, [yi] * n)

        run = execute({r: server for r in SERVERS}, field_cfg, seed=derive_seed("pad", seed, session),
                      hooks=hooks, taps=["server2"])
        session += 1
        per_round = []
        pads = []
        for e in run.taps["server2"].entries:
            if e.direction != "in" or e.peer != "server1":
                continue
            vals = frame_values(e.frame, field_cfg)
            if e.frame.msg_type == MsgType.MUL_FORWARD:
                per_round.append((vals[:n], vals[n:]))
            elif e.frame.msg_type == MsgType.RESHARE_R:
                pads.append((vals[:n], vals[n:]))
        if subtract_known_pad:
            per_round = [([(a - r) % p for a, r in zip(fx, px)], [(b - r) % p for b, r in zip(fy, py)])
                         for (fx, fy), (px, py) in zip(per_round, pads)]
        for j in range(n):
            samples.append(tuple(v for fx, fy in per_round for v in (fx[j], fy[j])))
    return samples


def test_reshare_pad(p: int, trials: int, *, seed: int = 0, hooks: Optional[Hooks] = None,
                     rounds: int = 1, alpha: float = ALPHA, subtract_known_pad: bool = False) -> UniformityReport:
    """Joint chi-square of forwarded reshared pairs, conditioned on fixed inputs."""
    if p > 7:
        raise OutOfRange(f"joint test needs p <= 7, got {p}")
    cells = p ** (2 * rounds)
    if trials < 100 * cells:
        raise InsufficientTrials(f"need >= {100 * cells} trials for {cells} cells, got {trials}")
    counts = Counter()
    for s in forwarded_pads(p, trials, seed=seed, hooks=hooks, rounds=rounds,
                            subtract_known_pad=subtract_known_pad):
        key = 0
        for v in s:
            key = key * p + v
        counts[key] += 1
    label = f"reshare pad p={p} rounds={rounds}" + (" (pad-adjusted)" if subtract_known_pad else "")
    report = chi_square_report([counts[c] for c in range(cells)], label, alpha)
    return report


@dataclass
class ReconstructionReport:
    passed: bool
    runs: int
    patterns: int
    hit_rate: float
    chance_rate: float
    sigma: float
    threshold: int
    flagged: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "runs": self.runs, "patterns": self.patterns,
                "hit_rate": self.hit_rate, "chance_rate": self.chance_rate, "sigma": self.sigma,
                "threshold": self.threshold, "flagged": self.flagged[:10]}


def assert_non_reconstructible(views: Union[PartyView, Sequence[PartyView]],
                               secrets: Sequence, field_cfg: FieldConfig, *, max_terms: int = 3,
                               family_alpha: float = 1e-3) -> ReconstructionReport:
    """Search signed sums of up to ``max_terms`` view elements for the secrets.

    ``views`` are independent runs of the same protocol shape and
    ``secrets[t]`` the ground-truth targets of run t.  A pattern that hits a
    target more often than a Bonferroni-corrected binomial bound allows is a
    reconstruction; the overall hit rate must also stay within three sigma of
    chance (1/p).
    """
    if isinstance(views, PartyView):
        views, secrets = [views], [secrets]
    p = field_cfg.p
    q = 1.0 / p
    rows = [v.elements(field_cfg) for v in views]
    m = len(rows[0]) if rows else 0
    if any(len(r) != m for r in rows):
        raise ValueError("views differ in shape; runs must use identical protocol parameters")
    targets = np.array([list(s) for s in secrets], dtype=np.int64) % p
    runs = len(rows)
    if m == 0 or targets.size == 0:
        return ReconstructionReport(True, runs, 0, 0.0, q, 0.0, 0)

    E = np.array(rows, dtype=np.int64) % p
    keep = [j for j in range(m) if not any(np.array_equal(E[:, i], E[:, j]) for i in range(j))]
    E = E[:, keep]
    m = E.shape[1]

    hits_all = []
    names = []
    for k in range(1, max_terms + 1):
        combos = np.array(list(itertools.combinations(range(m), k)), dtype=np.int64)
        if combos.size == 0:
            continue
        signs = np.array(list(itertools.product((1, -1), repeat=k)), dtype=np.int64)
        vals = np.einsum("tcs,gs->tcg", E[:, combos], signs) % p  # runs x combos x signs
        vals = vals.reshape(runs, -1)
        hits = (vals[:, :, None] == targets[:, None, :]).sum(axis=0)  # patterns x targets
        hits_all.append(hits)
        names.extend((tuple(keep[i] for i in c), tuple(s)) for c in combos for s in signs)
    hits = np.concatenate(hits_all, axis=0)
    n_tests = hits.size
    threshold = runs + 1
    for h in range(1, runs + 1):
        if stats.binom.sf(h - 1, runs, q) * n_tests < family_alpha:
            threshold = h
            break
    flagged = []
    for pi, ti in zip(*np.nonzero(hits >= threshold)):
        idx, sg = names[pi]
        terms = " ".join(f"{'+' if s > 0 else '-'}e{i}" for i, s in zip(idx, sg))
        flagged.append(f"{terms} -> target {ti} in {hits[pi, ti]}/{runs} runs")
    total = hits.sum()
    n_obs = n_tests * runs
    rate = float(total) / n_obs
    sigma = math.sqrt(q * (1 - q) / n_obs)
    passed = not flagged and rate <= q + 3 * sigma
    return ReconstructionReport(passed, runs, int(hits.shape[0]), rate, q, sigma, threshold, flagged)


def reconstruction_runs(p: int = 5, clients: int = 2, dim: int = 1, runs: int = 40, *, seed: int = 0,
                        oracle: str = "zeroSum", party: str = "server1"):
    """Honest runs at a tiny prime; returns (views of ``party``, targets, all views)."""
    field_cfg = FieldConfig(p, 0)
    views, targets, everything = [], [], []
    for t in range(runs):
        rng = SeededRng(derive_seed("recon-inputs", seed, t))
        weights: List[int] = []
        for _ in range(clients):
            while True:
                n = rng.randint(1, p - 1)
                if (sum(weights) + n) % p:
                    break
            weights.append(n)
        feats = [[rng.below(p) for _ in range(dim)] for _ in range(clients)]
        spec = RoundSpec(weights, feats, field_cfg, oracle, encoded=True, guard=False)
        _, vs = capture_views(spec, derive_seed("recon", seed, t))
        everything.append(vs)
        views.append(vs[SERVERS.index(party)])
        targets.append(weights + [v for f in feats for v in f])
    return views, targets, everything

