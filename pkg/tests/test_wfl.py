import json
import random
from collections import Counter
from fractions import Fraction

import pytest

from wflmpc.errors import (ClientSetMismatch, DecodeError, EmptyVector, LengthMismatch, NonPositiveWeight,
                           OutOfRange, RoundFailed, ZeroTotalWeight)
from wflmpc.field import FieldConfig, SeededRng
from wflmpc.protocol import BEAVER, ZERO_SUM, dealer_service, make_oracle
from wflmpc.runtime import execute
from wflmpc.sharing import reconstruct, reconstruct_vector
from wflmpc.transport.base import DEALER, SERVERS
from wflmpc.transport.frame import MsgType, decode_frame
from wflmpc.wfl import (RoundSpec, ServerShare, aggregate_weighted, aggregate_weights, check_overflow,
                        clear_average, client_contribute, decode_contrib, encode_contrib, execute_round,
                        order_contributions, run_round)

from oracles import M61, quantize, weighted_average

F61 = FieldConfig()
F31 = FieldConfig(31, 0)
ULP = Fraction(1, 2**16)


def contributions(weights, vectors, cfg, seed=0):
    rng = SeededRng(seed)
    return [client_contribute(n, w, cfg, rng, f"c{k:03d}") for k, (n, w) in enumerate(zip(weights, vectors))]


def per_server(contribs):
    return [[c.for_server(i) for c in contribs] for i in (1, 2, 3)]


class TestClientContribute:
    def test_600_samples_ten_features(self):
        rng = SeededRng(1)
        w = [Fraction(j, 10) for j in range(-5, 5)]
        c = client_contribute(600, w, F61, rng)
        assert reconstruct(c.weight_shares).value == 600
        assert [e.value for e in reconstruct_vector(c.feature_shares)] == [quantize(v, 16) % M61 for v in w]

    def test_unit_weight_zero_feature(self):
        c = client_contribute(1, [0], F61, SeededRng(2))
        assert reconstruct(c.weight_shares).value == 1
        assert [e.value for e in reconstruct_vector(c.feature_shares)] == [0]

    @pytest.mark.parametrize("n", [0, -3, 1.5, True])
    def test_bad_weight(self, n):
        with pytest.raises(NonPositiveWeight):
            client_contribute(n, [1], F61, SeededRng(0))

    def test_empty_features(self):
        with pytest.raises(EmptyVector):
            client_contribute(3, [], F61, SeededRng(0))

    def test_contrib_codec(self):
        s = ServerShare("alice", 12, (1, 2, M61 - 1))
        assert decode_contrib(encode_contrib(s), F61) == s
        with pytest.raises(DecodeError):
            decode_contrib(encode_contrib(s)[:-1], F61)
        with pytest.raises(DecodeError):
            decode_contrib(encode_contrib(s), F31)


class TestAggregateWeights:
    def test_single_client(self):
        cs = contributions([7], [[1]], F61)
        assert reconstruct(aggregate_weights(per_server(cs), F61)).value == 7

    def test_two_clients_small_prime(self):
        cs = contributions([2, 3], [[1], [1]], FieldConfig(31, 2))
        assert reconstruct(aggregate_weights(per_server(cs), FieldConfig(31, 2))).value == 5

    def test_hundred_clients(self):
        cs = contributions([600] * 100, [[0]] * 100, F61)
        assert reconstruct(aggregate_weights(per_server(cs), F61)).value == 60000

    def test_client_set_mismatch(self):
        lists = per_server(contributions([1, 2], [[0], [0]], F61))
        lists[2] = lists[2][:1]
        with pytest.raises(ClientSetMismatch):
            aggregate_weights(lists, F61)

    def test_dimension_mismatch(self):
        with pytest.raises(LengthMismatch):
            order_contributions([ServerShare("a", 1, (1,)), ServerShare("b", 1, (1, 2))])


def weighted_on_servers(weights, vectors, cfg, oracle=ZERO_SUM, seed=0):
    """Servers run only the weighted accumulation; returns (opened vector, frame types)."""
    lists = per_server(contributions(weights, vectors, cfg, seed))
    orc = make_oracle(oracle)

    async def body(ctx):
        return await aggregate_weighted(ctx, order_contributions(lists[ctx.party - 1]), orc)

    programs = {r: body for r in SERVERS}
    if oracle == BEAVER:
        programs[DEALER] = dealer_service
    run = execute(programs, cfg, seed=seed)
    cols = [run.results[r] for r in SERVERS]
    types = Counter(decode_frame(e.data).msg_type for e in run.transcript)
    return [sum(v) % cfg.p for v in zip(*cols)], types


class TestAggregateWeighted:
    def test_unit_weight_identity(self):
        out, _ = weighted_on_servers([1], [[Fraction(3, 4), -2]], F61)
        assert out == [F61.encode(Fraction(3, 4)), F61.encode(-2)]

    @pytest.mark.parametrize("oracle", [ZERO_SUM, BEAVER])
    def test_two_integer_clients(self, oracle):
        out, _ = weighted_on_servers([2, 3], [[10], [20]], FieldConfig(M61, 0), oracle)
        assert out == [80]

    def test_hundred_random(self):
        rng = random.Random(5)
        ws = [rng.randint(1, 1000) for _ in range(100)]
        vs = [[Fraction(rng.randint(-2**20, 2**20), 2**16) for _ in range(4)] for _ in range(100)]
        out, types = weighted_on_servers(ws, vs, F61)
        expect = [sum(n * F61.encode(v[j]) for n, v in zip(ws, vs)) % M61 for j in range(4)]
        assert out == expect
        # one batched multiplication per client: a reshare and a forward per server
        assert types == {MsgType.RESHARE_R: 300, MsgType.MUL_FORWARD: 300}


class TestFinalizeAndRound:
    @pytest.mark.parametrize("oracle", [ZERO_SUM, BEAVER])
    def test_weighted_average_sixteen(self, oracle):
        res = run_round([(2, [10]), (3, [20])], F61, oracle)
        assert res.average == (16,) and res.n == 5
        assert res.weighted_sum == (80,)

    def test_single_client_gets_own_vector(self):
        w = [Fraction(5, 8), Fraction(-3, 2), 0]
        assert run_round([(9, w)]).average == tuple(w)

    def test_equal_features_any_weights(self):
        c = Fraction(-7, 4)
        res = run_round([(n, [c, c]) for n in (1, 5, 17, 300)], oracle=BEAVER)
        assert res.average == (c, c)

    @pytest.mark.parametrize("oracle", [ZERO_SUM, BEAVER])
    def test_hundred_clients_within_quantum(self, oracle):
        rng = random.Random(11)
        clients = [(600, [rng.uniform(-1, 1) for _ in range(10)]) for _ in range(100)]
        res = run_round(clients, F61, oracle, seed=3)
        ref = weighted_average([n for n, _ in clients], [w for _, w in clients])
        assert max(abs(a - b) for a, b in zip(res.average, ref)) <= ULP

    def test_random_instances_both_oracles(self):
        rng = random.Random(21)
        for t in range(12):
            k, d = rng.randint(1, 30), rng.randint(1, 32)
            clients = [(rng.randint(1, 5000), [rng.uniform(-100, 100) for _ in range(d)]) for _ in range(k)]
            ref = weighted_average([n for n, _ in clients], [w for _, w in clients])
            for oracle in (ZERO_SUM, BEAVER):
                res = run_round(clients, F61, oracle, seed=t)
                assert max(abs(a - b) for a, b in zip(res.average, ref)) <= ULP

    def test_clear_average_matches_oracle(self):
        clients = [(2, [1, Fraction(1, 3)]), (5, [-4, 2])]
        assert list(clear_average(clients)) == weighted_average([2, 5], [[1, Fraction(1, 3)], [-4, 2]])

    def test_deterministic_transcript(self):
        spec = RoundSpec([3, 4], [[1.5, -2], [0.25, 8]], oracle=BEAVER)
        r1, e1 = execute_round(spec, 9)
        r2, e2 = execute_round(spec, 9)
        assert r1 == r2
        assert [(t.time, t.src, t.dst, t.data) for t in e1.transcript] == \
               [(t.time, t.src, t.dst, t.data) for t in e2.transcript]

    def test_order_invariance(self):
        clients = [(n, [Fraction(n, 7), -n]) for n in (3, 8, 1, 12, 5)]
        base = run_round(clients, seed=4)
        for perm in ([4, 3, 2, 1, 0], [2, 0, 4, 1, 3]):
            assert run_round([clients[i] for i in perm], seed=4) == base

    def test_result_json(self):
        res = run_round([(2, [10]), (3, [20])])
        assert json.loads(res.to_json()) == {"average": ["16"], "n": 5, "oracle": "zeroSum", "round": 0}

    def test_round_number_in_frames(self):
        spec = RoundSpec([1], [[1]], round_no=7)
        res, run = execute_round(spec, 0)
        assert res.round == 7
        assert {decode_frame(e.data).round for e in run.transcript} == {7}

    def test_only_multiplication_and_open_traffic(self):
        spec = RoundSpec([1, 2, 3], [[1, 2]] * 3)
        _, run = execute_round(spec, 0)
        types = Counter(decode_frame(e.data).msg_type for e in run.transcript)
        assert types == {MsgType.CONTRIB: 9, MsgType.RESHARE_R: 9, MsgType.MUL_FORWARD: 9,
                         MsgType.OPEN_SHARE: 6}


class TestGuards:
    def test_overflow_rejected_before_traffic(self):
        cfg = FieldConfig(2**31 - 1, 16)
        spec = RoundSpec([1000, 1000], [[10], [10]], cfg)
        with pytest.raises(OutOfRange):
            execute_round(spec, 0)

    def test_overflow_boundary(self):
        cfg = FieldConfig(2**31 - 1, 0)
        check_overflow([1], [[cfg.encode(1000)]], cfg)
        with pytest.raises(OutOfRange):
            check_overflow([2**20], [[cfg.encode(1024)]], cfg)

    def test_ragged_features(self):
        with pytest.raises(LengthMismatch):
            run_round([(1, [1, 2]), (1, [1])])

    def test_empty_round(self):
        with pytest.raises(EmptyVector):
            run_round([])

    def test_zero_total_weight_at_tiny_prime(self):
        spec = RoundSpec([2, 3], [[1], [1]], FieldConfig(5, 0), encoded=True, guard=False)
        with pytest.raises(RoundFailed) as info:
            execute_round(spec, 0)
        assert isinstance(info.value.cause, ZeroTotalWeight)
        assert info.value.role == "aggregator" and info.value.stage == "finalize"
