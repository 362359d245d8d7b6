from collections import Counter

import pytest

from wflmpc import privacy
from wflmpc.errors import ConfigMismatch, EmptyVector, LengthMismatch, MissingComponent
from wflmpc.field import FieldConfig, SeededRng
from wflmpc.sharing import (ShareVector, local_add, next_party, prev_party, reconstruct, reconstruct_vector,
                            split, split_vector)

from oracles import CHI2_CRIT, M61

F31 = FieldConfig(31, 0)
F5 = FieldConfig(5, 0)


class TestRing:
    def test_successor_and_predecessor(self):
        assert [next_party(i) for i in (1, 2, 3)] == [2, 3, 1]
        assert [prev_party(i) for i in (1, 2, 3)] == [3, 1, 2]


class TestSplit:
    def test_zero_secret(self):
        for seed in range(20):
            s = split(F31(0), SeededRng(seed))
            assert sum(c.value for c in s.components) % 31 == 0

    def test_seventeen_over_many_seeds(self):
        for seed in range(1000):
            assert reconstruct(split(F31(17), SeededRng(seed))).value == 17

    def test_third_component_closes_the_sum(self):
        s = split(F31(9), SeededRng(3))
        assert s[3].value == (9 - s[1].value - s[2].value) % 31

    def test_first_component_uniform(self):
        rng = SeededRng(11)
        counts = Counter(split(F31(17), rng)[1].value for _ in range(100_000))
        exp = 100_000 / 31
        assert sum((counts[c] - exp) ** 2 / exp for c in range(31)) < CHI2_CRIT[30]

    def test_pairs_uniform_p5(self):
        report = privacy.test_share_uniformity(3, 100_000, 5, pairs=True, seed=1)
        assert report.degrees_of_freedom == 24
        assert report.passed, report.to_dict()

    def test_deterministic(self):
        a = split(F31(4), SeededRng(77))
        b = split(F31(4), SeededRng(77))
        assert a == b

    def test_int_secret_uses_given_field(self):
        s = split(40, SeededRng(0), F31)
        assert s.field == F31 and reconstruct(s).value == 9


class TestReconstruct:
    def test_direct_sums(self):
        assert reconstruct([F31(1), F31(2), F31(3)]).value == 6
        assert reconstruct([F31(30)] * 3).value == 28

    @pytest.mark.parametrize("p", [2, 3, 5, 31])
    def test_exhaustive_roundtrip(self, p):
        f = FieldConfig(p, 0)
        rng = SeededRng(p)
        assert all(reconstruct(split(f(x), rng)).value == x for x in range(p))

    def test_missing_component(self):
        with pytest.raises(MissingComponent):
            reconstruct([F31(1), F31(2)])
        with pytest.raises(MissingComponent):
            reconstruct({1: F31(1), 3: F31(2)})

    def test_mixed_fields(self):
        with pytest.raises(ConfigMismatch):
            reconstruct([F31(1), F31(2), F5(3)])

    def test_large_field(self):
        f = FieldConfig(M61, 16)
        x = M61 - 12345
        assert reconstruct(split(f(x), SeededRng(5))).value == x


class TestVector:
    def test_d1_matches_scalar_split(self):
        sv = split_vector([F31(8)], SeededRng(2))
        s = split(F31(8), SeededRng(2))
        assert tuple(sv[i][0] for i in (1, 2, 3)) == tuple(c.value for c in s.components)

    def test_d10_elementwise(self):
        v = list(range(3, 13))
        sv = split_vector(v, SeededRng(6), F31)
        assert len(sv) == 10
        assert [e.value for e in reconstruct_vector(sv)] == [x % 31 for x in v]

    def test_empty_rejected(self):
        with pytest.raises(EmptyVector):
            split_vector([], SeededRng(0), F31)

    def test_ragged_rejected(self):
        with pytest.raises(LengthMismatch):
            ShareVector(F31, ((1, 2), (1,), (1, 2)))

    def test_identical_coordinates_get_distinct_shares(self):
        rng = SeededRng(13)
        trials, same = 10_000, 0
        for _ in range(trials):
            sv = split_vector([F31(5), F31(5)], rng)
            same += sv[1][0] == sv[1][1] and sv[2][0] == sv[2][1]
        # collision rate of the first two components is 1/p^2, about 10 in 10^4
        assert same < 40


class TestLocalAdd:
    def test_add_zero(self):
        rng = SeededRng(1)
        x, z = split(F31(12), rng), split(F31(0), rng)
        assert reconstruct([local_add(x[i], z[i]) for i in (1, 2, 3)]).value == 12

    def test_wraps(self):
        rng = SeededRng(2)
        x, y = split(F31(20), rng), split(F31(15), rng)
        assert reconstruct([local_add(x[i], y[i]) for i in (1, 2, 3)]).value == 4

    def test_hundred_chained(self):
        f = FieldConfig(M61, 16)
        rng = SeededRng(3)
        xs = [rng.below(M61) for _ in range(100)]
        acc = [f(0), f(0), f(0)]
        for x in xs:
            s = split(f(x), rng)
            acc = [local_add(acc[i - 1], s[i]) for i in (1, 2, 3)]
        assert reconstruct(acc).value == sum(xs) % M61
