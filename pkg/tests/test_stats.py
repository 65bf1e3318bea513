import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radjudge.errors import DegenerateInput, LengthMismatch, StatisticsError, ValueOutsideCategories, ZeroVariance
from radjudge.stats import ScoreTable, cohens_kappa, correlation_matrix, kendall_tau_b, pearson_r, pooled_table


def brute_tau_b(x, y):
    n = len(x)
    c = d = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            sx = (x[i] > x[j]) - (x[i] < x[j])
            sy = (y[i] > y[j]) - (y[i] < y[j])
            if sx == 0 and sy == 0:
                continue
            if sx == 0:
                tx += 1
            elif sy == 0:
                ty += 1
            elif sx == sy:
                c += 1
            else:
                d += 1
    return (c - d) / math.sqrt((c + d + tx) * (c + d + ty))


def random_vectors(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 50)
    levels = rng.randint(2, 8)
    x = [rng.randint(0, levels) for _ in range(n)]
    y = [rng.randint(0, levels) + rng.choice((0, 0.5)) for _ in range(n)]
    return x, y


class TestKendall:
    def test_perfect(self):
        assert kendall_tau_b([1, 2, 3], [1, 2, 3]).statistic == 1.0

    def test_reverse(self):
        assert kendall_tau_b([1, 2, 3], [3, 2, 1]).statistic == -1.0

    def test_hand_example(self):
        assert kendall_tau_b([1, 2, 3, 4], [2, 1, 4, 3]).statistic == pytest.approx(1 / 3, abs=1e-12)

    def test_matches_brute_force(self):
        checked = 0
        for seed in range(300):
            x, y = random_vectors(seed)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert kendall_tau_b(x, y).statistic == pytest.approx(brute_tau_b(x, y), abs=1e-12)
            checked += 1
        assert checked >= 200

    def test_p_value_matches_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        for seed in range(30):
            x, y = random_vectors(seed)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            ref = scipy_stats.kendalltau(x, y, method="asymptotic")
            got = kendall_tau_b(x, y)
            assert got.statistic == pytest.approx(ref.statistic, abs=1e-12)
            assert got.p_value == pytest.approx(ref.pvalue, abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            kendall_tau_b([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            kendall_tau_b([1, 2], [1, 2, 3])

    @given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=20, unique=True),
           st.randoms(use_true_random=False))
    def test_antisymmetry_and_monotone_invariance(self, x, rnd):
        y = x[:]
        rnd.shuffle(y)
        t = kendall_tau_b(x, y).statistic
        assert kendall_tau_b(x, [-v for v in y]).statistic == pytest.approx(-t, abs=1e-12)
        assert kendall_tau_b([v ** 3 + 7 * v for v in x], y).statistic == pytest.approx(t, abs=1e-12)
        assert -1.0 <= t <= 1.0


class TestPearson:
    def test_linear(self):
        assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_negative(self):
        assert pearson_r([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_example(self):
        assert pearson_r([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            pearson_r([1, 1], [1, 2])


class TestKappa:
    def test_perfect(self):
        assert cohens_kappa([1, 0, 0.5, -1], [1, 0, 0.5, -1]) == 1.0

    def test_hand_example(self):
        assert cohens_kappa([1, 0, 1, 0], [1, 0, 0, 0]) == pytest.approx(0.5, abs=1e-12)

    def test_total_disagreement_constant_raters(self):
        # p_o = 0 and the marginals never overlap, so p_e = 0 and kappa = 0.
        assert cohens_kappa([1, 1], [0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_negative_kappa(self):
        assert cohens_kappa([1, 0], [0, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_outside_categories(self):
        with pytest.raises(ValueOutsideCategories):
            cohens_kappa([0.3, 1], [1, 1])

    @given(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 1.0]), min_size=1, max_size=30),
           st.lists(st.sampled_from([-1.0, 0.0, 0.5, 1.0]), min_size=1, max_size=30))
    def test_bounds(self, a, b):
        n = min(len(a), len(b))
        assert cohens_kappa(a[:n], b[:n]) <= 1.0 + 1e-12
        if len(set(a)) >= 2:
            assert cohens_kappa(a, a) == pytest.approx(1.0)


class TestMatrix:
    def test_identical_columns(self):
        cells = correlation_matrix(ScoreTable({"a": [1, 2, 3], "b": [1, 2, 3]}))
        assert len(cells) == 1 and cells[0].result.statistic == 1.0

    def test_three_columns(self):
        cells = correlation_matrix(ScoreTable({"a": [1, 2, 3], "b": [3, 1, 2], "c": [2, 3, 1]}))
        assert [(c.metric_a, c.metric_b) for c in cells] == [("b", "a"), ("c", "a"), ("c", "b")]

    def test_noisy_monotone(self):
        rng = random.Random(3)
        gt = [rng.randint(0, 10) / 2 for _ in range(40)]
        meteor = [g / 5 + rng.uniform(-0.1, 0.1) for g in gt]
        cell = correlation_matrix(ScoreTable({"meteor": meteor, "ground_truth": gt}))[0]
        assert cell.result.statistic > 0
        assert cell.result.statistic == pytest.approx(brute_tau_b(meteor, gt), abs=1e-12)

    def test_error_carries_pair(self):
        with pytest.raises(StatisticsError) as info:
            correlation_matrix(ScoreTable({"a": [1, 2], "b": [3, 3]}))
        assert info.value.pair == ("b", "a")

    def test_kappa_domain(self):
        with pytest.raises(ValueOutsideCategories):
            correlation_matrix(ScoreTable({"a": [0.3, 1], "b": [1, 0]}), "kappa")

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ScoreTable({"a": [1, 2], "b": [1, 2, 3]})


def test_pooled_table_drops_missing_keys():
    table, dropped = pooled_table({"r1": {("c", "a"): 1, ("c", "b"): 0}, "r2": {("c", "a"): 1, ("c", "b"): 0.5, ("c", "x"): 1}})
    assert dropped == 1
    assert table.columns == {"r1": [1.0, 0.0], "r2": [1.0, 0.5]}
