"""Router: entropy, features, score, budget bands, stall rule."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from visionloop import (
    AllZeroVolumes,
    ComplexityFeatures,
    ContinueReason,
    EmptyHistory,
    ProductivityRecord,
    RecursionRouter,
    assess_productivity,
    complexity_score,
    extract_features,
    label_entropy,
    recommended_budget,
    should_continue,
)
from visionloop.router import H_MAX_BITS

# Frozen with an independent 50-digit arbitrary-precision evaluation of the
# entropy and score formulas (mpmath); see test docstrings for inputs.
H_1_1_2 = 1.5
H_TINY_10_10 = 1.0031013895644601
SCORE_1_20_2_0 = 0.50749208041667677
SCORE_REFERENCE_TABLE = {
    # (H, V, R, T) -> (reference s as printed, reference n*)
    (0.0, 9.83, 1, 0): (0.14, 3),
    (0.0, 45.0, 1, 0): (0.35, 4),
    (1.50, 30.0, 3, 1): (0.86, 6),
}


class TestLabelEntropy:
    def test_single_region_zero_bits(self):
        assert label_entropy([9.83, 0, 0]) == 0.0

    def test_uniform_attains_max(self):
        assert label_entropy([1, 1, 1]) == pytest.approx(H_MAX_BITS, abs=1e-12)

    def test_quarter_quarter_half(self):
        assert label_entropy([1, 1, 2]) == pytest.approx(H_1_1_2, abs=1e-12)

    def test_tiny_plus_two_equal(self):
        assert label_entropy([0.005, 10, 10]) == pytest.approx(H_TINY_10_10, abs=1e-12)

    def test_all_zero_raises(self):
        with pytest.raises(AllZeroVolumes):
            label_entropy([0.0, 0.0, 0.0])

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            label_entropy([1.0, -0.1, 0.2])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            label_entropy([])


positive_triples = st.lists(
    st.floats(min_value=1e-6, max_value=1e4, allow_nan=False), min_size=3, max_size=3
)


class TestEntropyProperties:
    @given(positive_triples)
    def test_permutation_invariant(self, vols):
        base = label_entropy(vols)
        shuffled = [vols[2], vols[0], vols[1]]
        assert label_entropy(shuffled) == pytest.approx(base, rel=1e-9, abs=1e-12)

    @given(positive_triples, st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariant(self, vols, c):
        base = label_entropy(vols)
        assert label_entropy([v * c for v in vols]) == pytest.approx(
            base, rel=1e-9, abs=1e-9
        )

    @given(positive_triples)
    def test_bounded_by_log2_3(self, vols):
        assert 0.0 <= label_entropy(vols) <= H_MAX_BITS + 1e-9

    @given(st.floats(min_value=1e-6, max_value=1e4), st.integers(0, 2))
    def test_zero_iff_single_positive(self, v, pos):
        vols = [0.0, 0.0, 0.0]
        vols[pos] = v
        assert label_entropy(vols) == 0.0


class TestExtractFeatures:
    def test_single_et_case(self):
        f = extract_features([9.83, 0, 0])
        assert f == ComplexityFeatures(0.0, 9.83, 1, 0)

    def test_three_tiny_regions(self):
        f = extract_features([0.3, 0.3, 0.3])
        assert f.entropy_bits == pytest.approx(H_MAX_BITS, abs=1e-9)
        assert f.total_volume_cc == pytest.approx(0.9)
        assert f.present_count == 3
        assert f.tiny_flag == 1

    def test_subthreshold_region_counts_as_tiny_not_present(self):
        f = extract_features([0.005, 10, 10])
        assert f.entropy_bits == pytest.approx(H_TINY_10_10, abs=1e-12)
        assert f.present_count == 2  # 0.005 is below the 0.01 cc presence bar
        assert f.tiny_flag == 1

    def test_all_zero_degenerates_quietly(self):
        assert extract_features([0, 0, 0]) == ComplexityFeatures(0.0, 0.0, 0, 0)


class TestComplexityScore:
    @pytest.mark.parametrize("hvrt, expected", SCORE_REFERENCE_TABLE.items())
    def test_reference_rows(self, hvrt, expected):
        h, v, r, t = hvrt
        score = complexity_score(ComplexityFeatures(h, v, r, t))
        assert score == pytest.approx(expected[0], abs=0.005)
        assert recommended_budget(score) == expected[1]

    def test_formula_beats_printed_value_for_row_3(self):
        # The reference table prints 0.58 here; direct evaluation of the
        # formula gives 0.5075. Both land in the same budget band.
        score = complexity_score(ComplexityFeatures(1.00, 20.0, 2, 0))
        assert score == pytest.approx(SCORE_1_20_2_0, abs=1e-9)
        assert recommended_budget(score) == recommended_budget(0.58) == 5

    def test_row_5_band_equality(self):
        score = complexity_score(ComplexityFeatures(1.10, 18.0, 3, 1))
        assert recommended_budget(score) == recommended_budget(0.73) == 6

    def test_max_score_is_exactly_one(self):
        assert complexity_score(ComplexityFeatures(H_MAX_BITS, 50.0, 3, 1)) == 1.0

    def test_volume_saturates(self):
        a = complexity_score(ComplexityFeatures(0, 50, 1, 0))
        b = complexity_score(ComplexityFeatures(0, 500, 1, 0))
        assert a == b

    @given(
        st.floats(0, H_MAX_BITS),
        st.floats(0, 200),
        st.integers(0, 3),
        st.integers(0, 1),
    )
    def test_bounds(self, h, v, r, t):
        assert 0.0 <= complexity_score(ComplexityFeatures(h, v, r, t)) <= 1.0

    @given(
        st.floats(0, H_MAX_BITS),
        st.floats(0, H_MAX_BITS),
        st.floats(0, 200),
        st.integers(0, 3),
        st.integers(0, 1),
    )
    def test_monotone_in_entropy(self, h1, h2, v, r, t):
        lo, hi = sorted((h1, h2))
        assert complexity_score(ComplexityFeatures(lo, v, r, t)) <= complexity_score(
            ComplexityFeatures(hi, v, r, t)
        ) + 1e-12


class TestRecommendedBudget:
    @pytest.mark.parametrize(
        "score, budget",
        [
            (0.0, 3),
            (0.2499, 3),
            (0.25, 4),
            (0.4499, 4),
            (0.45, 5),
            (0.6499, 5),
            (0.65, 6),
            (1.0, 6),
        ],
    )
    def test_band_edges(self, score, budget):
        assert recommended_budget(score) == budget

    def test_monotone_in_score(self):
        grid = [i / 1000 for i in range(1001)]
        budgets = [recommended_budget(s) for s in grid]
        assert budgets == sorted(budgets)


class TestProductivity:
    @pytest.mark.parametrize(
        "record, expected",
        [
            (ProductivityRecord(1, 0, 0), True),
            (ProductivityRecord(0, 19, 0), False),
            (ProductivityRecord(0, 20, 0), True),
            (ProductivityRecord(0, 0, 1), True),
            (ProductivityRecord(0, 0, 0), False),
        ],
    )
    def test_thresholds(self, record, expected):
        assert assess_productivity(record) is expected


class TestShouldContinue:
    def test_stall_requires_budget_spent(self):
        decision = should_continue(2, [False, False, False], budget=3)
        assert decision.proceed is True

    def test_stall_fires_past_budget(self):
        decision = should_continue(4, [True, True, True, False, False], budget=3)
        assert decision.proceed is False
        assert decision.reason == ContinueReason.STALL_DETECTED

    def test_single_unproductive_is_fine(self):
        decision = should_continue(4, [True, True, True, True, False], budget=3)
        assert decision.proceed is True

    def test_empty_history_past_start_raises(self):
        with pytest.raises(EmptyHistory):
            should_continue(1, [], budget=3)

    def test_empty_history_at_start_proceeds(self):
        assert should_continue(0, [], budget=3).proceed is True

    @given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(0, 12))
    def test_stall_only_after_two_trailing_failures(self, history, index):
        decision = should_continue(index, history, budget=3)
        if decision.reason == ContinueReason.STALL_DETECTED:
            assert history[-2:] == [False, False]


class TestRecursionRouter:
    def test_men_00008_budget(self):
        router = RecursionRouter([0, 0, 9.83])
        assert router.budget == 3
        assert router.score == pytest.approx(0.14, abs=0.005)

    def test_seeded_random_consistency(self):
        rng = random.Random(20260809)
        for _ in range(200):
            vols = [rng.uniform(0, 60) for _ in range(3)]
            if sum(vols) == 0:
                continue
            router = RecursionRouter(vols)
            assert router.budget == recommended_budget(router.score)
            assert 3 <= router.budget <= 6
            assert not math.isnan(router.score)


class TestOracleCrossCheck:
    """Recompute the frozen constants with an independent 50-digit evaluation."""

    def test_frozen_values_match_arbitrary_precision(self):
        from mpmath import mp, mpf, log

        mp.dps = 50

        def entropy_bits(vols):
            total = sum(mpf(str(v)) for v in vols)
            acc = mpf(0)
            for v in vols:
                v = mpf(str(v))
                if v > 0:
                    p = v / total
                    acc -= p * log(p) / log(2)
            return acc

        assert abs(entropy_bits(["1", "1", "2"]) - H_1_1_2) < 1e-15
        assert abs(entropy_bits(["0.005", "10", "10"]) - H_TINY_10_10) < 1e-15

        h_max = log(3) / log(2)
        score = (
            mpf("0.35") * mpf("1.00") / h_max
            + mpf("0.30") * mpf("20") / 50
            + mpf("0.25") * 2 / 3
        )
        assert abs(score - SCORE_1_20_2_0) < 1e-15
