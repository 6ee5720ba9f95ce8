import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_meta, make_sample
from transferq.core import (
    MSE,
    RMSE,
    DomainSample,
    Lottery,
    LossSpec,
    MetaData,
    Observation,
    Transform,
    pool,
    sample_error,
    validate_metadata,
)
from transferq.errors import RuleEvaluationError
from transferq.rules import ConstantRule, EuRule


class TestSampleError:
    def test_exact_fit_is_zero(self):
        s = make_sample("A", [(10, 0, 0.5, 3)])
        assert sample_error(ConstantRule(3.0), s, MSE) == 0.0

    def test_constant_three_on_shifted_lottery_is_64(self):
        s = make_sample("A", [(20, 10, 0.1, 11)])
        assert sample_error(ConstantRule(3.0), s, MSE) == 64.0

    def test_sqrt_transform_gives_rmse(self):
        s = make_sample("A", [(1, 0, 0.5, 3), (1, 0, 0.5, 4)])
        assert sample_error(ConstantRule(0.0), s, RMSE) == pytest.approx(math.sqrt(12.5), abs=1e-12)
        assert sample_error(ConstantRule(0.0), s, RMSE) == pytest.approx(3.5355, abs=1e-4)

    def test_undefined_prediction_names_the_observation(self):
        # eta >= 1 has no certainty equivalent for a lottery paying 0 with positive probability
        s = make_sample("A", [(10, 5, 0.5, 7), (10, 0, 0.5, 3)])
        with pytest.raises(RuleEvaluationError) as info:
            sample_error(EuRule(1.5), s, MSE)
        assert info.value.index == 1

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            sample_error(ConstantRule(0.0), DomainSample("E", [], [], [], []), MSE)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.randoms())
    def test_invariant_to_observation_order(self, ys, rnd):
        rows = [(10.0, 0.0, 0.5, y) for y in ys]
        shuffled = rows[:]
        rnd.shuffle(shuffled)
        a = sample_error(ConstantRule(1.5), make_sample("A", rows), MSE)
        b = sample_error(ConstantRule(1.5), make_sample("A", shuffled), MSE)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-50, 50), st.floats(-50, 50))
    def test_transforms_rank_rules_identically(self, ys, c1, c2):
        s = make_sample("A", [(10.0, 0.0, 0.5, y) for y in ys])
        mse = [sample_error(ConstantRule(c), s, MSE) for c in (c1, c2)]
        rmse = [sample_error(ConstantRule(c), s, RMSE) for c in (c1, c2)]
        assert (mse[0] < mse[1]) == (rmse[0] < rmse[1])

    def test_zero_iff_exact(self):
        s = make_sample("A", [(10, 0, 0.5, 2), (20, 0, 0.5, 2)])
        assert sample_error(ConstantRule(2.0), s) == 0.0
        assert sample_error(ConstantRule(2.0 + 1e-9), s) > 0.0


class TestLossSpec:
    def test_transform_must_be_known(self):
        with pytest.raises(ValueError):
            LossSpec(transform="log")

    def test_sqrt_enum(self):
        assert RMSE.transform is Transform.SQRT


class TestTypes:
    def test_lottery_orientation_swaps(self):
        lot, swapped = Lottery(5, 10, 0.3).oriented()
        assert swapped
        assert (lot.z1, lot.z2) == (10, 5)
        assert lot.p == pytest.approx(0.7)

    def test_expected_value(self):
        assert Lottery(10, 0, 0.5).expected_value == 5.0

    def test_from_observations_round_trip(self):
        obs = [Observation(Lottery(10, 0, 0.5), 3.0), Observation(Lottery(20, 10, 0.1), 11.0)]
        s = DomainSample.from_observations("A", obs)
        assert s.observations == obs
        assert len(s) == 2

    def test_columns_are_read_only(self):
        s = make_sample("A", [(10, 0, 0.5, 3)])
        with pytest.raises(ValueError):
            s.y[0] = 1.0

    def test_sample_orientation(self):
        s = make_sample("A", [(5, 10, 0.3, 4), (10, 5, 0.3, 4)])
        fixed, rows = s.oriented()
        assert rows == [0]
        np.testing.assert_allclose(fixed.X[0], [10, 5, 0.7])

    def test_pool_concatenates_in_order(self):
        a = make_sample("A", [(10, 0, 0.5, 1)])
        b = make_sample("B", [(20, 0, 0.5, 2), (30, 0, 0.5, 3)])
        np.testing.assert_array_equal(pool([a, b]).y, [1, 2, 3])

    def test_metadata_select(self):
        meta = make_meta([(10, 0, 0.5, 1)], [(10, 0, 0.5, 2)], [(10, 0, 0.5, 3)])
        assert [s.id for s in meta.select([2, 0])] == ["D2", "D0"]
        assert meta.n == 3


class TestValidate:
    def test_well_formed_is_clean(self):
        meta = make_meta([(10, 0, 0.5, 3), (20, 10, 0.1, 11)], [(5, -5, 0.5, 0)])
        assert validate_metadata(meta) == []

    def test_probability_out_of_range(self):
        meta = make_meta([(10, 0, 1.2, 3)], [(10, 0, 0.5, 3)])
        report = validate_metadata(meta)
        assert [v.rule for v in report] == ["p out of [0,1]"]
        assert report[0].domain_id == "D0" and report[0].row == 0

    def test_duplicate_ids(self):
        a = make_sample("A", [(10, 0, 0.5, 3)])
        report = validate_metadata(MetaData((a, a)))
        assert [v.rule for v in report] == ["duplicate id"]

    def test_single_domain_flagged(self):
        report = validate_metadata(make_meta([(10, 0, 0.5, 3)]))
        assert len(report) == 1 and "at least 2" in report[0].rule

    @pytest.mark.parametrize(
        "row, rule",
        [
            ((5, 10, 0.5, 1), "|z1| < |z2|"),
            ((math.inf, 0, 0.5, 1), "prize not finite"),
            ((10, 0, 0.5, math.nan), "outcome not finite"),
        ],
    )
    def test_each_invariant(self, row, rule):
        report = validate_metadata(make_meta([row], [(10, 0, 0.5, 1)]))
        assert [v.rule for v in report] == [rule]
