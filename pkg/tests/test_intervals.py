import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MeanConfig, make_meta, random_tensor, tensor_from
from transferq.intervals import (
    Side,
    WeightedEmpirical,
    as_fraction,
    coverage_level,
    coverage_upper_bound,
    forecast_interval,
    level_label,
    lower_quantile,
    upper_quantile,
)
from transferq.core import DomainSample, MetaData
from transferq.transfer import MeasureKind, MeasureSpec, pooled_transfer_errors


class TestQuantiles:
    @pytest.mark.parametrize("tau, expected", [(0.95, 10), (0.9, 9), (0.5, 5), (0.51, 6), (0.01, 1), (1, 10)])
    def test_upper_on_one_to_ten(self, tau, expected):
        assert upper_quantile(WeightedEmpirical.uniform(np.arange(1, 11)), tau) == expected

    @pytest.mark.parametrize("tau, expected", [(0.05, 1), (0.1, 2), (0.5, 6), (0.0, 1), (0.95, 10)])
    def test_lower_on_one_to_ten(self, tau, expected):
        assert lower_quantile(WeightedEmpirical.uniform(np.arange(1, 11)), tau) == expected

    def test_lower_at_one_is_infinite(self):
        assert lower_quantile(WeightedEmpirical.uniform([1.0, 2.0]), 1) == math.inf

    def test_exact_rational_rank(self):
        # 0.7 * 10 is 7.000000000000001 in floating point; the rank must still be 7
        assert upper_quantile(WeightedEmpirical.uniform(np.arange(1, 11)), 0.7) == 7

    def test_infinite_atoms(self):
        dist = WeightedEmpirical.uniform([1.0, 2.0, math.inf, math.inf])
        assert upper_quantile(dist, 0.5) == 2.0
        assert upper_quantile(dist, 0.75) == math.inf

    def test_rejects(self):
        with pytest.raises(ValueError):
            upper_quantile(WeightedEmpirical.uniform([1.0]), 0)
        with pytest.raises(ValueError):
            upper_quantile(WeightedEmpirical.uniform([]), 0.5)
        with pytest.raises(ValueError):
            WeightedEmpirical([1.0], [0.0])
        with pytest.raises(ValueError):
            WeightedEmpirical([math.nan], [1.0])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 6), st.integers(1, 4)), min_size=1, max_size=12),
        st.fractions(Fraction(1, 100), 1),
    )
    def test_brute_force_definitions(self, atoms, tau):
        values = np.array([a for a, _ in atoms], dtype=float)
        weights = np.array([w for _, w in atoms], dtype=float)
        dist = WeightedEmpirical(values, weights)
        total = weights.sum()
        mass_le = {b: weights[values <= b].sum() / total for b in set(values)}
        mass_ge = {b: weights[values >= b].sum() / total for b in set(values)}
        expected_up = min(b for b in mass_le if mass_le[b] >= float(tau) - 1e-12)
        assert upper_quantile(dist, tau) == expected_up
        expected_lo = max(b for b in mass_ge if mass_ge[b] >= float(tau) - 1e-12)
        assert lower_quantile(dist, 1 - tau) == expected_lo


class TestLevels:
    def test_one_sided(self):
        assert coverage_level(10, 1, 0.95, "one") == Fraction(19, 20) * Fraction(9, 11)

    def test_two_sided(self):
        assert coverage_level(10, 1, 0.95, "two") == 2 * Fraction(19, 20) * Fraction(9, 11) - 1

    def test_upper_bound(self):
        expected = Fraction(19, 20) * Fraction(9, 11) + Fraction(2, 11) + Fraction(math.factorial(9), math.factorial(11))
        assert coverage_upper_bound(10, 1, 0.95, Side.ONE_SIDED_UPPER) == expected

    def test_two_sided_upper_bound_doubles_slack(self):
        one = coverage_upper_bound(6, 2, 0.9, "one") - coverage_level(6, 2, 0.9, "one")
        two = coverage_upper_bound(6, 2, 0.9, "two") - coverage_level(6, 2, 0.9, "two")
        assert two == 2 * one

    @pytest.mark.parametrize("n, r", [(1, 1), (5, 0), (5, 5)])
    def test_rejects_r(self, n, r):
        with pytest.raises(ValueError):
            coverage_level(n, r, 0.9, "one")

    @pytest.mark.parametrize(
        "level, label",
        [(Fraction(367, 450), "82%"), (Fraction(163, 200), "82%"), (Fraction(33, 40), "83%"), (0.8149, "81%"), (None, "not identified")],
    )
    def test_label_rounds_half_up(self, level, label):
        assert level_label(level) == label

    def test_as_fraction_uses_decimal_repr(self):
        assert as_fraction(0.95) == Fraction(19, 20)
        assert as_fraction(Fraction(1, 3)) == Fraction(1, 3)

    def test_side_aliases(self):
        assert Side.parse("upper") is Side.ONE_SIDED_UPPER
        assert Side.parse("two_sided") is Side.TWO_SIDED


class TestForecastInterval:
    def test_one_sided_upper(self):
        t = tensor_from(np.arange(1, 21), 5)
        fi = forecast_interval(t, 0.9, "one")
        assert fi.lower == -math.inf and fi.upper == 18
        assert fi.nominal_level == Fraction(9, 10) * Fraction(4, 6)

    def test_two_sided(self):
        t = tensor_from(np.arange(1, 91), 10)
        fi = forecast_interval(t, 0.95, "two")
        # upper: rank ceil(0.95 * 90) = 86; lower: rank 90 - ceil(0.95 * 90) + 1 = 5
        assert (fi.lower, fi.upper) == (5, 86)
        assert fi.label == level_label(coverage_level(10, 1, 0.95, "two"))

    def test_nonpositive_two_sided_level(self):
        with pytest.raises(ValueError, match="level"):
            forecast_interval(tensor_from(np.arange(6), 3), 0.95, "two")

    def test_flagged_entries_excluded(self):
        meta = make_meta([(10, 0, 0.5, 1), (10, 0, 0.5, 3)], [(10, 0, 0.5, 2), (10, 0, 0.5, 2)], [(10, 0, 0.5, 5)])
        t = pooled_transfer_errors(meta, MeanConfig(), 1, MeasureSpec(MeasureKind.DETERIORATION))
        fi = forecast_interval(t, 1, "one")
        assert fi.excluded_entries == t.excluded > 0
        assert fi.upper == np.nanmax(t.values)

    def test_to_dict(self):
        fi = forecast_interval(tensor_from(np.arange(1, 21), 5), 0.9, "one")
        d = fi.to_dict()
        assert d["level_exact"] == "3/5" and d["level_label"] == "60%"
        assert d["upper"] == 18 and d["side"] == "one_sided_upper"

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.5, 0.8, 0.95]))
    def test_interval_contains_required_mass(self, seed, tau):
        t = random_tensor(np.random.default_rng(seed), 6, 2, ties=True)
        fi = forecast_interval(t, tau, "one")
        assert np.mean(t.values <= fi.upper) >= tau
        assert np.mean(t.values < fi.upper) < tau


class TestFiniteSampleCoverage:
    def test_exchangeable_domains_cover_at_guarantee(self):
        """Pooled one-sided bound over iid domains covers a fresh domain at the guaranteed rate."""
        rng = np.random.default_rng(42)
        n, r, tau, reps = 6, 1, 0.9, 600
        hits = 0
        for _ in range(reps):
            samples = []
            for d in range(n + 1):
                m = int(rng.integers(3, 7))
                shift = rng.normal()
                y = shift + rng.normal(size=m)
                samples.append(DomainSample(f"D{d}", np.full(m, 10.0), np.zeros(m), np.full(m, 0.5), y))
            meta = MetaData(tuple(samples[:n]))
            t = pooled_transfer_errors(meta, MeanConfig(), r)
            bound = forecast_interval(t, tau, "one").upper
            train = int(rng.integers(n))
            rule = MeanConfig().fit([samples[train]])
            hits += np.mean((rule.predict(samples[n].X) - samples[n].y) ** 2) <= bound
        freq = hits / reps
        se = math.sqrt(freq * (1 - freq) / reps)
        assert freq >= float(coverage_level(n, r, tau, "one")) - 3 * se
        assert freq <= float(coverage_upper_bound(n, r, tau, "one")) + 3 * se
