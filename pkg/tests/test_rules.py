import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FailingConfig, FixedConfig, gains_lotteries, make_sample
from transferq.core import MSE, RMSE, DomainSample, Lottery, sample_error
from transferq.errors import FitError, LinearSolveError
from transferq.rules import (
    ConstantRule,
    CptConfig,
    CptRule,
    DomainCvConfig,
    EuConfig,
    EuRule,
    FitConfig,
    ForestConfig,
    ForestRuleConfig,
    KernelRidgeConfig,
    KernelRidgeRuleConfig,
    cpt_certainty_equivalent,
    eu_certainty_equivalent,
    fit_domain_cv,
    fit_erm,
    fit_kernel_ridge,
    fit_partial,
    fit_random_forest,
    fit_with_fixed,
    grow_tree,
    parse_rule,
    predict_cpt,
    predict_eu,
    rule_from_text,
)
from transferq.rules.economic import _Problem, _Training, _aggregate
from transferq.rules.trees import best_split

# Exact certainty equivalents under sign-power CRRA utility for the one-observation example.
ETA_EXACT_FIT = 0.4242834


class TestPredictEu:
    def test_risk_neutral_is_expected_value(self):
        assert predict_eu(0.0, Lottery(10, 0, 0.5)) == pytest.approx(5.0)

    def test_log_utility_is_geometric_mean(self):
        assert predict_eu(1.0, Lottery(20, 5, 0.5)) == pytest.approx(10.0)

    def test_power_mean_above_one(self):
        # eta = 2: harmonic mean of the prizes
        assert predict_eu(2.0, Lottery(20, 5, 0.5)) == pytest.approx(8.0)

    def test_zero_prize_undefined_at_eta_one_or_more(self):
        assert math.isnan(predict_eu(1.0, Lottery(10, 0, 0.5)))
        assert math.isnan(predict_eu(3.0, Lottery(10, 0, 0.5)))

    def test_zero_prize_with_zero_probability_is_fine(self):
        assert predict_eu(2.0, Lottery(10, 0, 1.0)) == pytest.approx(10.0)

    def test_formula_value_at_paper_eta(self):
        # (0.5 * 10^0.36)^(1/0.36): the closed form at eta = 0.64
        assert predict_eu(0.64, Lottery(10, 0, 0.5)) == pytest.approx(0.5 ** (1 / 0.36) * 10, rel=1e-12)

    def test_exact_fit_eta(self):
        assert predict_eu(ETA_EXACT_FIT, Lottery(10, 0, 0.5)) == pytest.approx(3.0, abs=1e-5)

    def test_broadcasting(self):
        out = eu_certainty_equivalent(np.array([[0.0], [0.5]]), np.array([10.0, 20.0]), 0.0, 0.5)
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out[0], [5.0, 10.0])

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 1000), st.floats(0, 1), st.floats(0, 1))
    def test_identity_parameterization_is_expected_value(self, z1, frac, p):
        z2 = z1 * frac
        assert predict_eu(0.0, Lottery(z1, z2, p)) == pytest.approx(p * z1 + (1 - p) * z2, rel=1e-9, abs=1e-9)


class TestPredictCpt:
    def test_identity_parameters(self):
        assert predict_cpt((1, 1, 1, 1), Lottery(10, 0, 0.5)) == pytest.approx(5.0)

    def test_square_root_value(self):
        assert predict_cpt((0.5, 1, 1, 1), Lottery(100, 0, 0.5)) == pytest.approx(25.0)

    def test_mixed_signs(self):
        assert predict_cpt((1, 1, 1, 1), Lottery(-10, 5, 0.5)) == pytest.approx(-2.5)

    def test_degenerate_curvature_is_undefined(self):
        assert math.isnan(predict_cpt((0, 1, 1, 1), Lottery(10, 0, 0.5)))
        assert math.isnan(predict_cpt((1, 0, 1, 1), Lottery(-10, 0, 0.5)))

    def test_weighting_function(self):
        # w(p) = delta p^g / (delta p^g + (1-p)^g); with alpha = 1 the CE is w(p) z1 + (1-w) z2
        g, d, p = 0.6, 1.2, 0.3
        w = d * p**g / (d * p**g + (1 - p) ** g)
        assert predict_cpt((1, 1, g, d), Lottery(10, 2, p)) == pytest.approx(w * 10 + (1 - w) * 2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-500, 500), st.floats(0, 1), st.floats(0, 1))
    def test_identity_agrees_with_expected_value(self, z1, frac, p):
        z2 = -z1 * frac if frac > 0.5 else z1 * frac
        ce = predict_cpt((1, 1, 1, 1), Lottery(z1, z2, p))
        assert ce == pytest.approx(p * z1 + (1 - p) * z2, rel=1e-9, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 3), st.floats(0.2, 0.8))
    def test_continuous_in_each_parameter(self, which, value):
        theta = np.array([0.8, 0.9, 0.6, 1.2])
        theta[which] = value
        h = 1e-7
        bumped = theta.copy()
        bumped[which] += h
        lot = (50.0, 10.0, 0.3)
        a = cpt_certainty_equivalent(*theta, *lot)
        b = cpt_certainty_equivalent(*bumped, *lot)
        assert abs(b - a) < 1e-3

    def test_rule_rejects_moved_fixed_component(self):
        with pytest.raises(ValueError):
            CptRule(alpha=0.5, variant="g")
        with pytest.raises(ValueError):
            CptRule(gamma=1.5)


class TestFitErm:
    def test_single_observation_fits_exactly(self):
        fit = fit_erm("eu", [make_sample("A", [(10, 0, 0.5, 3)])])
        assert fit.rule.eta == pytest.approx(ETA_EXACT_FIT, abs=1e-5)
        assert fit.objective < 1e-10

    def test_exact_fit_extrapolation(self):
        rule = fit_erm("eu", [make_sample("A", [(10, 0, 0.5, 3)])]).rule
        pred = rule.predict([[20, 10, 0.1]])[0]
        assert pred == pytest.approx(10.8672, abs=1e-3)
        assert (pred - 11) ** 2 <= 0.1

    def test_expected_value_data_gives_risk_neutral(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 12)
        y = X[:, 2] * X[:, 0] + (1 - X[:, 2]) * X[:, 1]
        fit = fit_erm("eu", [DomainSample("A", X[:, 0], X[:, 1], X[:, 2], y)])
        assert fit.rule.eta == pytest.approx(0.0, abs=1e-6)
        assert fit.objective < 1e-9

    def test_cpt_recovers_noiseless_parameters(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 15)
        losses = -gains_lotteries(rng, 15)
        losses[:, 2] = -losses[:, 2]
        X = np.vstack([X, losses])
        y = cpt_certainty_equivalent(0.8, 0.9, 0.6, 1.2, X[:, 0], X[:, 1], X[:, 2])
        fit = fit_erm("cpt-abdg", [DomainSample("A", X[:, 0], X[:, 1], X[:, 2], y)], RMSE)
        assert fit.objective <= 1e-3 * np.abs(X[:, :2]).max()

    def test_objective_not_above_any_grid_point(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 10)
        y = X[:, 1] + rng.normal(0, 2, 10)
        s = DomainSample("A", X[:, 0], X[:, 1], X[:, 2], y)
        cfg = FitConfig(resolution=9)
        fit = fit_erm("cpt-dg", [s], MSE, cfg)
        problem = _Problem("cpt", ("alpha", "beta", "gamma", "delta"), ("gamma", "delta"), {"alpha": 1.0, "beta": 1.0}, _Training([s]), MSE, cfg)
        grid = _aggregate(problem.grid_mse(problem.grid()), MSE)
        assert fit.objective <= grid.min() + 1e-12
        assert fit.objective <= fit.grid_best_objective

    def test_averages_per_sample_not_pooled(self):
        # one big and one small sample: the fitted constant-like EU rule weighs domains equally
        big = make_sample("A", [(10, 10, 0.5, 10)] * 9 + [(10, 10, 0.5, 10)])
        small = make_sample("B", [(10, 10, 0.5, 10)])
        fit = fit_erm("eu", [big, small])
        assert fit.objective == pytest.approx(0.0, abs=1e-12)
        # per-sample mean of the two MSEs equals the reported objective
        rule = fit.rule
        mean_err = np.mean([sample_error(rule, s) for s in (big, small)])
        assert fit.objective == pytest.approx(mean_err, abs=1e-12)

    def test_unidentified_curvature_pinned(self):
        fit = fit_erm("cpt-abdg", [make_sample("A", [(10, 2, 0.5, 5), (20, 4, 0.3, 8)])], MSE, FitConfig(resolution=6))
        assert fit.rule.beta == 1.0
        assert "beta" in fit.pinned

    def test_deterministic(self):
        s = make_sample("A", [(10, 2, 0.5, 5), (20, 4, 0.3, 8), (30, 0, 0.7, 15)])
        a = fit_erm("cpt-abg", [s], MSE, FitConfig(resolution=8)).rule
        b = fit_erm("cpt-abg", [s], MSE, FitConfig(resolution=8)).rule
        assert a == b

    def test_fit_failure_when_everything_undefined(self):
        # losses only with eta search restricted to the undefined region cannot happen for EU;
        # alpha fixed at 0 for a gains lottery is undefined everywhere
        s = make_sample("A", [(10, 0, 0.5, 3)])
        with pytest.raises(FitError):
            fit_with_fixed("cpt-ab", [s], {"alpha": 0.0})

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            fit_erm("cpt-xyz", [make_sample("A", [(10, 0, 0.5, 3)])])


@pytest.fixture(scope="module")
def samples():
    rng = np.random.default_rng(42)
    out = []
    for i, (a, g) in enumerate([(0.7, 0.5), (0.9, 0.7), (0.8, 0.6)]):
        X = gains_lotteries(rng, 8)
        y = cpt_certainty_equivalent(a, 1, g, 1.0, X[:, 0], X[:, 1], X[:, 2]) + rng.normal(0, 0.5, 8)
        out.append(DomainSample(f"S{i}", X[:, 0], X[:, 1], X[:, 2], y))
    return out


class TestPartialFit:
    def test_no_transferred_parameters_profile_is_in_sample(self, samples):
        cfg = FitConfig(resolution=7)
        partial = fit_partial("cpt-g", (), samples[:1], MSE, cfg)
        assert partial.transferred == {}
        assert partial.objective == pytest.approx(fit_erm("cpt-g", samples[:1], MSE, cfg).objective, rel=1e-9)

    def test_transferred_values_in_box(self, samples):
        partial = fit_partial("cpt-dg", ("gamma",), samples[:2], MSE, FitConfig(resolution=5, restarts=1))
        assert set(partial.transferred) == {"gamma"}
        assert 0 <= partial.transferred["gamma"] <= 1

    def test_rejects_parameter_outside_family(self, samples):
        with pytest.raises(ValueError):
            fit_partial("cpt-g", ("alpha",), samples[:1])


class TestForest:
    def test_single_tree_reproduces_distinct_rows(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 20)
        y = rng.normal(size=20)
        rule = fit_random_forest([DomainSample("A", X[:, 0], X[:, 1], X[:, 2], y)], ForestConfig(n_trees=1, bootstrap=False))
        np.testing.assert_array_equal(rule.predict(X), y)

    def test_constant_outcomes(self):
        s = make_sample("A", [(10, 0, 0.5, 4), (20, 5, 0.1, 4), (7, 1, 0.9, 4)])
        rule = fit_random_forest([s], ForestConfig(n_trees=7, seed=3))
        np.testing.assert_array_equal(rule.predict([[1, 0, 0.2], [100, 50, 0.5]]), [4, 4])

    def test_one_point_predicts_it_everywhere(self):
        rule = fit_random_forest([make_sample("A", [(10, 0, 0.5, 3)])])
        pred = rule.predict([[20, 10, 0.1]])[0]
        assert pred == 3.0
        assert sample_error(rule, make_sample("B", [(20, 10, 0.1, 11)])) == 64.0

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 30)
        s = DomainSample("A", X[:, 0], X[:, 1], X[:, 2], rng.normal(size=30))
        a = fit_random_forest([s], ForestConfig(n_trees=10, seed=9)).predict(X)
        b = fit_random_forest([s], ForestConfig(n_trees=10, seed=9)).predict(X)
        c = fit_random_forest([s], ForestConfig(n_trees=10, seed=10)).predict(X)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_best_split_is_exhaustive(self):
        rng = np.random.default_rng(42)
        X = rng.integers(0, 5, (12, 3)).astype(float)
        y = rng.normal(size=12)
        j, thr, sse = best_split(X, y)
        for f in range(3):
            values = np.unique(X[:, f])
            for lo, hi in zip(values[:-1], values[1:]):
                left = X[:, f] <= (lo + hi) / 2
                cand = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
                assert sse <= cand + 1e-12

    def test_max_depth_zero_is_mean(self):
        tree = grow_tree(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([1.0, 3.0]), max_depth=0)
        assert tree.predict(np.array([[5.0, 0, 0]]))[0] == 2.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)


class TestKernelRidge:
    def test_single_point_halves_outcome(self):
        rule = fit_kernel_ridge([make_sample("A", [(10, 0, 0.5, 8)])])
        assert rule.predict([[10, 0, 0.5]])[0] == pytest.approx(4.0)

    def test_zero_ridge_interpolates(self):
        s = make_sample("A", [(1, 0, 0.5, 2), (2, 0, 0.5, -1)])
        rule = fit_kernel_ridge([s], KernelRidgeConfig(ridge=0.0))
        np.testing.assert_allclose(rule.predict(s.X), s.y, rtol=1e-8)

    def test_tiny_bandwidth_identical_rows(self):
        s = make_sample("A", [(1, 0, 0.5, 2), (1, 0, 0.5, 5)])
        rule = fit_kernel_ridge([s], KernelRidgeConfig(ridge=1.0, bandwidth=1e-12))
        assert rule.predict([[1, 0, 0.5]])[0] == pytest.approx((2 + 5) / 2 * (2 / 3))

    def test_singular_system(self):
        s = make_sample("A", [(1, 0, 0.5, 2), (1, 0, 0.5, 5)])
        with pytest.raises(LinearSolveError):
            fit_kernel_ridge([s], KernelRidgeConfig(ridge=0.0))

    def test_zero_ridge_zero_training_error(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 6, top=3.0)
        y = rng.normal(size=6)
        rule = fit_kernel_ridge([DomainSample("A", X[:, 0], X[:, 1], X[:, 2], y)], KernelRidgeConfig(ridge=0.0))
        np.testing.assert_allclose(rule.predict(X), y, rtol=1e-8, atol=1e-8)


@pytest.fixture(scope="module")
def domains():
    rng = np.random.default_rng(42)
    out = []
    for i in range(3):
        X = gains_lotteries(rng, 6)
        y = cpt_certainty_equivalent(0.8, 1, 0.6, 1.0, X[:, 0], X[:, 1], X[:, 2]) + rng.normal(0, 1, 6)
        out.append(DomainSample(f"S{i}", X[:, 0], X[:, 1], X[:, 2], y))
    return out


class TestDomainCv:
    def test_single_candidate_matches_direct_fit(self, domains):
        cfg = ForestRuleConfig(ForestConfig(n_trees=5, seed=1))
        chosen = fit_domain_cv([cfg], domains).rule
        direct = cfg.fit(domains)
        np.testing.assert_array_equal(chosen.predict(domains[0].X), direct.predict(domains[0].X))

    def test_dominating_candidate_selected(self, domains):
        good = EuConfig(FitConfig(resolution=9))
        bad = FixedConfig(1e6)
        result = fit_domain_cv([bad, good], domains)
        assert result.chosen == 1

    def test_matches_fold_recomputation(self, domains):
        cands = [ForestRuleConfig(ForestConfig(n_trees=5, seed=2)), KernelRidgeRuleConfig()]
        result = fit_domain_cv(cands, domains)
        scores = []
        for c in cands:
            errs = [sample_error(c.fit(domains[:i] + domains[i + 1 :]), domains[i]) for i in range(3)]
            scores.append(np.mean(errs))
        np.testing.assert_allclose(result.scores, scores, rtol=1e-12)
        assert result.chosen == int(np.argmin(scores))

    def test_failing_candidate_excluded(self, domains):
        result = fit_domain_cv([FailingConfig(), KernelRidgeRuleConfig()], domains)
        assert result.chosen == 1 and math.isnan(result.scores[0])
        with pytest.raises(FitError):
            fit_domain_cv([FailingConfig()], domains)

    def test_config_wrapper(self, domains):
        cfg = DomainCvConfig((KernelRidgeRuleConfig(),))
        assert cfg.fit(domains).kind == "kernel_ridge"


class TestSerialization:
    @pytest.mark.parametrize(
        "rule",
        [
            ConstantRule(1 / 3),
            EuRule(0.123456789012345678),
            CptRule(0.8, 0.9, 0.6, 1.2),
            CptRule(gamma=0.5, variant="g"),
        ],
    )
    def test_round_trip(self, rule):
        back = rule_from_text(rule.to_text())
        assert back == rule
        assert "|" in rule.to_text() and "\n" not in rule.to_text()

    def test_fitted_rules_round_trip_predictions(self):
        rng = np.random.default_rng(42)
        X = gains_lotteries(rng, 10)
        s = DomainSample("A", X[:, 0], X[:, 1], X[:, 2], rng.normal(size=10))
        for rule in (fit_random_forest([s], ForestConfig(n_trees=3)), fit_kernel_ridge([s])):
            back = rule_from_text(rule.to_text())
            np.testing.assert_array_equal(back.predict(X), rule.predict(X))


class TestParseRule:
    @pytest.mark.parametrize(
        "text, name",
        [
            ("eu", "eu"),
            ("cpt", "cpt-abdg"),
            ("cpt-dg", "cpt-dg"),
            ("rf", "forest"),
            ("forest:n_trees=5,seed=3", "forest"),
            ("kernel_ridge:ridge=0.5", "kernel_ridge"),
            ("domain-cv:eu+forest", "domain_cv(eu,forest)"),
        ],
    )
    def test_names(self, text, name):
        assert parse_rule(text).name == name

    def test_options_applied(self):
        assert parse_rule("forest:n_trees=5,seed=3").forest.n_trees == 5
        assert parse_rule("eu:resolution=7").fit_config.resolution == 7
        assert isinstance(parse_rule("cpt-g"), CptConfig)

    @pytest.mark.parametrize("text", ["nope", "forest:n_trees", "cpt-q"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_rule(text)
