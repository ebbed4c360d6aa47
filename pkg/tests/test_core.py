import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import belief_divide as bd
from belief_divide.core import LatentClass

from oracles import grid_posterior_moments, logistic_highprec


def young_nonwhite_profile() -> bd.UserProfile:
    # 25-year-old, female, non-white, lower education, outside IT, class 2
    return bd.UserProfile(high_edu=False, age=25, male=False, white=False, it=False,
                          latent_class=LatentClass.CLASS2)


class TestRepresentativeUtility:
    def test_fast_learner_value(self, params, fast_learner):
        v = bd.representative_utility(fast_learner, params)
        # alpha0 + exp(log_delta_alpha0) + alpha1 + 28*alpha2 + alpha3 + alpha4 + alpha5
        expected = (
            -1.560 + math.exp(0.976) - 0.468 + 28 * (-0.021) + 0.562 - 0.208 + 0.507
        )
        assert v == pytest.approx(expected, abs=1e-12)
        assert v == pytest.approx(0.899, abs=1e-3)

    def test_initial_underestimate_for_young_nonwhite_user(self, params):
        v = bd.representative_utility(young_nonwhite_profile(), params)
        assert params.v0 - v == pytest.approx(-0.569, abs=1e-3)

    def test_intercept_only(self, params):
        profile = bd.UserProfile(high_edu=False, age=0, male=False, white=False, it=False,
                                 latent_class=LatentClass.CLASS1)
        assert bd.representative_utility(profile, params) == pytest.approx(-1.560, abs=1e-12)

    def test_requires_latent_class(self, params):
        profile = bd.UserProfile(high_edu=True, age=30, male=True, white=True, it=True)
        with pytest.raises(ValueError, match="latent_class"):
            bd.representative_utility(profile, params)

    def test_linear_in_coefficients(self, params, fast_learner):
        # doubling a coefficient exactly doubles its marginal contribution
        base = replace(params, alpha3=0.0)
        v0 = bd.representative_utility(fast_learner, base)
        v1 = bd.representative_utility(fast_learner, replace(base, alpha3=0.25))
        v2 = bd.representative_utility(fast_learner, replace(base, alpha3=0.50))
        assert v1 - v0 == pytest.approx(0.25, abs=1e-15)
        assert v2 - v0 == pytest.approx(2 * (v1 - v0), abs=1e-15)


class TestSignalVariance:
    def test_class1_intercept_only(self, params):
        profile = bd.UserProfile(high_edu=False, age=0, male=False, white=False, it=False,
                                 latent_class=LatentClass.CLASS1)
        assert bd.signal_variance(profile, params) == pytest.approx(math.exp(4.900), rel=1e-12)

    def test_fast_learner(self, params, fast_learner):
        var = bd.signal_variance(fast_learner, params)
        exponent = 4.900 + 2.031 - 0.256 + 28 * 0.029 - 0.522 - 0.481 - 0.456
        assert exponent == pytest.approx(6.028, abs=1e-12)
        assert var == pytest.approx(math.exp(exponent), rel=1e-12)
        assert var == pytest.approx(414.9, abs=0.1)

    def test_slow_learner(self, params, slow_learner):
        var = bd.signal_variance(slow_learner, params)
        assert var == pytest.approx(math.exp(8.323), rel=1e-12)
        assert var == pytest.approx(4117.5, abs=0.1)

    def test_overflow_reported(self, params, fast_learner):
        with pytest.raises(OverflowError):
            bd.signal_variance(fast_learner, replace(params, gamma0=2000.0))

    def test_log_linear_exponent_identity(self, params, slow_learner):
        # doubling gamma2 exactly doubles its contribution to the log variance
        v1 = math.log(bd.signal_variance(slow_learner, replace(params, gamma2=0.0)))
        v2 = math.log(bd.signal_variance(slow_learner, replace(params, gamma2=0.015)))
        v3 = math.log(bd.signal_variance(slow_learner, replace(params, gamma2=0.030)))
        assert v3 - v1 == pytest.approx(2 * (v2 - v1), rel=1e-9)


class TestClass2Probability:
    def test_estimated_value(self, params):
        assert bd.class2_probability(params) == pytest.approx(
            logistic_highprec(-0.384), abs=1e-12
        )
        assert bd.class2_probability(params) == pytest.approx(0.4052, abs=1e-4)

    def test_symmetry_at_zero(self, params):
        assert bd.class2_probability(replace(params, lam=0.0)) == 0.5

    def test_saturation(self, params):
        assert bd.class2_probability(replace(params, lam=40.0)) == pytest.approx(1.0, abs=1e-15)
        assert 0.0 < bd.class2_probability(replace(params, lam=-40.0)) < 1e-15


class TestInitialBelief:
    def test_fixed_hyperparameters(self, params):
        belief = bd.initial_belief(params)
        assert belief.mean == 0.0
        assert belief.variance == pytest.approx(54.598, abs=1e-3)
        assert belief.variance == math.exp(4.0)

    def test_independent_of_free_parameters(self, params):
        other = replace(params, c=9.9, alpha0=3.3, gamma0=-2.0, lam=5.0)
        assert bd.initial_belief(other) == bd.initial_belief(params)

    def test_overridden_prior_variance(self, params):
        belief = bd.initial_belief(replace(params, log_sigma0_sq=0.0))
        assert belief == bd.Belief(mean=0.0, variance=1.0)


class TestUpdateBelief:
    def test_no_signal_identity(self):
        prior = bd.Belief(mean=0.3, variance=12.0)
        assert bd.update_belief(prior, 0.0, 0, 0.0, 0, 100.0, 5.0) == prior

    def test_single_usage_signal(self):
        prior = bd.Belief(mean=0.0, variance=54.598)
        post = bd.update_belief(prior, 1.0, 1, 0.0, 0, 134.2898, 4.842)
        precision = 1 / 54.598 + 1 / 134.2898
        assert post.variance == pytest.approx(1 / precision, rel=1e-12)
        assert post.mean == pytest.approx((1.0 / 134.2898) / precision, rel=1e-12)
        assert post.mean == pytest.approx(0.28905, abs=1e-4)
        assert post.variance == pytest.approx(38.817, abs=1e-3)

    def test_two_news_signals(self):
        prior = bd.Belief(mean=0.0, variance=54.598)
        post = bd.update_belief(prior, 0.0, 0, 2.0, 2, 134.2898, 4.842)
        assert post.mean == pytest.approx(0.95754, abs=1e-5)
        assert post.variance == pytest.approx(2.31821, abs=1e-5)

    def test_rejects_negative_counts(self):
        prior = bd.Belief(0.0, 1.0)
        with pytest.raises(ValueError):
            bd.update_belief(prior, 0.0, -1, 0.0, 0, 1.0, 1.0)
        with pytest.raises(ValueError):
            bd.update_belief(prior, 0.0, 0, 0.0, -2, 1.0, 1.0)

    def test_rejects_non_finite_sums(self):
        prior = bd.Belief(0.0, 1.0)
        with pytest.raises(ValueError):
            bd.update_belief(prior, math.nan, 1, 0.0, 0, 1.0, 1.0)
        with pytest.raises(ValueError):
            bd.update_belief(prior, 0.0, 0, math.inf, 1, 1.0, 1.0)

    def test_degenerate_prior_is_immutable(self):
        prior = bd.Belief(mean=-0.7, variance=0.0)
        assert bd.update_belief(prior, 5.0, 3, 1.0, 1, 2.0, 2.0) == prior

    @given(
        mean=st.floats(-5, 5),
        variance=st.floats(0.1, 100),
        usage=st.integers(0, 5),
        news=st.integers(0, 5),
        s_sq=st.floats(0.1, 1000),
        n_sq=st.floats(0.1, 1000),
        signal_scale=st.floats(-3, 3),
    )
    @settings(max_examples=80, deadline=None)
    def test_posterior_variance_shrinks(self, mean, variance, usage, news, s_sq, n_sq, signal_scale):
        prior = bd.Belief(mean, variance)
        post = bd.update_belief(prior, signal_scale * usage, usage, signal_scale * news, news, s_sq, n_sq)
        if usage + news >= 1:
            assert post.variance < prior.variance
        else:
            assert post == prior

    @given(
        mean=st.floats(-4, 4),
        variance=st.floats(0.5, 60),
        u1=st.integers(0, 4),
        u2=st.integers(0, 4),
        n1=st.integers(0, 3),
        n2=st.integers(0, 3),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_precision_additivity(self, mean, variance, u1, u2, n1, n2, seed):
        # two disjoint batches compose to one batched update
        gen = np.random.default_rng(seed)
        s_sq, n_sq = 40.0, 5.0
        su1, su2 = gen.normal(size=2) * u1, gen.normal(size=2).sum() * u2
        sn1, sn2 = gen.normal() * n1, gen.normal() * n2
        prior = bd.Belief(mean, variance)
        two_step = bd.update_belief(
            bd.update_belief(prior, float(su1.sum()), u1, float(sn1), n1, s_sq, n_sq),
            float(su2), u2, float(sn2), n2, s_sq, n_sq,
        )
        one_step = bd.update_belief(
            prior, float(su1.sum() + su2), u1 + u2, float(sn1 + sn2), n1 + n2, s_sq, n_sq
        )
        assert two_step.mean == pytest.approx(one_step.mean, rel=1e-12, abs=1e-12)
        assert two_step.variance == pytest.approx(one_step.variance, rel=1e-12)

    def test_matches_grid_posterior(self, rng):
        # brute-force discretized posterior agrees within 1e-4
        for _ in range(10):
            prior_mean = float(rng.uniform(-3, 3))
            prior_var = float(rng.uniform(1, 60))
            n_signals = int(rng.integers(1, 6))
            signals = [
                (float(rng.normal(prior_mean, math.sqrt(prior_var) / 2)),
                 float(prior_var * rng.uniform(0.2, 5.0)))
                for _ in range(n_signals)
            ]
            usage = signals[: n_signals // 2]
            news = signals[n_signals // 2 :]
            # update_belief takes homogeneous variances per source; emulate
            # arbitrary per-signal variances by chaining single-signal updates
            belief = bd.Belief(prior_mean, prior_var)
            for value, variance in usage + news:
                belief = bd.update_belief(belief, value, 1, 0.0, 0, variance, 1.0)
            grid_mean, grid_var = grid_posterior_moments(prior_mean, prior_var, signals)
            assert belief.mean == pytest.approx(grid_mean, abs=1e-4)
            assert belief.variance == pytest.approx(grid_var, abs=1e-4)


class TestChoiceProbability:
    def test_prior_belief_value(self):
        p = bd.choice_probability(0.0, 1.411)
        assert p == pytest.approx(logistic_highprec(-1.411), abs=1e-12)
        assert p == pytest.approx(0.19608, abs=1e-5)

    def test_equal_utilities(self):
        assert bd.choice_probability(2.37, 2.37) == 0.5

    def test_fast_learner_full_information_value(self):
        p = bd.choice_probability(0.8988, 1.411)
        assert p == pytest.approx(logistic_highprec(-0.5122), abs=1e-12)
        assert p == pytest.approx(0.3746779, abs=1e-5)

    @given(m=st.floats(-200, 200), c=st.floats(-200, 200))
    @settings(max_examples=300, deadline=None)
    def test_symmetry(self, m, c):
        assert bd.choice_probability(m, c) + bd.choice_probability(c, m) == pytest.approx(
            1.0, abs=1e-12
        )

    @given(m=st.floats(-20, 20), c=st.floats(-20, 20), k=st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_common_shift_invariance(self, m, c, k):
        assert bd.choice_probability(m + k, c + k) == pytest.approx(
            bd.choice_probability(m, c), abs=1e-12
        )

    def test_monotonicity(self):
        grid = np.linspace(-5, 5, 41)
        in_m = [bd.choice_probability(m, 0.7) for m in grid]
        in_c = [bd.choice_probability(0.7, c) for c in grid]
        assert np.all(np.diff(in_m) > 0)
        assert np.all(np.diff(in_c) < 0)

    def test_extreme_inputs_do_not_overflow(self):
        assert bd.choice_probability(1000.0, -1000.0) == 1.0
        assert bd.choice_probability(-1000.0, 1000.0) == 0.0
        with pytest.raises(ValueError):
            bd.choice_probability(math.inf, 0.0)


class TestDayLogLikelihood:
    def test_even_split_at_equal_utilities(self):
        assert bd.day_log_likelihood(1.0, 1.0, 2, 1) == pytest.approx(math.log(0.25), abs=1e-12)

    def test_single_rejection_day(self):
        value = bd.day_log_likelihood(0.0, 1.411, 1, 0)
        expected = math.log(1.0 - logistic_highprec(-1.411))
        assert value == pytest.approx(expected, abs=1e-10)
        assert value == pytest.approx(-0.21825, abs=1e-4)

    def test_no_opportunities(self):
        assert bd.day_log_likelihood(3.0, -1.0, 0, 0) == 0.0

    def test_rejects_invalid_counts(self):
        with pytest.raises(ValueError):
            bd.day_log_likelihood(0.0, 0.0, 2, 3)
        with pytest.raises(ValueError):
            bd.day_log_likelihood(0.0, 0.0, -1, 0)

    @given(
        # |m - c| kept moderate: the direct log1p(-p) oracle loses precision
        # once p approaches 1, which is the case the softplus form exists for
        m=st.floats(-6, 6),
        c=st.floats(-6, 6),
        w_total=st.integers(1, 50),
        data=st.data(),
    )
    @settings(max_examples=150, deadline=None)
    def test_matches_direct_formula(self, m, c, w_total, data):
        w_gpt = data.draw(st.integers(0, w_total))
        p = bd.choice_probability(m, c)
        direct = w_gpt * math.log(p) + (w_total - w_gpt) * math.log1p(-p)
        assert bd.day_log_likelihood(m, c, w_total, w_gpt) == pytest.approx(
            direct, rel=1e-9, abs=1e-8
        )
