import numpy as np
import pytest

from rbdokit.prob import Marginal, RandomVector
from rbdokit.reliability import (
    LimitState,
    SubsetConfig,
    crude_mc,
    generalized_beta,
    subset_simulation,
    surrogate_cascade,
)
from rbdokit.util import norm_cdf


def std_normal_rv(n=2):
    return RandomVector([Marginal("gaussian", mean=0.0, std=1.0) for _ in range(n)])


def linear_state(beta, comp=0):
    return LimitState(lambda X: beta - X[:, comp], name=f"lin{beta}")


class TestGeneralizedBeta:
    def test_half(self):
        assert generalized_beta(0.5) == 0.0

    def test_inverse_normal(self):
        assert generalized_beta(1.3499e-3) == pytest.approx(3.0, abs=1e-3)

    def test_saturation(self):
        assert generalized_beta(0.0) == 8.0
        assert generalized_beta(1.0) == -8.0


class TestCrudeMC:
    def test_linear_beta3(self):
        rv = std_normal_rv()
        res = crude_mc(linear_state(3.0), rv, None, 1_000_000,
                       np.random.default_rng(1), with_grad=False)
        exact = norm_cdf(-3.0)
        se = np.sqrt(exact * (1 - exact) / 1e6)
        assert abs(res.p_f - exact) < 3 * se

    def test_all_safe_flag(self):
        rv = std_normal_rv()
        res = crude_mc(LimitState(lambda X: np.ones(len(X))), rv, None, 1000,
                       np.random.default_rng(0))
        assert res.p_f == 0.0 and res.degenerate == "all_safe" and res.beta == 8.0

    def test_all_fail_flag(self):
        rv = std_normal_rv()
        res = crude_mc(LimitState(lambda X: -np.ones(len(X))), rv, None, 1000,
                       np.random.default_rng(0))
        assert res.p_f == 1.0 and res.degenerate == "all_fail" and res.beta == -8.0

    def test_gradient_matches_analytic_normal_tail(self):
        # g(x) = c - x with X ~ N(mu, sigma fixed): dPf/dmu = phi((c-mu)/sigma)/sigma
        mu, sigma, c = 10.0, 2.0, 16.0
        rv = RandomVector([Marginal("gaussian", std=sigma, design=0)], n_design=1)
        theta = np.array([mu])
        res = crude_mc(LimitState(lambda X: c - X[:, 0]), rv, theta, 1_000_000,
                       np.random.default_rng(3))
        z = (c - mu) / sigma
        exact = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi) / sigma
        # sample standard error of the indicator-weighted score
        X = rv.u_to_x_full(np.random.default_rng(3).standard_normal((1_000_000, 1)), theta)
        term = (X[:, 0] >= c) * rv.score(X, theta)[:, 0]
        se = term.std() / 1000.0
        assert abs(res.grad_p[0] - exact) < 3 * se

    def test_desk_scale_unbiasedness(self):
        rv = std_normal_rv(1)
        g = linear_state(2.0)
        runs = [
            crude_mc(g, rv, None, 10_000, np.random.default_rng(1000 + i),
                     with_grad=False).p_f
            for i in range(200)
        ]
        exact = norm_cdf(-2.0)
        combined_se = np.sqrt(exact * (1 - exact) / (200 * 10_000))
        assert abs(np.mean(runs) - exact) < 2 * combined_se


class TestSubsetSimulation:
    def test_beta4_within_factor_two_and_calibrated(self):
        rv = std_normal_rv()
        exact = norm_cdf(-4.0)
        cfg = SubsetConfig()
        hits, estimates = 0, []
        for seed in range(10):
            res = subset_simulation(linear_state(4.0), rv, None, cfg,
                                    np.random.default_rng(seed), with_grad=False)
            estimates.append(res.p_f)
            assert 0.5 * exact < res.p_f < 2.0 * exact
            if abs(res.p_f - exact) <= 3 * res.cov * res.p_f:
                hits += 1
        assert hits >= 9
        med = np.median(estimates)
        assert 0.7 * exact < med < 1.4 * exact

    def test_matches_crude_mc_at_beta1(self):
        rv = std_normal_rv()
        g = linear_state(1.0)
        sub = subset_simulation(g, rv, None, SubsetConfig(),
                                np.random.default_rng(5), with_grad=False)
        mc = crude_mc(g, rv, None, 1_000_000, np.random.default_rng(6), with_grad=False)
        se = np.sqrt((sub.cov * sub.p_f) ** 2 + (mc.cov * mc.p_f) ** 2)
        assert abs(sub.p_f - mc.p_f) < 3 * se

    def test_moderate_probability_single_level(self):
        rv = std_normal_rv()
        res = subset_simulation(linear_state(0.52), rv, None, SubsetConfig(),
                                np.random.default_rng(2), with_grad=False)
        assert res.n_levels == 1
        assert res.thresholds == [0.0]
        exact = norm_cdf(-0.52)
        assert abs(res.p_f - exact) < 3 * res.cov * res.p_f

    def test_chain_samples_respect_thresholds(self):
        rv = std_normal_rv()
        res = subset_simulation(linear_state(3.0), rv, None, SubsetConfig(),
                                np.random.default_rng(7), with_grad=False)
        assert res.n_levels > 1
        assert all(over <= 0.0 for over in res.diag["level_overshoot"])

    @pytest.mark.parametrize("family,mean,cov", [
        ("gaussian", 100.0, 0.1),
        ("lognormal", 100.0, 0.1),
        ("gumbel", 100.0, 0.1),
    ])
    def test_sensitivity_matches_fd_crn(self, family, mean, cov):
        # p_f ~ 1e-3 threshold; CRN central differences as the oracle
        m = Marginal(family, cov=cov, design=0)
        rv = RandomVector([m], n_design=1)
        c = float(Marginal(family, mean=mean, cov=cov).quantile(1.0 - 1.2e-3))
        g = LimitState(lambda X: c - X[:, 0])
        cfg = SubsetConfig(n_per_level=40_000)
        res = subset_simulation(g, rv, np.array([mean]), cfg,
                                np.random.default_rng(11))
        h = 0.01 * mean
        ps = [
            subset_simulation(g, rv, np.array([mean + s * h]), cfg,
                              np.random.default_rng(11), with_grad=False).p_f
            for s in (+1, -1)
        ]
        fd = (ps[0] - ps[1]) / (2 * h)
        assert res.grad_p[0] == pytest.approx(fd, rel=0.05)


class TestCascadeNesting:
    class _StubModel:
        """mu = 3 - x0, constant predictive sd."""

        def __init__(self, sd):
            self.sd = sd

        def predict(self, X):
            X = np.atleast_2d(X)
            return 3.0 - X[:, 0], np.full(X.shape[0], self.sd)

    def test_exact_ordering_on_shared_streams(self):
        rv = std_normal_rv(2)
        k = 1.96
        for sd in (0.05, 0.3, 1.0):
            res = surrogate_cascade(self._StubModel(sd), rv, None, k,
                                    SubsetConfig(n_per_level=4000),
                                    np.random.default_rng(13))
            p_minus, p_zero, p_plus = [r.p_f for r in res]
            assert p_plus <= p_zero <= p_minus

    def test_zero_sd_collapses_bracket(self):
        rv = std_normal_rv(2)
        res = surrogate_cascade(self._StubModel(0.0), rv, None, 1.96,
                                SubsetConfig(n_per_level=4000),
                                np.random.default_rng(14))
        assert res[0].p_f == res[1].p_f == res[2].p_f

    def test_k_zero_collapses_bracket(self):
        rv = std_normal_rv(2)
        res = surrogate_cascade(self._StubModel(0.5), rv, None, 0.0,
                                SubsetConfig(n_per_level=4000),
                                np.random.default_rng(15))
        assert res[0].p_f == res[1].p_f == res[2].p_f

    def test_bracket_contains_analytic_value_when_tight(self):
        rv = std_normal_rv(2)
        res = surrogate_cascade(self._StubModel(0.02), rv, None, 1.96,
                                SubsetConfig(), np.random.default_rng(16))
        exact = norm_cdf(-3.0)
        lo = res[2].p_f - 3 * res[2].cov * res[2].p_f
        hi = res[0].p_f + 3 * res[0].cov * res[0].p_f
        assert lo <= exact <= hi
