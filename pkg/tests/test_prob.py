import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import kstest

from rbdokit.prob import (
    DistributionError,
    InvalidProbability,
    Marginal,
    NonPositiveSpread,
    RandomVector,
    StandardNormalMap,
)

RANDOM_FAMILIES = ["gaussian", "lognormal", "gumbel", "weibull"]


def quadrature_moments(m, theta=None):
    """Independent mean/std oracle: integrate x^k f(x) dx over the support."""
    lo = float(m.quantile(1e-12, theta))
    hi = float(m.quantile(1.0 - 1e-12, theta))
    mean = quad(lambda x: x * float(m.pdf(x, theta)), lo, hi, limit=400)[0]
    ex2 = quad(lambda x: x * x * float(m.pdf(x, theta)), lo, hi, limit=400)[0]
    return mean, np.sqrt(ex2 - mean * mean)


def fd_log_pdf_wrt_mean(family, mean, cov, x, std=None):
    """Central finite difference of log pdf w.r.t. the mean, step 1e-5*mean."""
    h = 1e-5 * mean
    kw = {"cov": cov} if std is None else {"std": std}
    lo = Marginal(family, mean=mean - h, **kw)
    hi = Marginal(family, mean=mean + h, **kw)
    return (hi.logpdf(x) - lo.logpdf(x)) / (2 * h)


class TestResolve:
    def test_gaussian_cov(self):
        mu, sg = Marginal("gaussian", mean=200, cov=0.05).resolve()
        assert mu == 200.0 and sg == pytest.approx(10.0, rel=1e-14)

    def test_lognormal_closed_form(self):
        lam, zeta = Marginal("lognormal", mean=10000, cov=0.15).resolve()
        assert zeta == pytest.approx(np.sqrt(np.log(1 + 0.15**2)), rel=1e-12)
        assert lam == pytest.approx(np.log(10000) - zeta**2 / 2, rel=1e-12)

    def test_deterministic_point_mass(self):
        m = Marginal("deterministic", mean=3000)
        assert m.resolve() == (3000.0,)
        assert m.quantile(0.01) == 3000.0 == m.quantile(0.99)

    @pytest.mark.parametrize("family,mean,cov", [
        ("lognormal", 10000, 0.15),
        ("gumbel", 100, 0.15),
        ("weibull", 7860, 0.10),
        ("gaussian", 200, 0.05),
    ])
    def test_moments_by_quadrature(self, family, mean, cov):
        m = Marginal(family, mean=mean, cov=cov)
        qm, qs = quadrature_moments(m)
        assert qm == pytest.approx(mean, rel=1e-8)
        assert qs == pytest.approx(cov * mean, rel=1e-6)

    def test_nonpositive_spread_rejected(self):
        with pytest.raises(NonPositiveSpread):
            Marginal("gaussian", mean=1.0, cov=-0.1)
        with pytest.raises(NonPositiveSpread):
            Marginal("lognormal", mean=1.0, std=0.0)


class TestPointwise:
    def test_standard_normal_quantile(self):
        m = Marginal("gaussian", mean=0.0, std=1.0)
        assert float(m.quantile(0.975)) == pytest.approx(1.959964, abs=1e-6)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_median_round_trip(self, family):
        m = Marginal(family, mean=50.0, cov=0.2)
        assert float(m.cdf(m.quantile(0.5))) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_quantile_cdf_round_trip(self, family):
        rng = np.random.default_rng(123)
        m = Marginal(family, mean=80.0, cov=0.12)
        p = rng.uniform(1e-6, 1 - 1e-6, 100)
        assert np.all(np.abs(m.cdf(m.quantile(p)) - p) < 1e-8)

    def test_quantile_rejects_bad_levels(self):
        m = Marginal("gaussian", mean=1.0, cov=0.1)
        for p in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(InvalidProbability):
                m.quantile(p)

    @pytest.mark.parametrize("family", ["lognormal", "weibull"])
    def test_outside_support_is_not_an_error(self, family):
        m = Marginal(family, mean=10.0, cov=0.3)
        assert float(m.pdf(-1.0)) == 0.0
        assert float(m.cdf(-1.0)) == 0.0

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_quantile_monotone_in_mean(self, family):
        # fixed c.o.v., moderate levels: quantiles move with the mean
        means = np.linspace(50, 500, 12)
        for p in (0.001, 0.2, 0.5, 0.8, 0.999):
            q = [float(Marginal(family, mean=m, cov=0.1).quantile(p)) for m in means]
            assert np.all(np.diff(q) > 0)


class TestScore:
    def test_gaussian_fixed_std_closed_form(self):
        m = Marginal("gaussian", mean=10.0, std=2.0)
        x = np.array([7.0, 10.0, 14.5])
        assert np.allclose(m.score_mean(x), (x - 10.0) / 4.0, rtol=1e-12)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_score_matches_fd_cov_mode(self, family):
        rng = np.random.default_rng(7)
        for _ in range(100):
            mean = rng.uniform(20, 400)
            cov = rng.uniform(0.03, 0.3)
            m = Marginal(family, mean=mean, cov=cov)
            x = float(m.quantile(rng.uniform(0.01, 0.99)))
            got = float(m.score_mean(x))
            ref = float(fd_log_pdf_wrt_mean(family, mean, cov, x))
            assert got == pytest.approx(ref, rel=1e-5, abs=1e-9)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_score_matches_fd_std_mode(self, family):
        rng = np.random.default_rng(8)
        for _ in range(25):
            mean = rng.uniform(50, 300)
            std = rng.uniform(0.02, 0.2) * mean
            m = Marginal(family, mean=mean, std=std)
            x = float(m.quantile(rng.uniform(0.05, 0.95)))
            got = float(m.score_mean(x))
            ref = float(fd_log_pdf_wrt_mean(family, mean, None, x, std=std))
            assert got == pytest.approx(ref, rel=1e-5, abs=1e-9)

    def test_vector_score_routes_to_design_components(self):
        rv = RandomVector(
            [
                Marginal("lognormal", cov=0.05, design=0, name="b"),
                Marginal("lognormal", mean=1e4, cov=0.15, name="E"),
                Marginal("gaussian", cov=0.01, design=1, name="h"),
                Marginal("deterministic", mean=3000.0, name="L"),
            ],
            n_design=2,
        )
        theta = np.array([200.0, 400.0])
        X = rv.sample(50, np.random.default_rng(0), theta)
        sc = rv.score(X, theta)
        assert sc.shape == (50, 2)
        b_m = Marginal("lognormal", mean=200.0, cov=0.05)
        h_m = Marginal("gaussian", mean=400.0, cov=0.01)
        assert np.allclose(sc[:, 0], b_m.score_mean(X[:, 0]), rtol=1e-12)
        assert np.allclose(sc[:, 1], h_m.score_mean(X[:, 2]), rtol=1e-12)

    def test_bound_deterministic_rejects_score(self):
        rv = RandomVector(
            [
                Marginal("gaussian", cov=0.05, design=0),
                Marginal("deterministic", design=1, name="fixed"),
            ],
            n_design=2,
        )
        with pytest.raises(DistributionError, match="deterministic"):
            rv.score(np.array([[1.0, 2.0]]), np.array([1.0, 2.0]))


class TestSampling:
    def test_deterministic_copies(self):
        m = Marginal("deterministic", mean=3000.0)
        assert np.all(m.sample(5, np.random.default_rng(0)) == 3000.0)

    def test_gaussian_clt_bound(self):
        m = Marginal("gaussian", mean=200.0, cov=0.05)
        x = m.sample(100_000, np.random.default_rng(11))
        assert abs(x.mean() - 200.0) < 5 * 10.0 / np.sqrt(100_000)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_sample_mean_within_five_se(self, family):
        m = Marginal(family, mean=120.0, cov=0.2)
        x = m.sample(20_000, np.random.default_rng(3))
        assert abs(x.mean() - 120.0) < 5 * 24.0 / np.sqrt(20_000)

    def test_fixed_seed_reproducible(self):
        rv = RandomVector([Marginal(f, mean=10.0, cov=0.1) for f in RANDOM_FAMILIES])
        a = rv.sample(1000, np.random.default_rng(42))
        b = rv.sample(1000, np.random.default_rng(42))
        assert np.array_equal(a, b)


class TestStandardNormalMap:
    def _rv(self):
        return RandomVector(
            [
                Marginal("lognormal", mean=1e4, cov=0.15, name="E"),
                Marginal("gumbel", mean=100.0, cov=0.15, name="P"),
                Marginal("deterministic", mean=3000.0, name="L"),
                Marginal("weibull", mean=7860.0, cov=0.10, name="rho"),
            ]
        )

    def test_round_trip(self):
        rv = self._rv()
        X = rv.sample(500, np.random.default_rng(5))
        T = StandardNormalMap(rv)
        back = T.inverse(T.forward(X))
        assert np.allclose(back, X, rtol=1e-10)

    def test_quantile_maps_to_normal_quantile(self):
        rv = self._rv()
        from rbdokit.util import norm_ppf

        for p in (0.01, 0.3, 0.9):
            X = rv.embed(
                np.array([[float(rv.marginals[i].quantile(p)) for i in rv.random_idx]])
            )
            U = StandardNormalMap(rv).forward(X)
            assert np.allclose(U, norm_ppf(p), atol=1e-9)

    @pytest.mark.parametrize("family", RANDOM_FAMILIES)
    def test_forward_is_standard_normal_ks(self, family):
        m = Marginal(family, mean=60.0, cov=0.18)
        rv = RandomVector([m])
        X = rv.sample(100_000, np.random.default_rng(17))
        U = rv.x_to_u(X).ravel()
        assert kstest(U, "norm").pvalue > 1e-3
