import numpy as np
import pytest
from scipy import linalg

from rbdokit.kriging import (
    CorrelationModel,
    DesignOfExperiments,
    DuplicatePoint,
    KrigingModel,
    RankDeficientTrend,
    _basis_matrix,
    _profile_nll,
    correlation,
    fit,
)


def random_doe(rng, m, n, fn=None):
    X = rng.uniform(-1.0, 2.0, size=(m, n))
    if fn is None:
        G = rng.normal(size=m)
    else:
        G = fn(X)
    return DesignOfExperiments(X, G)


class TestCorrelation:
    def test_zero_distance(self):
        c = CorrelationModel(lengths=[1.0, 2.0], s=2.0)
        assert correlation([0.0, 0.0], c) == 1.0

    def test_1d_substitution(self):
        c = CorrelationModel(lengths=[1.0], s=2.0)
        assert correlation([1.0], c) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_2d_substitution(self):
        c = CorrelationModel(lengths=[1.0, 2.0], s=2.0)
        assert correlation([1.0, 2.0], c) == pytest.approx(np.exp(-2.0), rel=1e-12)

    def test_bad_exponent_rejected(self):
        with pytest.raises(ValueError):
            CorrelationModel(lengths=[1.0], s=2.5)


class TestDesignOfExperiments:
    def test_duplicate_rejected(self):
        with pytest.raises(DuplicatePoint):
            DesignOfExperiments([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]], [1, 2, 2])

    def test_append_and_duplicate_mask(self):
        doe = DesignOfExperiments([[0.0], [1.0]], [0.0, 1.0])
        assert list(doe.is_duplicate([[0.0], [0.5]])) == [True, False]
        doe.append([[0.5]], [0.25])
        assert doe.m == 3
        with pytest.raises(DuplicatePoint):
            doe.append([[1.0]], [1.0])

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        doe = random_doe(rng, 12, 3)
        path = tmp_path / "doe.csv"
        doe.save(path, names=["a", "b", "c"], echo={"seed": 1})
        back = DesignOfExperiments.load(path)
        assert np.array_equal(back.X, doe.X)
        assert np.array_equal(back.G, doe.G)


class TestFit:
    def test_interpolates_three_points(self):
        doe = DesignOfExperiments([[0.0], [1.0], [2.0]], [0.0, 1.0, 4.0])
        model = fit(doe, basis="constant")
        mu, sd = model.predict(doe.X)
        assert np.allclose(mu, doe.G, rtol=1e-6)
        assert np.all(sd == 0.0)

    def test_m_equals_p_rejected(self):
        doe = DesignOfExperiments([[0.5]], [1.0])
        with pytest.raises(RankDeficientTrend):
            fit(doe, basis="constant")

    def test_mle_beats_length_grid(self):
        # DOE drawn from a known GP with length 0.5: the fitted length must
        # reach at least the best likelihood over a dense 1-D grid.
        rng = np.random.default_rng(21)
        X = np.sort(rng.uniform(0.0, 3.0, size=20))[:, None]
        true = CorrelationModel(lengths=[0.5], s=2.0)
        D = np.abs(X - X.T)
        R = np.exp(-((D / 0.5) ** 2))
        L = linalg.cholesky(R + 1e-12 * np.eye(20), lower=True)
        G = 1.5 + L @ rng.normal(size=20)
        doe = DesignOfExperiments(X, G)
        model = fit(doe, basis="constant", n_starts=5)

        lo, extent = X.min(), X.max() - X.min()
        Z = (X - lo) / extent
        F = _basis_matrix(Z, "constant")
        grid = np.geomspace(1e-2, 10.0, 50)
        grid_nll = [_profile_nll(np.log([l]), Z, F, G, 2.0, 20) for l in grid]
        assert model.fit_info["nll"] <= min(grid_nll) + 1e-6 * (1 + abs(min(grid_nll)))

    def test_degenerate_dimension_ignored(self):
        # one constant input column: fitted model still interpolates
        rng = np.random.default_rng(3)
        X = np.hstack([rng.uniform(size=(8, 1)), np.full((8, 1), 7.0)])
        doe = DesignOfExperiments(X, rng.normal(size=8))
        model = fit(doe)
        mu, sd = model.predict(doe.X)
        assert np.allclose(mu, doe.G, rtol=1e-6)
        assert model.corr.lengths[1] == np.inf


class TestPredict:
    def test_doe_points_reproduced(self):
        rng = np.random.default_rng(5)
        doe = random_doe(rng, 25, 2, fn=lambda X: X[:, 0] ** 2 - X[:, 1])
        model = fit(doe)
        mu, sd = model.predict(doe.X)
        assert np.all(np.abs(mu - doe.G) <= 1e-6 * np.abs(doe.G) + 1e-12)
        assert np.all(np.abs(sd) <= 1e-8)

    def test_single_point_hand_algebra(self):
        # m = 1, constant trend, beta = y1: far from the point, r -> 0,
        # u -> -1, so mu -> y1 and var -> 2 * sigma_Y^2
        doe = DesignOfExperiments([[0.0]], [3.5])
        internals = {
            "lo": np.array([0.0]),
            "extent": np.array([1.0]),
            "Z": np.array([[0.0]]),
            "L": np.array([[1.0]]),
            "LinvF": np.array([[1.0]]),
            "Lg": np.array([[1.0]]),
            "alpha": np.array([0.0]),
            "lengths": np.array([1.0]),
            "basis_cols": np.array([0]),
            "Zl": np.array([[0.0]]),
            "zl_norm2": np.array([0.0]),
            "z_norm2": np.array([0.0]),
            "jitter": 0.0,
        }
        model = KrigingModel(
            doe, "constant", CorrelationModel(lengths=[1.0]), np.array([3.5]),
            2.0, internals, {},
        )
        mu, sd = model.predict(np.array([50.0]))
        assert mu == pytest.approx(3.5, rel=1e-12)
        assert sd == pytest.approx(np.sqrt(2.0 * 2.0), rel=1e-9)

    def test_batch_equals_pointwise_bitwise(self):
        rng = np.random.default_rng(9)
        doe = random_doe(rng, 15, 3, fn=lambda X: np.sin(X).sum(axis=1))
        model = fit(doe, basis="linear")
        Xq = rng.uniform(-1.0, 2.0, size=(1000, 3))
        mu_b, sd_b = model.predict(Xq)
        for i in range(0, 1000, 97):
            mu_i, sd_i = model.predict(Xq[i])
            assert mu_i == mu_b[i]
            assert sd_i == sd_b[i]

    def test_variance_nonnegative_everywhere(self):
        rng = np.random.default_rng(13)
        doe = random_doe(rng, 30, 2)
        model = fit(doe)
        Xq = rng.uniform(-3.0, 4.0, size=(10_000, 2))
        _, sd = model.predict(Xq)
        assert np.all(sd >= 0.0)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(17)
        X = rng.uniform(size=(12, 2))
        G = rng.normal(size=12)
        lengths = (0.3, 0.7)
        m0 = fit(DesignOfExperiments(X, G), length_bounds=lengths)
        m1 = fit(DesignOfExperiments(X, G + 5.0), length_bounds=lengths)
        Xq = rng.uniform(size=(50, 2))
        mu0, sd0 = m0.predict(Xq)
        mu1, sd1 = m1.predict(Xq)
        assert np.allclose(mu1, mu0 + 5.0, atol=1e-8)
        assert np.allclose(sd1, sd0, atol=1e-8)


class TestProperties:
    @pytest.mark.parametrize("n", [1, 2, 4, 6])
    def test_interpolation_random_does(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(6):
            m = int(rng.integers(3, 51))
            doe = random_doe(rng, m, n)
            model = fit(doe, n_starts=3)
            mu, sd = model.predict(doe.X)
            assert np.all(np.abs(mu - doe.G) <= 1e-6 * np.abs(doe.G) + 1e-12)
            assert np.all(sd <= 1e-8)

    def test_leave_one_out_calibration_smoke(self):
        # smooth 1-D target, 10 points: held-out point inside +-3 sigma in
        # at least 9 of 10 folds (not a strict bound, a sanity check)
        rng = np.random.default_rng(2024)
        X = np.linspace(0.0, 1.0, 10)[:, None] + rng.normal(0, 0.01, (10, 1))
        G = np.sin(3.0 * X[:, 0]) + 0.3 * X[:, 0]
        hits = 0
        for i in range(10):
            keep = np.arange(10) != i
            model = fit(DesignOfExperiments(X[keep], G[keep]), n_starts=3)
            mu, sd = model.predict(X[i])
            if abs(mu - G[i]) <= 3.0 * sd + 1e-9:
                hits += 1
        assert hits >= 9
