"""Parametric marginals and independent random vectors with design hyperparameters.

Design variables enter exclusively as hyperparameters of the marginal
distributions (the mean of a marginal may be tied to one design component,
with the spread given either as a fixed coefficient of variation or as a
fixed standard deviation).  The module provides moment-to-parameter
resolution, densities, quantiles, sampling, the isoprobabilistic map to
standard normal space and the analytic score functions d log f / d theta
used by the sensitivity estimators.
"""

from functools import lru_cache

import numpy as np
from scipy.optimize import bisect
from scipy.special import digamma, gamma as gamma_fn

from .util import norm_cdf, norm_pdf, norm_ppf

EULER_GAMMA = 0.5772156649015329
GUMBEL_SCALE_FACTOR = np.sqrt(6.0) / np.pi

FAMILIES = ("gaussian", "lognormal", "gumbel", "weibull", "deterministic")


class DistributionError(ValueError):
    """Invalid distribution specification or evaluation."""


class NonPositiveSpread(DistributionError):
    """Random marginal declared with c.o.v. or std <= 0."""


class InvalidMoment(DistributionError):
    """The family cannot attain the requested (mean, spread) pair."""


class InvalidProbability(DistributionError):
    """Quantile level outside the open interval (0, 1)."""


class ZeroDensity(DistributionError):
    """Score requested at a point with zero joint density."""


def _weibull_cov(k):
    g1 = gamma_fn(1.0 + 1.0 / k)
    g2 = gamma_fn(1.0 + 2.0 / k)
    return np.sqrt(g2 / (g1 * g1) - 1.0)


@lru_cache(maxsize=256)
def _weibull_shape_from_cov(cov):
    """Shape parameter whose c.o.v. equals `cov`, bisected to 1e-12."""
    lo, hi = 0.05, 200.0
    if not (_weibull_cov(hi) <= cov <= _weibull_cov(lo)):
        raise InvalidMoment(f"weibull cannot attain c.o.v. {cov}")
    return bisect(lambda k: _weibull_cov(k) - cov, lo, hi, xtol=1e-12)


def _weibull_dk_dcov(k):
    # Implicit differentiation of cov(k)^2 = Gamma(1+2/k)/Gamma(1+1/k)^2 - 1.
    c = _weibull_cov(k)
    ratio = c * c + 1.0
    dF_dk = ratio * (2.0 / (k * k)) * (digamma(1.0 + 1.0 / k) - digamma(1.0 + 2.0 / k))
    # F(k, cov) = ratio(k) - 1 - cov^2 ;  dk/dcov = 2 cov / (dF/dk) with sign flip
    return 2.0 * c / dF_dk


class Marginal:
    """One scalar marginal distribution.

    Parameters
    ----------
    family : one of FAMILIES
    mean : central value (ignored when `design` is set, except as default)
    cov : fixed coefficient of variation (spread tracks the mean), or
    std : fixed standard deviation (spread independent of the mean)
    design : index of the design component bound to the mean, or None
    name : label used in file headers and reports
    """

    __slots__ = ("family", "mean", "cov", "std", "design", "name")

    def __init__(self, family, mean=None, cov=None, std=None, design=None, name=""):
        family = family.lower()
        if family not in FAMILIES:
            raise DistributionError(f"unknown family {family!r}")
        self.family = family
        self.mean = None if mean is None else float(mean)
        self.cov = None if cov is None else float(cov)
        self.std = None if std is None else float(std)
        self.design = design
        self.name = name or family
        if family == "deterministic":
            if cov not in (None, 0.0) or std not in (None, 0.0):
                raise NonPositiveSpread("deterministic marginal has zero spread")
            self.cov = self.std = None
            if self.mean is None and design is None:
                raise DistributionError("deterministic marginal needs a value")
        else:
            if (self.cov is None) == (self.std is None):
                raise DistributionError("specify exactly one of cov / std")
            if self.cov is not None and self.cov <= 0.0:
                raise NonPositiveSpread(f"c.o.v. must be positive, got {self.cov}")
            if self.std is not None and self.std <= 0.0:
                raise NonPositiveSpread(f"std must be positive, got {self.std}")
            if self.mean is None and design is None:
                raise DistributionError("marginal needs a mean or a design binding")

    @property
    def is_deterministic(self):
        return self.family == "deterministic"

    def mean_value(self, theta=None):
        if self.design is not None:
            if theta is None:
                raise DistributionError(f"marginal {self.name!r} needs theta")
            return float(np.asarray(theta, dtype=float)[self.design])
        return self.mean

    def _moments(self, theta=None):
        m = self.mean_value(theta)
        if self.is_deterministic:
            return m, 0.0
        if self.cov is not None:
            if m <= 0.0:
                raise InvalidMoment(
                    f"marginal {self.name!r}: c.o.v. parameterization needs mean > 0"
                )
            return m, self.cov * m
        return m, self.std

    def resolve(self, theta=None):
        """Native parameters reproducing the requested mean and spread.

        Returns (value,) / (mu, sigma) / (lam, zeta) / (loc, scale) /
        (scale, shape) for deterministic / gaussian / lognormal / gumbel /
        weibull respectively.
        """
        m, s = self._moments(theta)
        if self.family == "deterministic":
            return (m,)
        if self.family == "gaussian":
            return (m, s)
        if self.family == "lognormal":
            if m <= 0.0:
                raise InvalidMoment("lognormal needs mean > 0")
            zeta = np.sqrt(np.log1p((s / m) ** 2))
            lam = np.log(m) - 0.5 * zeta * zeta
            return (lam, zeta)
        if self.family == "gumbel":
            scale = s * GUMBEL_SCALE_FACTOR
            return (m - EULER_GAMMA * scale, scale)
        # weibull
        if m <= 0.0:
            raise InvalidMoment("weibull needs mean > 0")
        k = _weibull_shape_from_cov(s / m)
        return (m / gamma_fn(1.0 + 1.0 / k), k)

    # -- pointwise distribution functions ---------------------------------

    def pdf(self, x, theta=None):
        x = np.asarray(x, dtype=float)
        p = self.resolve(theta)
        if self.family == "gaussian":
            mu, sg = p
            return norm_pdf((x - mu) / sg) / sg
        if self.family == "lognormal":
            lam, zeta = p
            out = np.zeros_like(x)
            pos = x > 0.0
            xp = np.where(pos, x, 1.0)
            out = np.where(pos, norm_pdf((np.log(xp) - lam) / zeta) / (xp * zeta), 0.0)
            return out
        if self.family == "gumbel":
            a, b = p
            z = (x - a) / b
            return np.exp(-z - np.exp(-z)) / b
        if self.family == "weibull":
            lam, k = p
            out = np.zeros_like(x)
            pos = x > 0.0
            xp = np.where(pos, x, 1.0)
            t = (xp / lam) ** k
            out = np.where(pos, (k / xp) * t * np.exp(-t), 0.0)
            return out
        # deterministic: density is a point mass
        return np.where(x == p[0], np.inf, 0.0)

    def cdf(self, x, theta=None):
        x = np.asarray(x, dtype=float)
        p = self.resolve(theta)
        if self.family == "gaussian":
            mu, sg = p
            return norm_cdf((x - mu) / sg)
        if self.family == "lognormal":
            lam, zeta = p
            pos = x > 0.0
            xp = np.where(pos, x, 1.0)
            return np.where(pos, norm_cdf((np.log(xp) - lam) / zeta), 0.0)
        if self.family == "gumbel":
            a, b = p
            return np.exp(-np.exp(-(x - a) / b))
        if self.family == "weibull":
            pos = x > 0.0
            xp = np.where(pos, x, 0.0)
            lam, k = p
            return np.where(pos, -np.expm1(-((xp / lam) ** k)), 0.0)
        return np.where(x >= p[0], 1.0, 0.0)

    def quantile(self, prob, theta=None):
        prob = np.asarray(prob, dtype=float)
        if np.any(prob <= 0.0) or np.any(prob >= 1.0):
            raise InvalidProbability("quantile level must lie in (0, 1)")
        p = self.resolve(theta)
        if self.family == "gaussian":
            mu, sg = p
            return mu + sg * norm_ppf(prob)
        if self.family == "lognormal":
            lam, zeta = p
            return np.exp(lam + zeta * norm_ppf(prob))
        if self.family == "gumbel":
            a, b = p
            return a - b * np.log(-np.log(prob))
        if self.family == "weibull":
            lam, k = p
            return lam * (-np.log1p(-prob)) ** (1.0 / k)
        return np.broadcast_to(p[0], prob.shape).copy() if prob.shape else p[0]

    def quantile_z(self, z, theta=None):
        """Quantile at probability Phi(z), accurate in both extreme tails.

        Working from z instead of the probability avoids the double-rounding
        of Phi(z) near 1 (z = +-8 corresponds to tail masses ~ 6e-16).
        """
        z = np.asarray(z, dtype=float)
        p = self.resolve(theta)
        if self.family == "gaussian":
            return p[0] + p[1] * z
        if self.family == "lognormal":
            return np.exp(p[0] + p[1] * z)
        if self.family == "gumbel":
            a, b = p
            # -log Phi(z): direct in the lower tail, via log1p of the
            # complement in the upper tail
            nlp = np.empty(z.shape if z.shape else (1,))
            zf = np.atleast_1d(z)
            low = zf < 0
            nlp[low] = -np.log(norm_cdf(zf[low]))
            nlp[~low] = -np.log1p(-norm_cdf(-zf[~low]))
            out = a - b * np.log(nlp)
            return out if z.shape else float(out[0])
        if self.family == "weibull":
            lam, k = p
            return lam * (-np.log(norm_cdf(-z))) ** (1.0 / k)
        out = np.broadcast_to(p[0], z.shape).copy() if z.shape else p[0]
        return out

    def logpdf(self, x, theta=None):
        x = np.asarray(x, dtype=float)
        p = self.resolve(theta)
        if self.family == "gaussian":
            mu, sg = p
            z = (x - mu) / sg
            return -0.5 * z * z - np.log(sg) - 0.5 * np.log(2.0 * np.pi)
        if self.family == "lognormal":
            lam, zeta = p
            if np.any(x <= 0.0):
                raise ZeroDensity("lognormal logpdf at x <= 0")
            z = (np.log(x) - lam) / zeta
            return -0.5 * z * z - np.log(x * zeta) - 0.5 * np.log(2.0 * np.pi)
        if self.family == "gumbel":
            a, b = p
            z = (x - a) / b
            return -z - np.exp(-z) - np.log(b)
        if self.family == "weibull":
            lam, k = p
            if np.any(x <= 0.0):
                raise ZeroDensity("weibull logpdf at x <= 0")
            t = (x / lam) ** k
            return np.log(k / x) + np.log(t) - t
        raise DistributionError("deterministic marginal has no density")

    # -- score: d log f(x; mean) / d mean ---------------------------------

    def score_mean(self, x, theta=None):
        """Derivative of the log density w.r.t. the mean hyperparameter.

        The spread follows its declared mode: with a fixed c.o.v. the native
        scale parameters track the mean, with a fixed std they do not.
        """
        x = np.asarray(x, dtype=float)
        m, s = self._moments(theta)
        cov_mode = self.cov is not None
        if self.family == "gaussian":
            mu, sg = m, s
            z = (x - mu) / sg
            dmu, dsg = 1.0, (self.cov if cov_mode else 0.0)
            # dlogf/dmu = z/sg ; dlogf/dsg = (z^2 - 1)/sg
            return (z / sg) * dmu + ((z * z - 1.0) / sg) * dsg
        if self.family == "lognormal":
            lam, zeta = self.resolve(theta)
            if np.any(x <= 0.0):
                raise ZeroDensity("lognormal score at x <= 0")
            z = (np.log(x) - lam) / zeta
            if cov_mode:
                dlam, dzeta = 1.0 / m, 0.0
            else:
                dzeta = -s * s / (zeta * m * (m * m + s * s))
                dlam = 1.0 / m - zeta * dzeta
            # dlogf/dlam = z/zeta ; dlogf/dzeta = (z^2 - 1)/zeta
            return (z / zeta) * dlam + ((z * z - 1.0) / zeta) * dzeta
        if self.family == "gumbel":
            a, b = self.resolve(theta)
            z = (x - a) / b
            emz = np.exp(-z)
            db = (self.cov * GUMBEL_SCALE_FACTOR) if cov_mode else 0.0
            da = 1.0 - EULER_GAMMA * db
            # dlogf/da = (1 - e^-z)/b ; dlogf/db = (-1 + z(1 - e^-z))/b
            return ((1.0 - emz) / b) * da + ((z * (1.0 - emz) - 1.0) / b) * db
        if self.family == "weibull":
            lam, k = self.resolve(theta)
            if np.any(x <= 0.0):
                raise ZeroDensity("weibull score at x <= 0")
            t = (x / lam) ** k
            g1 = gamma_fn(1.0 + 1.0 / k)
            if cov_mode:
                dk = 0.0
                dlam = lam / m
            else:
                dcov_dm = -s / (m * m)
                dk = _weibull_dk_dcov(k) * dcov_dm
                # lam = m / Gamma(1 + 1/k): chain through both m and k
                dlam = 1.0 / g1 + (m / (g1 * k * k)) * digamma(1.0 + 1.0 / k) * dk
            dlogf_dlam = (k / lam) * (t - 1.0)
            logr = np.log(x / lam)
            dlogf_dk = 1.0 / k + logr * (1.0 - t)
            return dlogf_dlam * dlam + dlogf_dk * dk
        raise DistributionError("score undefined for deterministic marginal")

    def sample(self, n, rng, theta=None):
        p = self.resolve(theta)
        if self.family == "gaussian":
            return rng.normal(p[0], p[1], n)
        if self.family == "lognormal":
            return np.exp(rng.normal(p[0], p[1], n))
        if self.family == "gumbel":
            return p[0] - p[1] * np.log(-np.log(rng.uniform(size=n)))
        if self.family == "weibull":
            return p[0] * (-np.log(rng.uniform(size=n))) ** (1.0 / p[1])
        return np.full(n, p[0])


class RandomVector:
    """Ordered collection of mutually independent marginals.

    `n_design` fixes the length of the design vector; each non-deterministic
    marginal may bind its mean to one design component.  Deterministic
    marginals carry no randomness and are excluded from the standard normal
    space (they are re-inserted as constants by `u_to_x_full`).
    """

    def __init__(self, marginals, n_design=0):
        self.marginals = list(marginals)
        self.n_design = int(n_design)
        self.n = len(self.marginals)
        for m in self.marginals:
            if m.design is not None and not (0 <= m.design < self.n_design):
                raise DistributionError(
                    f"design index {m.design} out of range for {m.name!r}"
                )
        self.random_idx = [i for i, m in enumerate(self.marginals) if not m.is_deterministic]
        self.det_idx = [i for i, m in enumerate(self.marginals) if m.is_deterministic]
        self.n_random = len(self.random_idx)
        # A deterministic marginal bound to a design component has a delta
        # density: quantiles, sampling and surrogates remain valid, but the
        # score-based reliability gradients do not.
        self._bound_deterministic = [
            i for i in self.det_idx if self.marginals[i].design is not None
        ]

    @property
    def names(self):
        return [m.name for m in self.marginals]

    def mean_vector(self, theta=None):
        return np.array([m.mean_value(theta) for m in self.marginals])

    def u_to_x(self, U, theta=None):
        """Map standard normal coordinates to the random components."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        X = np.empty_like(U)
        for j, i in enumerate(self.random_idx):
            m = self.marginals[i]
            p = m.resolve(theta)
            u = U[:, j]
            if m.family == "gaussian":
                X[:, j] = p[0] + p[1] * u
            elif m.family == "lognormal":
                X[:, j] = np.exp(p[0] + p[1] * u)
            else:  # gumbel / weibull via the tail-accurate quantile
                X[:, j] = m.quantile_z(u, theta)
        return X

    def x_to_u(self, X, theta=None):
        """Inverse of `u_to_x` on the random components of full points X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.empty((X.shape[0], self.n_random))
        for j, i in enumerate(self.random_idx):
            m = self.marginals[i]
            p = m.resolve(theta)
            x = X[:, i]
            if m.family == "gaussian":
                U[:, j] = (x - p[0]) / p[1]
            elif m.family == "lognormal":
                U[:, j] = (np.log(x) - p[0]) / p[1]
            else:
                U[:, j] = norm_ppf(m.cdf(x, theta))
        return U

    def embed(self, X_random, theta=None):
        """Insert deterministic constants to recover full n-column points."""
        X_random = np.atleast_2d(np.asarray(X_random, dtype=float))
        if not self.det_idx:
            return X_random
        X = np.empty((X_random.shape[0], self.n))
        X[:, self.random_idx] = X_random
        for i in self.det_idx:
            X[:, i] = self.marginals[i].mean_value(theta)
        return X

    def u_to_x_full(self, U, theta=None):
        return self.embed(self.u_to_x(U, theta), theta)

    def logpdf(self, X, theta=None):
        """Joint log density over the random components of full points X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for i in self.random_idx:
            out += self.marginals[i].logpdf(X[:, i], theta)
        return out

    def score(self, X, theta):
        """Gradient of log f(x; theta) w.r.t. theta, shape (N, n_design)."""
        if self._bound_deterministic:
            names = [self.marginals[i].name for i in self._bound_deterministic]
            raise DistributionError(
                f"score undefined: design variable bound to deterministic "
                f"marginal(s) {names}; model them as random with a small c.o.v."
            )
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((X.shape[0], self.n_design))
        for i in self.random_idx:
            m = self.marginals[i]
            if m.design is not None:
                out[:, m.design] += m.score_mean(X[:, i], theta)
        return out

    def sample(self, n, rng, theta=None):
        """n independent draws of the full vector, deterministic under rng."""
        X = np.empty((n, self.n))
        for i, m in enumerate(self.marginals):
            X[:, i] = m.sample(n, rng, theta)
        return X


class StandardNormalMap:
    """Isoprobabilistic transform bound to a random vector and a design."""

    def __init__(self, rv, theta=None):
        self.rv = rv
        self.theta = None if theta is None else np.asarray(theta, dtype=float)

    def forward(self, X):
        return self.rv.x_to_u(X, self.theta)

    def inverse(self, U):
        return self.rv.u_to_x_full(U, self.theta)
