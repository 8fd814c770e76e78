"""Failure probability estimation and design sensitivities.

Estimators: crude Monte Carlo and subset simulation with adaptive
intermediate thresholds and component-wise Metropolis resampling in
standard normal space.  Gradients of the failure probability with respect
to the distribution hyperparameters come for free from the same samples
through the score function (indicator-weighted likelihood-ratio estimator).

Several nested failure surfaces (values pointwise nondecreasing across
surfaces, so the failure sets shrink) can be estimated in a single cascade
run: each surface's probability is the previous one times further
conditional level fractions, which makes the nesting ordering of the
estimates exact on shared sample streams.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .util import BETA_SATURATION, norm_cdf, norm_pdf, norm_ppf


class ReliabilityError(RuntimeError):
    pass


class MaxLevelsExceeded(ReliabilityError):
    """Subset thresholds failed to reach zero within the level budget."""


class LimitState:
    """Scalar performance function over full input vectors; failure is g <= 0."""

    def __init__(self, fn, name="g"):
        self.fn = fn
        self.name = name

    def __call__(self, X):
        return np.asarray(self.fn(np.atleast_2d(X)), dtype=float).ravel()


def generalized_beta(p_f):
    """-Phi^-1(p_f), saturated at +/-8 for degenerate probabilities."""
    if p_f <= norm_cdf(-BETA_SATURATION):
        return BETA_SATURATION
    if p_f >= norm_cdf(BETA_SATURATION):
        return -BETA_SATURATION
    return float(-norm_ppf(p_f))


@dataclass
class SubsetConfig:
    n_per_level: int = 10_000
    p0: float = 0.1
    proposal_halfwidth: float = 1.0
    target_acceptance: tuple = (0.3, 0.5)
    max_levels: int = 25
    saturation_beta: float = BETA_SATURATION

    def __post_init__(self):
        if not (0.0 < self.p0 < 1.0):
            raise ValueError("p0 must lie in (0, 1)")
        if self.n_per_level * self.p0 < 1:
            raise ValueError("n_per_level * p0 must be at least 1")


@dataclass
class ReliabilityResult:
    p_f: float
    beta: float
    cov: float
    cov_upper: float
    n_samples: int
    n_levels: int
    thresholds: list
    grad_p: np.ndarray | None = None
    grad_beta: np.ndarray | None = None
    degenerate: str | None = None
    diag: dict = field(default_factory=dict)

    @property
    def beta_std(self):
        """Approximate standard deviation of the beta estimate."""
        if self.degenerate or not np.isfinite(self.cov):
            return np.inf
        return float(self.cov * self.p_f / max(norm_pdf(norm_ppf(self.p_f)), 1e-300))


def _chain_beta_grad(p, grad_p):
    if grad_p is None or p <= 0.0 or p >= 1.0:
        return None
    return -grad_p / norm_pdf(norm_ppf(p))


def crude_mc(limit_state, rv, theta, n, rng, with_grad=True):
    """Indicator-mean estimator on n independent draws."""
    U = rng.standard_normal((int(n), rv.n_random))
    X = rv.u_to_x_full(U, theta)
    g = limit_state(X)
    ind = g <= 0.0
    p = float(ind.mean())
    grad_p = None
    if with_grad and rv.n_design:
        grad_p = (ind[:, None] * rv.score(X, theta)).mean(axis=0)
    if p == 0.0:
        return ReliabilityResult(0.0, BETA_SATURATION, np.inf, np.inf, int(n), 1,
                                 [0.0], grad_p, None, "all_safe")
    if p == 1.0:
        return ReliabilityResult(1.0, -BETA_SATURATION, 0.0, 0.0, int(n), 1,
                                 [0.0], grad_p, None, "all_fail")
    cov = math.sqrt((1.0 - p) / (n * p))
    return ReliabilityResult(p, generalized_beta(p), cov, cov, int(n), 1, [0.0],
                             grad_p, _chain_beta_grad(p, grad_p))


def _gamma_factor(ind, layout):
    """Au-Beck chain-correlation factor of an indicator over MCMC chains.

    `layout` is None for independent samples (factor 0), else (n_chains, L)
    describing the rectangle the flat indicator array was generated in
    (chain-major order).
    """
    if layout is None:
        return 0.0
    n_c, L = layout
    if L < 2:
        return 0.0
    I = ind.reshape(n_c, L).astype(float)
    p = I.mean()
    r0 = p - p * p
    if r0 <= 0.0:
        return 0.0
    gamma = 0.0
    for k in range(1, L):
        rk = (I[:, :-k] * I[:, k:]).mean() - p * p
        gamma += 2.0 * (1.0 - k / L) * (rk / r0)
    return max(gamma, 0.0)


def _cov_from_factors(factors):
    """factors: list of (fraction, n_samples, gamma) per conditional level."""
    var = 0.0
    lin = 0.0
    for f, n, g in factors:
        if f <= 0.0:
            return np.inf, np.inf
        d2 = (1.0 - f) / (n * f) * (1.0 + g)
        var += d2
        lin += math.sqrt(d2)
    return math.sqrt(var), lin


class _Cascade:
    """Subset-simulation cascade over nested failure surfaces in U space."""

    def __init__(self, eval_u, n_u, n_surf, config, rng):
        self.eval_u = eval_u
        self.n_u = n_u
        self.n_surf = n_surf
        self.cfg = config
        self.rng = rng
        self.evals = 0
        self.level_max = []

    def _evaluate(self, U):
        V = np.atleast_2d(np.asarray(self.eval_u(U), dtype=float))
        self.evals += U.shape[0]
        return V

    def _regrow(self, U_seed, V_seed, j, b, n_target):
        """MCMC rectangle of conditional samples given surface j <= b."""
        cfg = self.cfg
        n_seed = U_seed.shape[0]
        L = max(2, math.ceil(n_target / n_seed))
        chain_U = np.empty((n_seed, L, self.n_u))
        chain_V = np.empty((n_seed, L, self.n_surf))
        chain_U[:, 0] = U_seed
        chain_V[:, 0] = V_seed
        hw = cfg.proposal_halfwidth
        cur_U, cur_V = U_seed.copy(), V_seed.copy()
        for step in range(1, L):
            prop = cur_U + hw * self.rng.uniform(-1.0, 1.0, cur_U.shape)
            # component-wise Metropolis on the standard normal prior
            log_ratio = 0.5 * (cur_U**2 - prop**2)
            keep = np.log(self.rng.uniform(size=cur_U.shape)) < log_ratio
            cand = np.where(keep, prop, cur_U)
            V_cand = self._evaluate(cand)
            ok = V_cand[:, j] <= b
            cur_U = np.where(ok[:, None], cand, cur_U)
            cur_V = np.where(ok[:, None], V_cand, cur_V)
            chain_U[:, step] = cur_U
            chain_V[:, step] = cur_V
            if step == 1:
                # adapt the proposal once per level toward 0.3-0.5 acceptance
                rate = float((ok & keep.any(axis=1)).mean())
                lo, hi = cfg.target_acceptance
                if rate < lo:
                    hw *= 0.5
                elif rate > hi:
                    hw *= 1.5
        U = chain_U.reshape(n_seed * L, self.n_u)
        V = chain_V.reshape(n_seed * L, self.n_surf)
        self.level_max.append(float(V[:, j].max()) - b)
        return U, V, (n_seed, L)

    def run(self):
        cfg = self.cfg
        N = int(cfg.n_per_level)
        U = self.rng.standard_normal((N, self.n_u))
        V = self._evaluate(U)
        layout = None
        factors = []
        thresholds = []
        p_prod = 1.0
        sat_p = norm_cdf(-cfg.saturation_beta)
        outcomes = []
        n_levels = 0
        j = 0
        while j < self.n_surf:
            g = V[:, j]
            n_cur = g.shape[0]
            n_s = max(1, int(round(n_cur * cfg.p0)))
            order = np.argsort(g, kind="stable")
            b = float(g[order[n_s - 1]])
            if b <= 0.0:
                # surface j resolved on the current conditional sample set
                ind = g <= 0.0
                frac = float(ind.mean())
                gam = _gamma_factor(ind, layout)
                fac_j = factors + [(frac, n_cur, gam)]
                p_j = p_prod * frac
                cov, cov_u = _cov_from_factors(fac_j)
                deg = None
                if frac == 0.0:
                    deg = "all_safe" if p_prod == 1.0 and not factors else "saturated"
                elif p_j >= 1.0:
                    deg = "all_fail"
                outcomes.append(
                    dict(p=p_j, cov=cov, cov_upper=cov_u, thresholds=thresholds + [0.0],
                         n_levels=n_levels + 1, U=U, ind=ind, weight=p_prod, degenerate=deg)
                )
                j += 1
                if j == self.n_surf:
                    break
                if frac == 0.0:
                    # nothing to condition on: remaining nested surfaces are
                    # at most as likely, saturate them too
                    for _ in range(j, self.n_surf):
                        outcomes.append(
                            dict(p=0.0, cov=np.inf, cov_upper=np.inf,
                                 thresholds=thresholds + [0.0], n_levels=n_levels + 1,
                                 U=U, ind=np.zeros(n_cur, bool), weight=p_prod,
                                 degenerate="saturated")
                        )
                    break
                factors = fac_j
                p_prod = p_j
                thresholds = thresholds + [0.0]
                if frac < 1.0:
                    U, V, layout = self._regrow(U[ind], V[ind], j - 1, 0.0, N)
                continue
            # intermediate level for surface j; ties at the threshold are all
            # kept as seeds so the realized fraction telescopes exactly
            mask = g <= b
            seeds = np.flatnonzero(mask)
            frac = float(mask.mean())
            gam = _gamma_factor(mask, layout)
            factors.append((frac, n_cur, gam))
            thresholds.append(b)
            p_prod *= frac
            n_levels += 1
            if n_levels > cfg.max_levels:
                raise MaxLevelsExceeded(
                    f"{n_levels} levels without reaching the failure threshold"
                )
            if p_prod < sat_p:
                # beyond any numerically defensible reliability index
                for _ in range(j, self.n_surf):
                    outcomes.append(
                        dict(p=0.0, cov=np.inf, cov_upper=np.inf, thresholds=thresholds,
                             n_levels=n_levels, U=U, ind=np.zeros(U.shape[0], bool),
                             weight=p_prod, degenerate="saturated")
                    )
                break
            U, V, layout = self._regrow(U[seeds], V[seeds], j, b, N)
        return outcomes


def _outcome_to_result(out, rv, theta, evals, with_grad):
    p = out["p"]
    grad_p = grad_b = None
    if with_grad and rv.n_design:
        X = rv.u_to_x_full(out["U"], theta)
        sc = rv.score(X, theta)
        grad_p = out["weight"] * (out["ind"][:, None] * sc).mean(axis=0)
        grad_b = _chain_beta_grad(p, grad_p)
    return ReliabilityResult(
        p_f=p,
        beta=generalized_beta(p),
        cov=out["cov"],
        cov_upper=out["cov_upper"],
        n_samples=evals,
        n_levels=out["n_levels"],
        thresholds=out["thresholds"],
        grad_p=grad_p,
        grad_beta=grad_b,
        degenerate=out["degenerate"],
    )


def subset_simulation(limit_state, rv, theta, config, rng, with_grad=True):
    """Adaptive-threshold subset simulation of P[g(X(theta)) <= 0]."""

    def eval_u(U):
        return limit_state(rv.u_to_x_full(U, theta))[:, None]

    cascade = _Cascade(eval_u, rv.n_random, 1, config, rng)
    outcomes = cascade.run()
    res = _outcome_to_result(outcomes[0], rv, theta, cascade.evals, with_grad)
    res.diag["level_overshoot"] = cascade.level_max
    return res


def surrogate_surfaces(model, rv, theta, k):
    """U-space evaluator of the three shifted surrogate surfaces.

    Columns are (mean - k sd, mean, mean + k sd): pointwise nondecreasing,
    so the corresponding failure sets are nested decreasing.
    """

    def eval_u(U):
        X = rv.u_to_x_full(U, theta)
        mu, sd = model.predict(X)
        return np.column_stack([mu - k * sd, mu, mu + k * sd])

    return eval_u


def surrogate_cascade(model, rv, theta, k, config, rng):
    """One cascade run returning results for the three shifted surfaces."""
    cascade = _Cascade(surrogate_surfaces(model, rv, theta, k), rv.n_random, 3,
                       config, rng)
    outcomes = cascade.run()
    return [_outcome_to_result(o, rv, theta, cascade.evals, False) for o in outcomes]


def surrogate_mean_reliability(model, rv, theta, config, rng, with_grad=True):
    """Subset simulation on the surrogate mean surface, with gradients."""

    def eval_u(U):
        X = rv.u_to_x_full(U, theta)
        mu, _ = model.predict(X)
        return mu[:, None]

    cascade = _Cascade(eval_u, rv.n_random, 1, config, rng)
    outcomes = cascade.run()
    return _outcome_to_result(outcomes[0], rv, theta, cascade.evals, with_grad)
