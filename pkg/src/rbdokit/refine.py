"""Population-based adaptive enrichment of the DOE near the limit-state surface.

Each batch: draw candidates from the unnormalized refinement density
(sign-uncertainty probability of the surrogate times a weighting indicator)
with a slice sampler, reduce them to K cluster centers, evaluate the true
performance there, refit, and re-estimate the three-surface accuracy
bracket.  Refinement stops when the bracket of generalized reliability
indices is tighter than the requested tolerance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .kriging import DesignOfExperiments, fit, largest_feasible_basis
from .reliability import ReliabilityResult, generalized_beta
from .util import BETA_SATURATION, norm_cdf, norm_ppf

PHI_INV_975 = float(norm_ppf(0.975))


class RefineError(RuntimeError):
    pass


class DegenerateTarget(RefineError):
    """No strictly positive start found: the margin of uncertainty is empty."""


class BudgetExhausted(RefineError):
    """True-evaluation cap reached before the accuracy bracket closed."""

    def __init__(self, msg, doe=None, model=None, bracket=None):
        super().__init__(msg)
        self.doe = doe
        self.model = model
        self.bracket = bracket


@dataclass
class MarginSpec:
    """Confidence multiplier on the surrogate sign and bracket tolerance."""

    k: float = PHI_INV_975
    eps_beta: float = 0.1

    def __post_init__(self):
        if self.k <= 0.0 and self.k != 0.0:
            raise ValueError("confidence multiplier k must be >= 0")
        if self.eps_beta <= 0.0:
            raise ValueError("eps_beta must be positive")


@dataclass
class RefineConfig:
    margin: MarginSpec = field(default_factory=MarginSpec)
    k_init: int = 10
    k_add: int = 10
    n_candidates: int = 10_000
    n_chains: int = 64
    burn_in: int = 100
    kmeans_iters: int = 100
    max_batches: int = 200


class EvalBudget:
    """Shared counter of true performance evaluations with an optional cap."""

    def __init__(self, cap=None):
        self.cap = cap
        self.used = 0

    def spend(self, n):
        if self.cap is not None and self.used + n > self.cap:
            raise BudgetExhausted(
                f"evaluation budget {self.cap} exhausted ({self.used} used, {n} requested)"
            )
        self.used += n


def margin_probability(model, X, k):
    """P[x in the sign-uncertainty margin]: Phi(k - mu/sd) - Phi(-k - mu/sd).

    Zero wherever the predictive deviation vanishes (the sign is certain).
    """
    one = np.ndim(X) == 1
    mu, sd = model.predict(np.atleast_2d(np.asarray(X, dtype=float)))
    mu, sd = np.atleast_1d(mu), np.atleast_1d(sd)
    out = np.zeros_like(mu)
    pos = sd > 0.0
    z = mu[pos] / sd[pos]
    out[pos] = norm_cdf(k - z) - norm_cdf(-k - z)
    return float(out[0]) if one else out


def refinement_density(model, X, k, weight_value):
    """Unnormalized candidate density: margin probability times weighting PDF."""
    w = np.asarray(weight_value(np.atleast_2d(np.asarray(X, dtype=float))), dtype=float)
    m = margin_probability(model, np.atleast_2d(np.asarray(X, dtype=float)), k)
    out = np.atleast_1d(m) * np.atleast_1d(w)
    return float(out[0]) if np.ndim(X) == 1 else out


class BoxWeight:
    """Uniform weighting on the augmented quantile hyperrectangle.

    Operates on the active (non-degenerate) dimensions; degenerate
    dimensions are pinned to their constant when expanding back to full
    coordinates.
    """

    def __init__(self, space):
        self.space = space
        self.active = np.flatnonzero(space.active)
        self.lo = space.q_lo[self.active]
        self.hi = space.q_hi[self.active]
        self._full_template = space.q_lo.copy()

    @property
    def n_active(self):
        return len(self.active)

    def from_active(self, A):
        A = np.atleast_2d(A)
        V = np.tile(self._full_template, (A.shape[0], 1))
        V[:, self.active] = A
        return V

    def to_active(self, V):
        return np.atleast_2d(V)[:, self.active]

    def log_value_active(self, A):
        A = np.atleast_2d(A)
        inside = np.all((A >= self.lo) & (A <= self.hi), axis=1)
        return np.where(inside, 0.0, -np.inf)

    def sample_active(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=(n, self.n_active))


class SphereWeight:
    """Uniform weighting on the closed beta0-radius ball in standard space."""

    def __init__(self, beta0, dim):
        self.beta0 = float(beta0)
        self.dim = int(dim)
        self.lo = np.full(dim, -self.beta0)
        self.hi = np.full(dim, self.beta0)

    @property
    def n_active(self):
        return self.dim

    def from_active(self, A):
        return np.atleast_2d(A)

    def to_active(self, V):
        return np.atleast_2d(V)

    def log_value_active(self, A):
        A = np.atleast_2d(A)
        inside = np.sqrt((A * A).sum(axis=1)) <= self.beta0
        return np.where(inside, 0.0, -np.inf)

    def sample_active(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = self.beta0 * rng.uniform(size=(n, 1)) ** (1.0 / self.dim)
        return z * r


def _find_starts(log_density, n_chains, rng, draw, jitter_center, widths, init=None):
    """Assemble chain start points with strictly positive density."""
    starts = []
    if init is not None:
        init = np.asarray(init, dtype=float)
        if np.isfinite(log_density(init[None, :])[0]):
            starts.append(init)
    for _ in range(50):
        if len(starts) >= n_chains:
            break
        cand = draw(n_chains, rng)
        ok = np.isfinite(log_density(cand))
        starts.extend(cand[ok])
    if len(starts) < n_chains and jitter_center is not None:
        center = np.asarray(jitter_center, dtype=float)
        for scale in (0.02, 0.05, 0.1, 0.2, 0.5):
            if len(starts) >= n_chains:
                break
            cand = center + scale * widths * rng.standard_normal((4 * n_chains, len(center)))
            ok = np.isfinite(log_density(cand))
            starts.extend(cand[ok])
    if not starts:
        raise DegenerateTarget(
            "no start point with positive refinement density: margin is empty"
        )
    idx = np.arange(n_chains) % len(starts)
    return np.array([starts[i] for i in idx])


def sample_candidates(log_density, n, rng, box_lo, box_hi, init=None,
                      direct_sampler=None, jitter_center=None, n_chains=32,
                      burn_in=100, max_expand=8, max_shrink=64):
    """Slice-sample n points from an unnormalized log density.

    Several chains advance synchronously (coordinate-wise stepping-out and
    shrinkage, vectorized across chains); after burn-in every sweep
    contributes one point per chain.  The normalizing constant of the
    target is never needed.
    """
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    d = len(box_lo)
    widths = np.where(box_hi > box_lo, (box_hi - box_lo) / 4.0, 1.0)
    if direct_sampler is None:
        direct_sampler = lambda m, r: r.uniform(box_lo, box_hi, size=(m, d))
    n_chains = min(n_chains, max(1, n))
    x = _find_starts(log_density, n_chains, rng, direct_sampler, jitter_center,
                     widths, init)
    logp = log_density(x)

    def coord_update(x, logp, k):
        C = x.shape[0]
        y = logp + np.log(rng.uniform(size=C))
        u0 = rng.uniform(size=C)
        left = x[:, k] - widths[k] * u0
        right = left + widths[k]

        def dens_at(vals, mask):
            pts = x[mask].copy()
            pts[:, k] = vals[mask]
            return log_density(pts)

        grow = np.ones(C, dtype=bool)
        for _ in range(max_expand):
            grow_now = grow.copy()
            if not grow_now.any():
                break
            lv = dens_at(left, grow_now)
            still = lv > y[grow_now]
            grow[grow_now] = still
            left[grow_now & grow] -= widths[k]
        grow = np.ones(C, dtype=bool)
        for _ in range(max_expand):
            grow_now = grow.copy()
            if not grow_now.any():
                break
            rv_ = dens_at(right, grow_now)
            still = rv_ > y[grow_now]
            grow[grow_now] = still
            right[grow_now & grow] += widths[k]

        lo, hi = left, right
        active = np.ones(C, dtype=bool)
        xs = x[:, k].copy()
        lps = logp.copy()
        for _ in range(max_shrink):
            if not active.any():
                break
            draw = lo + rng.uniform(size=C) * (hi - lo)
            lv = dens_at(draw, active)
            ok = lv >= y[active]
            idx = np.flatnonzero(active)
            acc = idx[ok]
            xs[acc] = draw[acc]
            lps[acc] = lv[ok]
            rej = idx[~ok]
            below = draw[rej] < x[rej, k]
            lo[rej[below]] = draw[rej[below]]
            hi[rej[~below]] = draw[rej[~below]]
            active[acc] = False
        x[:, k] = xs
        return x, lps

    collected = []
    sweeps = burn_in + math.ceil(n / n_chains)
    for sweep in range(sweeps):
        for k in range(d):
            x, logp = coord_update(x, logp, k)
        if sweep >= burn_in:
            collected.append(x.copy())
    out = np.concatenate(collected, axis=0)[:n]
    return out


def reduce_kmeans(points, k, rng, iters=100):
    """K cluster centroids by Lloyd iteration with farthest-point seeding."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    if k > m:
        raise ValueError(f"k={k} exceeds population size {m}")
    lo = points.min(axis=0)
    span = np.ptp(points, axis=0)
    extent = np.where(span > 0, span, 1.0)
    Z = (points - lo) / extent

    centers = np.empty((k, d))
    first = int(rng.integers(m))
    centers[0] = Z[first]
    d2 = ((Z - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centers[j] = Z[int(np.argmax(d2))]
        d2 = np.minimum(d2, ((Z - centers[j]) ** 2).sum(axis=1))

    assign = np.full(m, -1)
    for _ in range(iters):
        dist = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = Z[mask].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from any center
                far = dist.min(axis=1).argmax()
                centers[j] = Z[far]
    return centers * extent + lo


@dataclass
class MarginBracket:
    """Reliability indices of the three shifted surrogate surfaces.

    The outer indices are replaced by their 95% simulation confidence
    bounds (lower for the outer surface, upper for the inner one) before
    the width is formed, so the stopping rule accounts for estimation
    noise as well as surrogate error.
    """

    minus: ReliabilityResult
    zero: ReliabilityResult
    plus: ReliabilityResult
    k: float

    Z95 = PHI_INV_975

    @property
    def beta_zero(self):
        return self.zero.beta

    @property
    def beta_minus(self):
        """Lower 95% confidence bound of the outer-surface index."""
        r = self.minus
        if r.degenerate or not np.isfinite(r.cov):
            return r.beta
        p_up = min(r.p_f * (1.0 + self.Z95 * r.cov), 1.0 - 1e-16)
        return generalized_beta(p_up)

    @property
    def beta_plus(self):
        """Upper 95% confidence bound of the inner-surface index."""
        r = self.plus
        if r.degenerate or not np.isfinite(r.cov):
            return r.beta
        p_lo = r.p_f * (1.0 - self.Z95 * r.cov)
        if p_lo <= 0.0:
            return BETA_SATURATION
        return generalized_beta(p_lo)

    @property
    def width(self):
        return max(self.beta_plus - self.beta_zero, self.beta_zero - self.beta_minus)

    def as_dict(self):
        return {
            "beta_minus": self.beta_minus,
            "beta_zero": self.beta_zero,
            "beta_plus": self.beta_plus,
            "width": self.width,
            "p_minus": self.minus.p_f,
            "p_zero": self.zero.p_f,
            "p_plus": self.plus.p_f,
            "cov_zero": self.zero.cov,
        }


def accuracy_bracket(model, engine, k):
    """Run the three-surface reliability analyses and wrap them as a bracket.

    `engine(model, k)` must return the results for the surfaces
    (mean - k sd, mean, mean + k sd) estimated on shared sample streams.
    """
    r_minus, r_zero, r_plus = engine(model, k)
    return MarginBracket(r_minus, r_zero, r_plus, k)


def _select_batch(model, weight, config, k_batch, rng, doe):
    """Candidate generation + clustering + support/dedup filtering."""
    if model is None:
        log_density = weight.log_value_active
        init = None
        jitter_center = None
    else:
        def log_density(A):
            V = weight.from_active(A)
            m = np.atleast_1d(margin_probability(model, V, config.margin.k))
            with np.errstate(divide="ignore"):
                lm = np.where(m > 0.0, np.log(np.maximum(m, 1e-300)), -np.inf)
            return lm + weight.log_value_active(A)

        # start near the observation closest to the limit state
        best = int(np.argmin(np.abs(doe.G)))
        jitter_center = weight.to_active(doe.X[best])[0]
        init = None

    pts = sample_candidates(
        log_density,
        config.n_candidates,
        rng,
        weight.lo,
        weight.hi,
        init=init,
        direct_sampler=weight.sample_active,
        jitter_center=jitter_center,
        n_chains=config.n_chains,
        burn_in=config.burn_in,
    )
    centers = reduce_kmeans(pts, k_batch, rng, iters=config.kmeans_iters)
    # centroids of non-convex clusters can leave the support: snap them back
    # to the nearest candidate, which has positive density by construction
    bad = ~np.isfinite(log_density(centers))
    for i in np.flatnonzero(bad):
        d2 = ((pts - centers[i]) ** 2).sum(axis=1)
        centers[i] = pts[np.argmin(d2)]
    full = weight.from_active(centers)
    # drop duplicates against the DOE and inside the batch, topping up from
    # the candidate population (farthest-first) to keep the batch size
    chosen = []
    for row in full:
        if doe is not None and doe.is_duplicate(row[None, :])[0]:
            continue
        if chosen and np.min(((np.array(chosen) - row) ** 2).sum(axis=1)) < 1e-20:
            continue
        chosen.append(row)
    if len(chosen) < k_batch:
        pool = weight.from_active(pts)
        order = rng.permutation(len(pool))
        for idx in order:
            if len(chosen) >= k_batch:
                break
            row = pool[idx]
            if doe is not None and doe.is_duplicate(row[None, :])[0]:
                continue
            if chosen and np.min(((np.array(chosen) - row) ** 2).sum(axis=1)) < 1e-20:
                continue
            chosen.append(row)
    return np.array(chosen)


def refine_until_accurate(doe, evaluator, weight, config, engine, budget, rng,
                          trace=None, fit_options=None, warm_lengths=None):
    """Enrich the DOE until the three-surface index bracket closes.

    evaluator: full-coordinate batch evaluator of the true performance.
    engine:    callable (model, k) -> three nested-surface results.
    budget:    EvalBudget shared across refinement calls.

    Returns (doe, model, bracket); raises BudgetExhausted with the current
    state attached when the cap is hit first.
    """
    fit_options = fit_options or {}
    config = config or RefineConfig()
    model = None
    bracket = None
    batch_idx = 0
    while True:
        if doe is not None:
            # warm-start the length search from the previous fit: keeps the
            # surrogate from flipping between likelihood modes as the DOE grows
            warm = [model.corr.lengths] if model is not None else (
                [warm_lengths] if warm_lengths is not None else None)
            opts = dict(fit_options)
            if "basis" in opts:
                # small early DOEs cannot support rich trends yet
                n_act = int((np.ptp(doe.X, axis=0) > 0.0).sum())
                opts["basis"] = largest_feasible_basis(opts["basis"], doe.m, n_act)
            model = fit(doe, extra_starts=warm, **opts)
            bracket = accuracy_bracket(model, engine, config.margin.k)
            if trace is not None:
                rec = {"batch": batch_idx, "doe_size": doe.m, "evals": budget.used}
                rec.update(bracket.as_dict())
                trace(rec)
            if bracket.width <= config.margin.eps_beta:
                return doe, model, bracket
        if batch_idx >= config.max_batches:
            raise BudgetExhausted("max refinement batches reached", doe, model, bracket)
        k_batch = config.k_add if doe is not None else config.k_init
        X_new = _select_batch(model, weight, config, k_batch, rng, doe)
        try:
            budget.spend(len(X_new))
        except BudgetExhausted as exc:
            exc.doe, exc.model, exc.bracket = doe, model, bracket
            raise
        g_new = np.asarray(evaluator(X_new), dtype=float).ravel()
        if doe is None:
            doe = DesignOfExperiments(X_new, g_new)
        else:
            doe.append(X_new, g_new)
        batch_idx += 1
