"""Universal kriging: regression trend + stationary Gaussian process.

The model is fitted by maximum likelihood over the correlation lengths
(profile likelihood: trend coefficients and process variance have closed
forms given the lengths), and returns the full Gaussian predictive
distribution (mean, standard deviation) at arbitrary points.  Inputs are
normalized to the unit box internally; fitted lengths are reported back in
raw units.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

# Two DOE points closer than this (Euclidean, after per-dimension
# normalization) are considered duplicates.
DEDUP_TOL = 1e-8

BASES = ("constant", "linear", "quadratic")


class KrigingError(RuntimeError):
    pass


class SingularCorrelation(KrigingError):
    """Correlation matrix not positive definite even after jitter repair."""


class RankDeficientTrend(KrigingError):
    """Regression basis too rich for the available observations."""


class DuplicatePoint(ValueError):
    """Observation coincides with an existing DOE point."""


class DesignOfExperiments:
    """Observed input points X (m, n) and performance values G (m,)."""

    def __init__(self, X, G):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        G = np.asarray(G, dtype=float).ravel()
        if X.shape[0] != G.shape[0]:
            raise ValueError("X and G row counts differ")
        if X.shape[0] < 1:
            raise ValueError("DOE needs at least one observation")
        self.X = X
        self.G = G
        self._check_duplicates()

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def _normalizer(self):
        lo = self.X.min(axis=0)
        extent = self.X.max(axis=0) - lo
        extent = np.where(extent > 0.0, extent, 1.0)
        return lo, extent

    def _check_duplicates(self):
        lo, extent = self._normalizer()
        Z = (self.X - lo) / extent
        for i in range(1, Z.shape[0]):
            d2 = np.sum((Z[:i] - Z[i]) ** 2, axis=1)
            if np.any(d2 < DEDUP_TOL**2):
                raise DuplicatePoint(f"observation {i} duplicates an earlier point")

    def append(self, X_new, G_new):
        """Grow the DOE; raises DuplicatePoint if any new point collides."""
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        G_new = np.asarray(G_new, dtype=float).ravel()
        merged = DesignOfExperiments(np.vstack([self.X, X_new]), np.concatenate([self.G, G_new]))
        self.X, self.G = merged.X, merged.G

    def is_duplicate(self, x):
        """True where candidate rows collide with current DOE points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, extent = self._normalizer()
        Z = (self.X - lo) / extent
        zq = (x - lo) / extent
        d2 = ((zq[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
        return d2.min(axis=1) < DEDUP_TOL**2

    def save(self, path, names=None, echo=None):
        names = names or [f"x{i}" for i in range(self.n)]
        lines = []
        if echo:
            for k in sorted(echo):
                lines.append(f"# {k}={echo[k]}")
        lines.append(",".join(list(names) + ["g"]))
        for xi, gi in zip(self.X, self.G):
            lines.append(",".join(repr(float(v)) for v in xi) + "," + repr(float(gi)))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        rows = []
        with open(path) as fh:
            header = None
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if header is None:
                    header = line.split(",")
                    continue
                rows.append([float(v) for v in line.split(",")])
        if header is None or not rows:
            raise ValueError(f"no observations in {path}")
        arr = np.asarray(rows)
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True)
class CorrelationModel:
    """Anisotropic generalized-exponential autocorrelation."""

    lengths: np.ndarray
    s: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))
        if not (1.0 <= self.s <= 2.0):
            raise ValueError(f"exponent s must lie in [1, 2], got {self.s}")
        if np.any(self.lengths <= 0.0):
            raise ValueError("correlation lengths must be positive")


def correlation(h, corr):
    """exp(-sum_k (h_k / l_k)^s) for per-dimension distances h >= 0."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    t = (h / corr.lengths) ** corr.s
    out = np.exp(-t.sum(axis=1))
    return out if out.size > 1 else float(out[0])


def _basis_matrix(Z, basis):
    m, n = Z.shape
    if basis == "constant":
        return np.ones((m, 1))
    if basis == "linear":
        return np.hstack([np.ones((m, 1)), Z])
    if basis == "quadratic":
        cols = [np.ones((m, 1)), Z]
        for i in range(n):
            for j in range(i, n):
                cols.append((Z[:, i] * Z[:, j])[:, None])
        return np.hstack(cols)
    raise ValueError(f"unknown basis {basis!r}")


def basis_size(basis, n):
    """Number of trend coefficients for `n` active input dimensions."""
    if basis == "constant":
        return 1
    if basis == "linear":
        return 1 + n
    if basis == "quadratic":
        return 1 + n + n * (n + 1) // 2
    raise ValueError(f"unknown basis {basis!r}")


def largest_feasible_basis(requested, m, n):
    """Richest basis not richer than `requested` that keeps m > p."""
    order = ["constant", "linear", "quadratic"]
    for b in reversed(order[: order.index(requested) + 1]):
        if m > basis_size(b, n):
            return b
    return "constant"


def _corr_matrix(Z, lengths, s):
    # pairwise per-dimension distances in normalized space
    D = np.abs(Z[:, None, :] - Z[None, :, :])
    return np.exp(-((D / lengths) ** s).sum(axis=2))


def _chol_with_jitter(R):
    """Cholesky of R with escalating diagonal jitter, 1e-10 up to 1e-6."""
    tau = 0.0
    for tau in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            L = linalg.cholesky(R + tau * np.eye(R.shape[0]), lower=True)
            return L, tau
        except linalg.LinAlgError:
            continue
    raise SingularCorrelation("correlation matrix singular beyond jitter repair")


class KrigingModel:
    """Fitted kriging surrogate; immutable, safe for concurrent predicts."""

    def __init__(self, doe, basis, corr, beta, sigma2, internals, fit_info):
        self.doe = doe
        self.basis = basis
        self.corr = corr
        self.beta = beta
        self.sigma2 = sigma2
        self._int = internals
        self.fit_info = fit_info

    # fixed batch width: LAPACK triangular solves change their blocking with
    # the number of right-hand sides, so every chunk is padded to this width
    # to keep batch and pointwise predictions bitwise identical
    _BLOCK = 64

    def predict(self, X):
        """Predictive mean and standard deviation at query points.

        X may be a single point (n,) or a batch (q, n); returns matching
        scalars or (q,) arrays.  Queries that coincide with DOE points (to
        the dedup tolerance) return the observed value with zero deviation.
        """
        one = np.ndim(X) == 1
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = X.shape[0]
        mu = np.empty(q)
        sd = np.empty(q)
        blk = self._BLOCK
        for a in range(0, q, blk):
            b = min(a + blk, q)
            chunk = X[a:b]
            if b - a < blk:
                chunk = np.vstack([chunk, np.repeat(chunk[-1:], blk - (b - a), axis=0)])
            m_c, s_c = self._predict_block(chunk)
            mu[a:b], sd[a:b] = m_c[: b - a], s_c[: b - a]
        if one:
            return float(mu[0]), float(sd[0])
        return mu, sd

    def _predict_block(self, X):
        it = self._int
        Z = (X - it["lo"]) / it["extent"]
        Zd = it["Z"]
        if self.corr.s == 2.0:
            # squared distances via the expansion trick (two small GEMMs)
            Ql = Z / it["lengths"]
            T = (
                (Ql * Ql).sum(axis=1)[:, None]
                + it["zl_norm2"][None, :]
                - 2.0 * Ql @ it["Zl"].T
            )
            np.clip(T, 0.0, None, out=T)
            d2 = (
                (Z * Z).sum(axis=1)[:, None]
                + it["z_norm2"][None, :]
                - 2.0 * Z @ Zd.T
            )
            np.clip(d2, 0.0, None, out=d2)
        else:
            T = np.zeros((X.shape[0], Zd.shape[0]))
            for k in range(Z.shape[1]):
                T += (np.abs(Z[:, k, None] - Zd[None, :, k]) / it["lengths"][k]) ** self.corr.s
            d2 = ((Z[:, None, :] - Zd[None, :, :]) ** 2).sum(axis=2)
        r = np.exp(-T)
        F = _basis_matrix(Z[:, it["basis_cols"]], self.basis)
        # reduction-based contractions keep batch and pointwise evaluation
        # bitwise identical (no BLAS kernel/blocking dependence on q)
        mu = (F * self.beta).sum(axis=1) + (r * it["alpha"]).sum(axis=1)
        z = linalg.solve_triangular(it["L"], r.T, lower=True, check_finite=False)
        u = np.einsum("jp,jq->pq", it["LinvF"], z) - F.T
        v = linalg.solve_triangular(it["Lg"], u, lower=True, check_finite=False)
        var = self.sigma2 * (1.0 - np.sum(z * z, axis=0) + np.sum(v * v, axis=0))
        sd = np.sqrt(np.maximum(var, 0.0))
        # exact interpolation at DOE points: snap within the dedup tolerance
        # (nearest by the fast expansion, then an exact cancellation-free
        # distance for just those pairs)
        nearest = d2.argmin(axis=1)
        exact = ((Z - Zd[nearest]) ** 2).sum(axis=1)
        hit = exact < DEDUP_TOL**2
        if np.any(hit):
            mu[hit] = self.doe.G[nearest[hit]]
            sd[hit] = 0.0
        return mu, sd


def _profile_nll(log_l, Z, F, Y, s, m):
    """Profile negative log-likelihood criterion m*log(sigma2) + log|R|."""
    lengths = np.exp(log_l)
    R = _corr_matrix(Z, lengths, s)
    try:
        L, _ = _chol_with_jitter(R)
    except SingularCorrelation:
        return 1e30
    LinvF = linalg.solve_triangular(L, F, lower=True)
    LinvY = linalg.solve_triangular(L, Y, lower=True)
    G = LinvF.T @ LinvF
    try:
        Lg = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError:
        return 1e30
    w = linalg.solve_triangular(Lg, LinvF.T @ LinvY, lower=True)
    beta = linalg.solve_triangular(Lg.T, w, lower=False)
    resid = LinvY - LinvF @ beta
    sigma2 = float(resid @ resid) / m
    if sigma2 <= 0.0:
        sigma2 = 1e-300
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return m * np.log(sigma2) + logdet


def fit(doe, basis="constant", s=2.0, length_bounds=(1e-2, 10.0), n_starts=5,
        extra_starts=None):
    """Fit a kriging model, maximizing the profile likelihood over lengths.

    `length_bounds` are relative to the per-dimension DOE extent (inputs are
    normalized to the unit box, so the default searches [1e-2, 10] there).
    Dimensions with zero observed extent are held fixed and excluded from
    the search.  `extra_starts` may carry raw-unit length vectors (e.g. the
    previous fit when the DOE grows) used as additional search starts.
    """
    if basis not in BASES:
        raise ValueError(f"basis must be one of {BASES}")
    m, n = doe.m, doe.n
    lo = doe.X.min(axis=0)
    extent_raw = doe.X.max(axis=0) - lo
    active = extent_raw > 0.0
    extent = np.where(active, extent_raw, 1.0)
    Z = (doe.X - lo) / extent
    # regression basis over the active dimensions only: constant input
    # columns would make the trend normal matrix singular
    basis_cols = np.flatnonzero(active)
    F = _basis_matrix(Z[:, basis_cols], basis)
    p = F.shape[1]
    if m <= p:
        raise RankDeficientTrend(
            f"need more observations ({m}) than trend coefficients ({p})"
        )
    Y = doe.G.copy()

    lb, ub = np.log(length_bounds[0]), np.log(length_bounds[1])
    n_act = int(active.sum())
    if n_act == 0:
        raise KrigingError("all input dimensions are degenerate")

    def expand(log_l_act):
        full = np.zeros(n)
        full[active] = log_l_act
        return full

    def objective(log_l_act):
        return _profile_nll(expand(log_l_act), Z, F, Y, s, m)

    start_vecs = [
        np.full(n_act, s0)
        for s0 in np.log(np.geomspace(length_bounds[0] * 1.5, length_bounds[1] / 1.5, n_starts))
    ]
    for raw in extra_starts or []:
        raw = np.asarray(raw, dtype=float)
        if raw.shape == (n,):
            vec = np.log(np.clip(raw[active] / extent[active],
                                 length_bounds[0], length_bounds[1]))
            if np.all(np.isfinite(vec)):
                start_vecs.append(vec)
    trials = []
    for v0 in start_vecs:
        res = minimize(
            objective,
            v0,
            method="L-BFGS-B",
            bounds=[(lb, ub)] * n_act,
        )
        trials.append((float(res.fun), np.exp(res.x)))
    best_val = min(t[0] for t in trials)
    # ties broken toward the smallest lengths (the more conservative model)
    tied = [t for t in trials if t[0] <= best_val + 1e-8 * (1.0 + abs(best_val))]
    lengths_act = min(tied, key=lambda t: float(np.linalg.norm(t[1])))[1]

    lengths = np.ones(n)
    lengths[active] = lengths_act
    R = _corr_matrix(Z, lengths, s)
    L, tau = _chol_with_jitter(R)
    LinvF = linalg.solve_triangular(L, F, lower=True)
    LinvY = linalg.solve_triangular(L, Y, lower=True)
    G = LinvF.T @ LinvF
    try:
        Lg = linalg.cholesky(G, lower=True)
    except linalg.LinAlgError as exc:
        raise RankDeficientTrend("F'R^-1F singular: basis too rich for DOE") from exc
    w = linalg.solve_triangular(Lg, LinvF.T @ LinvY, lower=True)
    beta = linalg.solve_triangular(Lg.T, w, lower=False)
    resid_n = LinvY - LinvF @ beta
    sigma2 = float(resid_n @ resid_n) / m
    alpha = linalg.solve_triangular(L.T, resid_n, lower=False)

    raw_lengths = np.where(active, lengths * extent, np.inf)
    corr = CorrelationModel(lengths=raw_lengths, s=s)
    Zl = Z / lengths
    internals = {
        "lo": lo,
        "extent": extent,
        "Z": Z,
        "basis_cols": basis_cols,
        "L": L,
        "LinvF": LinvF,
        "Lg": Lg,
        "alpha": alpha,
        "lengths": lengths,
        "Zl": Zl,
        "zl_norm2": (Zl * Zl).sum(axis=1),
        "z_norm2": (Z * Z).sum(axis=1),
        "jitter": tau,
    }
    fit_info = {
        "nll": best_val,
        "starts": [(float(v), l.tolist()) for v, l in trials],
        "jitter": tau,
        "basis": basis,
        "s": s,
    }
    return KrigingModel(doe, basis, corr, beta, sigma2, internals, fit_info)
