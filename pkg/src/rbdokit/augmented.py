"""Augmented reliability space: one surrogate domain serving every design.

The design vector only moves the marginal distributions, so the region the
surrogates must cover is bounded by the extreme +/-beta0 quantiles of each
margin over the whole design box.  With mean-only bindings each quantile is
linear in the bound component, so the extremes sit at the box ends; a
bounded scalar search backs this up for any other dependence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .util import norm_cdf


class AugmentedSpaceError(ValueError):
    pass


class UnboundedQuantile(AugmentedSpaceError):
    """A margin's extreme quantile diverged inside the design box."""


def _extreme_quantile(marginal, z, box_lo, box_hi, theta_ref, minimum):
    """Min or max of the marginal's Phi(z)-quantile over its bound component.

    Mean-bound quantiles are linear in the bound component, so evaluating
    the two box ends is exact; a grid + bounded local search is used as a
    fallback check when the endpoints disagree with an interior grid point.
    """
    j = marginal.design
    if j is None:
        return float(marginal.quantile_z(z, theta_ref))

    def q(t):
        theta = theta_ref.copy()
        theta[j] = t
        return float(marginal.quantile_z(z, theta))

    lo, hi = box_lo[j], box_hi[j]
    cand = [q(lo), q(hi)]
    grid = np.linspace(lo, hi, 9)
    vals = [q(t) for t in grid]
    best_grid = min(vals) if minimum else max(vals)
    best_end = min(cand) if minimum else max(cand)
    if (minimum and best_grid < best_end - 1e-12 * (1 + abs(best_end))) or (
        not minimum and best_grid > best_end + 1e-12 * (1 + abs(best_end))
    ):
        # interior extremum: polish with a bounded scalar search
        sign = 1.0 if minimum else -1.0
        res = minimize_scalar(lambda t: sign * q(t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10 * (hi - lo + 1.0)})
        best = sign * res.fun
        return float(min(best, best_grid) if minimum else max(best, best_grid))
    return float(best_end)


@dataclass
class AugmentedSpace:
    """Per-margin extreme quantile bounds over the design box."""

    q_lo: np.ndarray
    q_hi: np.ndarray
    beta0: float
    box_lo: np.ndarray
    box_hi: np.ndarray

    @property
    def active(self):
        """Dimensions with genuine spread (spanned by the surrogate DOE)."""
        return self.q_hi > self.q_lo

    def summary_lines(self, names=None):
        names = names or [f"x{i}" for i in range(len(self.q_lo))]
        out = [f"augmented space (beta0={self.beta0}):"]
        for nm, lo, hi, act in zip(names, self.q_lo, self.q_hi, self.active):
            tag = "" if act else "  [fixed]"
            out.append(f"  {nm}: [{lo:.6g}, {hi:.6g}]{tag}")
        return out


def build_space(rv, design_box, beta0=8.0):
    """Extreme quantile bounds of every margin over the design box."""
    design_box = np.atleast_2d(np.asarray(design_box, dtype=float))
    if rv.n_design:
        if design_box.shape != (rv.n_design, 2):
            raise AugmentedSpaceError("design_box must be (n_design, 2)")
        box_lo, box_hi = design_box[:, 0].copy(), design_box[:, 1].copy()
        if np.any(box_lo > box_hi):
            raise AugmentedSpaceError("empty design box")
    else:
        box_lo = box_hi = np.zeros(0)
    theta_ref = 0.5 * (box_lo + box_hi)
    n = rv.n
    q_lo = np.empty(n)
    q_hi = np.empty(n)
    for i, m in enumerate(rv.marginals):
        if m.is_deterministic:
            if m.design is not None:
                q_lo[i], q_hi[i] = box_lo[m.design], box_hi[m.design]
            else:
                q_lo[i] = q_hi[i] = m.mean_value()
            continue
        q_lo[i] = _extreme_quantile(m, -beta0, box_lo, box_hi, theta_ref, minimum=True)
        q_hi[i] = _extreme_quantile(m, beta0, box_lo, box_hi, theta_ref, minimum=False)
        if not (np.isfinite(q_lo[i]) and np.isfinite(q_hi[i])):
            raise UnboundedQuantile(f"margin {m.name!r} has unbounded extreme quantiles")
        if q_lo[i] >= q_hi[i]:
            raise AugmentedSpaceError(f"margin {m.name!r}: degenerate quantile range")
    return AugmentedSpace(q_lo, q_hi, float(beta0), box_lo, box_hi)


def weight_indicator(space, v):
    """1 inside the closed quantile hyperrectangle, else 0."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != len(space.q_lo):
        raise AugmentedSpaceError("point dimension mismatch")
    inside = np.all((v >= space.q_lo) & (v <= space.q_hi), axis=1)
    out = inside.astype(float)
    return out if out.size > 1 else float(out[0])


def sphere_indicator(beta0, u):
    """1 inside the closed beta0-radius ball in standard space, else 0."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    inside = np.sqrt((u * u).sum(axis=1)) <= beta0
    out = inside.astype(float)
    return out if out.size > 1 else float(out[0])
