"""Outer design-optimization loop with nested surrogate reliability analyses.

Polak-He iteration: a convex direction-finding subproblem combining the
cost linearization with the worst constraint linearizations (solved exactly
by active-set enumeration of its simplex dual), a Goldstein-Armijo
backtracking rule on the associated merit, and interleaved checks of the
surrogate accuracy bracket at every new design, re-refining on demand.
Reliability constraints enter in index form (target minus estimated
generalized index) with gradients from the score-function estimator.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .augmented import build_space
from .refine import (
    BoxWeight,
    BudgetExhausted,
    EvalBudget,
    MarginSpec,
    RefineConfig,
    accuracy_bracket,
    refine_until_accurate,
)
from .reliability import SubsetConfig, surrogate_cascade, surrogate_mean_reliability
from .util import derive_rng


class OptimizerError(RuntimeError):
    pass


class StepUnderflow(OptimizerError):
    """Backtracking exceeded its halving budget without sufficient decrease."""


class NumericalFailure(OptimizerError):
    """Direction subproblem could not be solved."""


class NonConvergence(OptimizerError):
    """Outer iteration limit reached; partial history attached."""

    def __init__(self, msg, outcome=None):
        super().__init__(msg)
        self.outcome = outcome


@dataclass
class Performance:
    """One expensive limit state with its reliability target."""

    name: str
    fn: object
    target_beta: float


@dataclass
class RbdoProblem:
    name: str
    rv: object
    cost: object                      # (theta, rel_results) -> (value, grad)
    soft: list                        # [(name, theta -> (value, grad)), ...]
    performances: list
    design_box: np.ndarray
    theta0: np.ndarray
    design_names: list = field(default_factory=list)
    fit_options: dict = field(default_factory=dict)
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        self.design_box = np.atleast_2d(np.asarray(self.design_box, dtype=float))
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if np.any(self.theta0 < self.design_box[:, 0]) or np.any(
            self.theta0 > self.design_box[:, 1]
        ):
            raise ValueError("theta0 outside the design box")
        if not self.design_names:
            self.design_names = [f"theta{i}" for i in range(len(self.theta0))]


@dataclass
class RbdoConfig:
    eps_theta: float = 1e-3          # step tolerance, relative to box extent
    eps_cost: float = 1e-4           # cost tolerance, relative to |c(theta0)|
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    max_outer: int = 100
    gamma_infeasibility: float = 1.0
    subset: SubsetConfig = field(default_factory=SubsetConfig)
    bracket_n: int = 20_000
    verify_n_factor: int = 4
    max_true_evals: int | None = None
    soft_tol: float = 1e-8


@dataclass
class RbdoOutcome:
    theta: np.ndarray
    cost: float
    status: str
    history: list
    per_performance: list
    total_evals: int


def solve_direction(grad_cost, constraints, gamma=1.0):
    """Polak-He direction: argmin_d max(linearizations) + 0.5 ||d||^2.

    `constraints` is a list of (value, gradient) pairs for phi_i <= 0.
    Rows are normalized by their gradient magnitudes so cost and index
    units are comparable.  Returns (d, theta_value) with theta_value <= 0,
    zero only at a stationary feasible point.
    """
    grad_cost = np.asarray(grad_cost, dtype=float)
    n = grad_cost.shape[0]
    scales = [max(float(np.linalg.norm(grad_cost)), 1e-12)]
    G = [grad_cost / scales[0]]
    vals = []
    for v, g in constraints:
        g = np.asarray(g, dtype=float)
        s = max(float(np.linalg.norm(g)), 1e-12)
        scales.append(s)
        G.append(g / s)
        vals.append(v / s)
    psi_plus = max(0.0, max(vals, default=0.0))
    b = np.array([-gamma * psi_plus] + [v - psi_plus for v in vals])
    G = np.asarray(G)
    m = G.shape[0]
    Q = G @ G.T

    best = None
    for size in range(1, m + 1):
        for S in combinations(range(m), size):
            S = list(S)
            A = np.zeros((size + 1, size + 1))
            A[:size, :size] = Q[np.ix_(S, S)]
            A[:size, size] = -1.0
            A[size, :size] = 1.0
            rhs = np.concatenate([b[S], [1.0]])
            try:
                sol = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
                if not np.allclose(A @ sol, rhs, atol=1e-9):
                    continue
            lam_S, nu = sol[:size], sol[size]
            if np.any(lam_S < -1e-12):
                continue
            lam = np.zeros(m)
            lam[S] = np.clip(lam_S, 0.0, None)
            # dual feasibility of the excluded rows
            slack = Q @ lam - b - nu
            if np.any(slack < -1e-9):
                continue
            q = 0.5 * lam @ Q @ lam - b @ lam
            if best is None or q < best[0] - 1e-15:
                best = (q, lam)
    if best is None:
        raise NumericalFailure("no KKT point found in the direction subproblem")
    q, lam = best
    d = -G.T @ lam
    theta_value = float(-q)
    if theta_value > 0.0:
        theta_value = 0.0
    return d, theta_value


def line_search(merit, d, theta_n, theta_value, config):
    """Largest backtracked step satisfying the Armijo condition on the merit.

    `merit(s)` returns the scaled merit increase of the trial point at step
    s along d (0 at s=0 for feasible points); steps are clipped so the
    normalized design stays inside the unit box.
    """
    s_max = 1.0
    for k in range(len(d)):
        if d[k] > 1e-16:
            s_max = min(s_max, (1.0 - theta_n[k]) / d[k])
        elif d[k] < -1e-16:
            s_max = min(s_max, -theta_n[k] / d[k])
    if s_max <= 1e-14:
        raise StepUnderflow("direction points outside the design box")
    s = s_max
    for _ in range(config.max_backtracks + 1):
        if merit(s) <= config.armijo_c * s * theta_value:
            return s
        s *= config.backtrack
    raise StepUnderflow(f"no sufficient decrease after {config.max_backtracks} halvings")


class _Runner:
    """State shared across one run_rbdo execution."""

    def __init__(self, problem, config, seed):
        self.problem = problem
        self.config = config
        self.seed = seed
        self.rv = problem.rv
        self.lo = problem.design_box[:, 0]
        self.extent = problem.design_box[:, 1] - problem.design_box[:, 0]
        if np.any(self.extent <= 0.0):
            raise ValueError("design box must have positive extent")
        self.space = build_space(self.rv, problem.design_box)
        self.weight = BoxWeight(self.space)
        self.n_perf = len(problem.performances)
        self.does = [None] * self.n_perf
        self.models = [None] * self.n_perf
        self.brackets = [None] * self.n_perf
        self.budgets = [EvalBudget(config.max_true_evals) for _ in range(self.n_perf)]
        self.refine_traces = [[] for _ in range(self.n_perf)]
        self.model_version = 0
        self._state_cache = {}
        bracket_cfg = SubsetConfig(
            n_per_level=config.bracket_n,
            p0=config.subset.p0,
            proposal_halfwidth=config.subset.proposal_halfwidth,
            max_levels=config.subset.max_levels,
        )
        self.bracket_cfg = bracket_cfg

    # -- surrogate management ---------------------------------------------

    def bracket_engine(self, l, theta):
        def engine(model, k):
            return surrogate_cascade(
                model, self.rv, theta, k, self.bracket_cfg,
                derive_rng(self.seed, "bracket", l),
            )
        return engine

    def refine_performance(self, l, theta):
        perf = self.problem.performances[l]
        warm = self.models[l].corr.lengths if self.models[l] is not None else None
        doe, model, bracket = refine_until_accurate(
            self.does[l],
            perf.fn,
            self.weight,
            self.problem.refine,
            self.bracket_engine(l, theta),
            self.budgets[l],
            derive_rng(self.seed, "refine", l, self.budgets[l].used),
            trace=self.refine_traces[l].append,
            fit_options=self.problem.fit_options,
            warm_lengths=warm,
        )
        self.does[l], self.models[l], self.brackets[l] = doe, model, bracket
        self.model_version += 1
        self._state_cache.clear()

    def check_brackets(self, theta):
        """Bracket at the current design; re-refine the models that fail."""
        eps = self.problem.refine.margin.eps_beta
        k = self.problem.refine.margin.k
        refined = False
        for l in range(self.n_perf):
            br = accuracy_bracket(self.models[l], self.bracket_engine(l, theta), k)
            self.brackets[l] = br
            if br.width > eps:
                self.refine_performance(l, theta)
                refined = True
        return refined

    # -- design-state evaluation -------------------------------------------

    def state(self, theta):
        key = (self.model_version, np.asarray(theta, dtype=float).tobytes())
        if key in self._state_cache:
            return self._state_cache[key]
        theta = np.asarray(theta, dtype=float)
        rel = [
            surrogate_mean_reliability(
                self.models[l], self.rv, theta, self.config.subset,
                derive_rng(self.seed, "reliability", l), with_grad=True,
            )
            for l in range(self.n_perf)
        ]
        c, grad_c = self.problem.cost(theta, rel)
        softs = [fn(theta) for _, fn in self.problem.soft]
        st = {
            "theta": theta,
            "rel": rel,
            "cost": float(c),
            "grad_cost": np.asarray(grad_c, dtype=float),
            "soft": [float(v) for v, _ in softs],
            "soft_grads": [np.asarray(g, dtype=float) for _, g in softs],
        }
        self._state_cache[key] = st
        return st

    def scaled_rows(self, st):
        """Cost gradient and constraint (value, gradient) pairs in
        normalized design coordinates."""
        gc = st["grad_cost"] * self.extent
        cons = []
        for v, g in zip(st["soft"], st["soft_grads"]):
            cons.append((v, g * self.extent))
        for l, r in enumerate(st["rel"]):
            target = self.problem.performances[l].target_beta
            gb = r.grad_beta if r.grad_beta is not None else np.zeros(len(self.extent))
            cons.append((target - r.beta, -gb * self.extent))
        return gc, cons


def _polish_soft_feasibility(problem, theta, lo, extent, tol, max_iters=5):
    """Least-norm projection onto the soft-feasible set (normalized coords).

    The outer loop parks within simulation noise of the optimum; tiny
    residual violations of the cheap deterministic constraints are removed
    here without touching the reliability state beyond that noise level.
    """
    theta = theta.copy()
    for _ in range(max_iters):
        viol = []
        for _, fn in problem.soft:
            v, g = fn(theta)
            if v > tol:
                viol.append((float(v), np.asarray(g, dtype=float) * extent))
        if not viol:
            break
        A = np.array([g for _, g in viol])
        b = np.array([v for v, _ in viol])
        # least-norm d with A d = -b (equality on the violated set)
        d, *_ = np.linalg.lstsq(A, -b, rcond=None)
        theta_n = np.clip((theta - lo) / extent + d, 0.0, 1.0)
        theta = lo + theta_n * extent
    return theta


def run_rbdo(problem, config=None, seed=0, log=None):
    """Nested surrogate-based RBDO (adaptive refinement + Polak-He outer loop).

    Returns an RbdoOutcome; raises NonConvergence with the partial outcome
    attached if the outer iteration limit is hit, and propagates
    BudgetExhausted from refinement.
    """
    config = config or RbdoConfig()
    run = _Runner(problem, config, seed)
    say = log or (lambda *_: None)
    eps_b = problem.refine.margin.eps_beta

    theta = problem.theta0.copy()
    theta_n = (theta - run.lo) / run.extent
    history = []

    def partial_outcome(status):
        return RbdoOutcome(theta=theta, cost=np.nan, status=status, history=history,
                           per_performance=[], total_evals=sum(b.used for b in run.budgets))

    try:
        for l in range(run.n_perf):
            run.refine_performance(l, theta)
    except BudgetExhausted as exc:
        exc.outcome = partial_outcome("budget")
        raise
    cost_scale = None
    underflows = 0
    status = None
    j = 0
    while j < config.max_outer:
        st = run.state(theta)
        if cost_scale is None:
            cost_scale = max(abs(st["cost"]), 1.0)
        gc, cons = run.scaled_rows(st)
        d, theta_val = solve_direction(gc, cons, config.gamma_infeasibility)

        # frozen row scales for the merit at this iterate
        s_c = max(float(np.linalg.norm(gc)), 1e-12)
        s_i = [max(float(np.linalg.norm(g)), 1e-12) for _, g in cons]
        base_cons = [v / s for (v, _), s in zip(cons, s_i)]
        psi_plus = max(0.0, max(base_cons, default=0.0))
        base_cost = st["cost"] / s_c

        def merit(s):
            trial = np.clip(theta_n + s * d, 0.0, 1.0)
            st_t = run.state(run.lo + trial * run.extent)
            _, cons_t = run.scaled_rows(st_t)
            terms = [st_t["cost"] / s_c - base_cost - config.gamma_infeasibility * psi_plus]
            terms += [v / s - psi_plus for (v, _), s in zip(cons_t, s_i)]
            return max(terms)

        step = 0.0
        if theta_val < -1e-14:
            try:
                step = line_search(merit, d, theta_n, theta_val, config)
                underflows = 0
            except StepUnderflow:
                underflows += 1
        else:
            underflows += 1

        theta_n_new = np.clip(theta_n + step * d, 0.0, 1.0)
        theta_new = run.lo + theta_n_new * run.extent
        try:
            refined = run.check_brackets(theta_new)
        except BudgetExhausted as exc:
            theta = theta_new
            exc.outcome = partial_outcome("budget")
            raise
        st_new = run.state(theta_new)

        rec = {
            "iter": j,
            "theta": theta_new.tolist(),
            "cost": st_new["cost"],
            "step": step,
            "direction": d.tolist(),
            "soft": st_new["soft"],
            "evals": [b.used for b in run.budgets],
            "refined": refined,
        }
        for l, r in enumerate(st_new["rel"]):
            br = run.brackets[l]
            rec[f"beta_{l}"] = r.beta
            rec[f"beta_minus_{l}"] = br.beta_minus
            rec[f"beta_plus_{l}"] = br.beta_plus
            rec[f"cov_{l}"] = r.cov
        history.append(rec)
        say(rec)

        # Optimize flag: keep iterating while the design still moves, the
        # cost still moves, or any constraint is violated beyond noise
        step_small = np.linalg.norm(theta_n_new - theta_n) <= config.eps_theta
        cost_small = abs(st_new["cost"] - st["cost"]) <= config.eps_cost * cost_scale
        soft_ok = all(v <= config.soft_tol for v in st_new["soft"])
        beta_ok = True
        for l, r in enumerate(st_new["rel"]):
            slack = run.brackets[l].width + 3.0 * r.beta_std
            if r.beta < problem.performances[l].target_beta - slack:
                beta_ok = False
        brackets_ok = all(br.width <= eps_b for br in run.brackets)

        theta, theta_n = theta_new, theta_n_new
        j += 1
        stationary = step_small and cost_small
        if (stationary or underflows >= 2) and not soft_ok:
            # park point is within noise of the optimum but marginally outside
            # the cheap deterministic constraints: project back onto them
            theta = _polish_soft_feasibility(problem, theta, run.lo, run.extent,
                                             config.soft_tol)
            theta_n = (theta - run.lo) / run.extent
            st_pol = run.state(theta)
            soft_ok = all(v <= config.soft_tol for v in st_pol["soft"])
        if stationary and soft_ok and beta_ok and brackets_ok:
            status = "converged"
            break
        if underflows >= 2:
            status = "converged" if (soft_ok and beta_ok and brackets_ok) else "stalled"
            break

    per_perf = []
    for l in range(run.n_perf):
        verify_cfg = SubsetConfig(
            n_per_level=config.subset.n_per_level * config.verify_n_factor,
            p0=config.subset.p0,
        )
        ver = surrogate_mean_reliability(
            run.models[l], run.rv, theta, verify_cfg,
            derive_rng(seed, "verify", l), with_grad=False,
        )
        per_perf.append({
            "name": problem.performances[l].name,
            "target": problem.performances[l].target_beta,
            "beta": ver.beta,
            "p_f": ver.p_f,
            "cov": ver.cov,
            "bracket": run.brackets[l].as_dict(),
            "evals": run.budgets[l].used,
            "doe_size": run.does[l].m,
            "refine_trace": run.refine_traces[l],
            "doe": run.does[l],
        })

    st = run.state(theta)
    outcome = RbdoOutcome(
        theta=theta,
        cost=st["cost"],
        status=status or "max_outer",
        history=history,
        per_performance=per_perf,
        total_evals=sum(b.used for b in run.budgets),
    )
    if status is None:
        raise NonConvergence(f"no convergence in {config.max_outer} iterations", outcome)
    return outcome
