"""Built-in benchmark problems and their reference solutions.

All internal units are N, mm, MPa (= N/mm^2) and kg; inputs quoted in kN,
GPa, m or kg/m^3 are converted at problem build.  Gravity stays in m/s^2
because kg * m/s^2 = N combines with kg/mm^3 * mm^3 directly.
"""

from dataclasses import dataclass, field

import numpy as np

from .optimizer import Performance, RbdoProblem
from .prob import Marginal, RandomVector
from .refine import MarginSpec, RefineConfig

GRAVITY = 9.81  # m/s^2

# strut inclined 60 degrees from vertical: the weight-cost coefficient
# 4*sqrt(3)/9 equals L_strut/L, which forces sin = sqrt(3)/2
STRUT_SIN2 = 0.75
STRUT_INV_COS = 2.0


@dataclass
class BenchmarkProblem:
    name: str
    problem: RbdoProblem
    reference: dict = field(default_factory=dict)
    alt_starts: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Elastic buckling of a straight column
# ---------------------------------------------------------------------------

COLUMN_LENGTH = 3000.0      # mm
COLUMN_E_MEAN = 10_000.0    # MPa
COLUMN_DET_SIDE = 200.0     # mm, deterministic design saturating g = 0

# service load calibrated so the 200 x 200 deterministic design sits exactly
# on the mean limit state
COLUMN_F_SER = (
    np.pi**2 * COLUMN_E_MEAN * COLUMN_DET_SIDE * COLUMN_DET_SIDE**3
    / (12.0 * COLUMN_LENGTH**2)
)


def column_limit_state(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    E, b, h, L = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return np.pi**2 * E * b * h**3 / (12.0 * L**2) - COLUMN_F_SER


def _column_lognormal_params():
    zeta_e = np.sqrt(np.log1p(0.15**2))
    zeta_s = np.sqrt(np.log1p(0.05**2))
    lam_e = np.log(COLUMN_E_MEAN) - 0.5 * zeta_e**2
    return zeta_e, zeta_s, lam_e


def column_analytic_beta(theta):
    """Reliability index of the column limit state (exact: the transformed
    limit state is linear in standard normal space)."""
    zeta_e, zeta_s, lam_e = _column_lognormal_params()
    mu_b, mu_h = float(theta[0]), float(theta[1])
    lam_b = np.log(mu_b) - 0.5 * zeta_s**2
    lam_h = np.log(mu_h) - 0.5 * zeta_s**2
    num = (
        np.log(np.pi**2 / (12.0 * COLUMN_F_SER))
        + lam_e + lam_b + 3.0 * lam_h - 2.0 * np.log(COLUMN_LENGTH)
    )
    den = np.sqrt(zeta_e**2 + zeta_s**2 + 9.0 * zeta_s**2)
    return float(num / den)


def column_analytic_optimum(target_beta=3.0):
    """Closed-form optimum: both constraints saturate, square cross section.

    Returns (lambda_star, mu_star): the common log-scale location of the
    width and height marginals, and the corresponding common mean.
    """
    zeta_e, zeta_s, lam_e = _column_lognormal_params()
    den = np.sqrt(zeta_e**2 + zeta_s**2 + 9.0 * zeta_s**2)
    lam_star = 0.25 * (
        target_beta * den
        - np.log(np.pi**2 / (12.0 * COLUMN_F_SER))
        - lam_e
        + 2.0 * np.log(COLUMN_LENGTH)
    )
    mu_star = float(np.exp(lam_star + 0.5 * zeta_s**2))
    return float(lam_star), mu_star


def column_problem(theta0=(200.0, 200.0)):
    rv = RandomVector(
        [
            Marginal("lognormal", mean=COLUMN_E_MEAN, cov=0.15, name="E"),
            Marginal("lognormal", cov=0.05, design=0, name="b"),
            Marginal("lognormal", cov=0.05, design=1, name="h"),
            Marginal("deterministic", mean=COLUMN_LENGTH, name="L"),
        ],
        n_design=2,
    )

    def cost(theta, rel):
        return theta[0] * theta[1], np.array([theta[1], theta[0]])

    def aspect(theta):
        return theta[1] - theta[0], np.array([-1.0, 1.0])

    problem = RbdoProblem(
        name="column",
        rv=rv,
        cost=cost,
        soft=[("h_le_b", aspect)],
        performances=[Performance("buckling", column_limit_state, 3.0)],
        design_box=np.array([[100.0, 400.0], [100.0, 400.0]]),
        theta0=np.asarray(theta0, dtype=float),
        design_names=["mu_b", "mu_h"],
        fit_options={"basis": "linear"},
        refine=RefineConfig(margin=MarginSpec(eps_beta=0.1), k_init=10, k_add=10),
    )
    lam_star, mu_star = column_analytic_optimum()
    return BenchmarkProblem(
        name="column",
        problem=problem,
        reference={
            "mu_star": mu_star,
            "lambda_star": lam_star,
            "target_beta": 3.0,
            "paper_reported_mu": 231.0,
            "paper_evals": 20,
        },
        alt_starts={"conservative": np.array([300.0, 300.0])},
    )


# ---------------------------------------------------------------------------
# Short column under oblique bending (risk-indexed cost)
# ---------------------------------------------------------------------------


def short_column_limit_state(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M1, M2, P, fy, b, h = (X[:, i] for i in range(6))
    return (
        1.0
        - 4.0 * M1 / (b * h * h * fy)
        - 4.0 * M2 / (b * b * h * fy)
        - (P / (b * h * fy)) ** 2
    )


def short_column_problem(theta0=(500.0, 500.0)):
    rv = RandomVector(
        [
            Marginal("lognormal", mean=250e6, cov=0.30, name="M1"),
            Marginal("lognormal", mean=125e6, cov=0.30, name="M2"),
            Marginal("lognormal", mean=2.5e6, cov=0.20, name="P"),
            Marginal("lognormal", mean=40.0, cov=0.10, name="fy"),
            Marginal("gaussian", cov=0.01, design=0, name="b"),
            Marginal("gaussian", cov=0.01, design=1, name="h"),
        ],
        n_design=2,
    )

    def cost(theta, rel):
        # construction cost plus expected failure cost (100 x construction)
        r = rel[0]
        base = theta[0] * theta[1]
        grad_base = np.array([theta[1], theta[0]])
        factor = 1.0 + 100.0 * r.p_f
        grad_p = r.grad_p if r.grad_p is not None else np.zeros(2)
        return base * factor, grad_base * factor + base * 100.0 * grad_p

    def ratio_low(theta):
        # mu_b / mu_h >= 1/2
        return 0.5 * theta[1] - theta[0], np.array([-1.0, 0.5])

    def ratio_high(theta):
        # mu_b / mu_h <= 2
        return theta[0] - 2.0 * theta[1], np.array([1.0, -2.0])

    problem = RbdoProblem(
        name="short-column",
        rv=rv,
        cost=cost,
        soft=[("aspect_low", ratio_low), ("aspect_high", ratio_high)],
        performances=[Performance("yield", short_column_limit_state, 3.0)],
        design_box=np.array([[100.0, 1000.0], [100.0, 1000.0]]),
        theta0=np.asarray(theta0, dtype=float),
        design_names=["mu_b", "mu_h"],
        fit_options={"basis": "linear"},
        refine=RefineConfig(margin=MarginSpec(eps_beta=0.1), k_init=50, k_add=10),
    )
    return BenchmarkProblem(
        name="short-column",
        problem=problem,
        reference={
            "cost": 2.17e5,
            "design": (379.0, 547.0),
            "beta_sim": 3.32,
            "paper_evals": 140,
            "reference_design_dsa": (372.0, 559.0),
            "ddo_design": (258.0, 500.0),
        },
    )


# ---------------------------------------------------------------------------
# Bracket structure: beam bending + strut buckling
# ---------------------------------------------------------------------------


def bracket_bending_limit_state(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P, E, fy, rho, L, wAB, wCD, t = (X[:, i] for i in range(8))
    M_B = P * L / 3.0 + rho * GRAVITY * wCD * t * L**2 / 18.0
    sigma_B = 6.0 * M_B / (wCD * t * t)
    return fy - sigma_B


def bracket_buckling_limit_state(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P, E, fy, rho, L, wAB, wCD, t = (X[:, i] for i in range(8))
    f_buckling = np.pi**2 * E * t * wAB**3 * 9.0 * STRUT_SIN2 / (48.0 * L**2)
    f_axial = STRUT_INV_COS * (1.5 * P + 0.75 * rho * GRAVITY * wCD * t * L)
    return f_buckling - f_axial


BRACKET_RHO_MEAN = 7860.0e-9  # kg/mm^3
BRACKET_L_MEAN = 5000.0       # mm
BRACKET_WEIGHT_COEF = 4.0 * np.sqrt(3.0) / 9.0


def bracket_problem(theta0=(120.0, 180.0, 220.0)):
    rv = RandomVector(
        [
            Marginal("gumbel", mean=100e3, cov=0.15, name="P"),
            Marginal("gumbel", mean=200e3, cov=0.08, name="E"),
            Marginal("lognormal", mean=225.0, cov=0.08, name="fy"),
            Marginal("weibull", mean=BRACKET_RHO_MEAN, cov=0.10, name="rho"),
            Marginal("gaussian", mean=BRACKET_L_MEAN, cov=0.05, name="L"),
            Marginal("gaussian", cov=0.05, design=0, name="wAB"),
            Marginal("gaussian", cov=0.05, design=1, name="wCD"),
            Marginal("gaussian", cov=0.05, design=2, name="t"),
        ],
        n_design=3,
    )

    c0 = BRACKET_RHO_MEAN * BRACKET_L_MEAN

    def cost(theta, rel):
        wAB, wCD, t = theta
        value = c0 * t * (BRACKET_WEIGHT_COEF * wAB + wCD)
        grad = c0 * np.array(
            [t * BRACKET_WEIGHT_COEF, t, BRACKET_WEIGHT_COEF * wAB + wCD]
        )
        return value, grad

    problem = RbdoProblem(
        name="bracket",
        rv=rv,
        cost=cost,
        soft=[],
        performances=[
            Performance("bending", bracket_bending_limit_state, 2.0),
            Performance("buckling", bracket_buckling_limit_state, 2.0),
        ],
        design_box=np.array([[50.0, 300.0]] * 3),
        theta0=np.asarray(theta0, dtype=float),
        design_names=["mu_wAB", "mu_wCD", "mu_t"],
        fit_options={"basis": "linear"},
        refine=RefineConfig(margin=MarginSpec(eps_beta=0.1), k_init=50, k_add=10),
    )
    return BenchmarkProblem(
        name="bracket",
        problem=problem,
        reference={
            "cost": 1610.0,
            "design": (59.0, 135.0, 226.0),
            "betas": (2.01, 2.03),
            "paper_evals": (100, 150),
            "sora_design": (61.0, 157.0, 209.0),
            "sora_cost": 1675.0,
        },
    )


# ---------------------------------------------------------------------------
# 2-D nonlinear refinement demo (no design variables)
# ---------------------------------------------------------------------------


def four_branch_limit_state(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    u1, u2 = X[:, 0], X[:, 1]
    s = (u1 + u2) / np.sqrt(2.0)
    b1 = 3.0 + 0.1 * (u1 - u2) ** 2 - s
    b2 = 3.0 + 0.1 * (u1 - u2) ** 2 + s
    b3 = (u1 - u2) + 7.0 / np.sqrt(2.0)
    b4 = (u2 - u1) + 7.0 / np.sqrt(2.0)
    return np.min(np.stack([b1, b2, b3, b4]), axis=0)


def waarts_demo():
    rv = RandomVector(
        [
            Marginal("gaussian", mean=0.0, std=1.0, name="u1"),
            Marginal("gaussian", mean=0.0, std=1.0, name="u2"),
        ]
    )
    problem = RbdoProblem(
        name="waarts-2d",
        rv=rv,
        cost=lambda theta, rel: (0.0, np.zeros(0)),
        soft=[],
        performances=[Performance("series", four_branch_limit_state, 2.0)],
        design_box=np.zeros((0, 2)),
        theta0=np.zeros(0),
        design_names=[],
        fit_options={"basis": "quadratic"},
        refine=RefineConfig(margin=MarginSpec(eps_beta=0.1), k_init=10, k_add=10),
    )
    return BenchmarkProblem(
        name="waarts-2d",
        problem=problem,
        reference={"p_f": 2.22e-3, "note": "series system, refinement demo only"},
    )


BENCHMARKS = {
    "column": column_problem,
    "short-column": short_column_problem,
    "bracket": bracket_problem,
    "waarts-2d": waarts_demo,
}


def get_benchmark(name, **kwargs):
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return BENCHMARKS[name](**kwargs)
