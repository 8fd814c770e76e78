"""Problem definitions from structured text files (TOML).

A problem file declares design variables (bounds, initial value), the
probabilistic model (marginals with optional design bindings), a cost
expression or external command, soft-constraint expressions, performance
functions (built-in registry names or external commands), reliability
targets and solver overrides.  Parse and validation errors carry file
positions where the TOML layer provides them.
"""

import ast
import math

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .evalproto import ExternalEvaluator
from .optimizer import Performance, RbdoProblem
from .prob import Marginal, RandomVector
from .refine import MarginSpec, RefineConfig


class ProblemFileError(ValueError):
    pass


_ALLOWED_CALLS = {
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "abs": abs,
    "min": min,
    "max": max,
}
_ALLOWED_NAMES = {"pi": math.pi, "e": math.e}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd,
    ast.Load,
)


def compile_expression(src, var_names):
    """Compile an arithmetic expression over the design variables.

    Only numeric literals, the design variable names, basic arithmetic and
    a small set of math functions are allowed.
    """
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ProblemFileError(f"bad expression {src!r}: {exc}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ProblemFileError(
                f"expression {src!r}: {type(node).__name__} not allowed"
            )
        if isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS):
                raise ProblemFileError(f"expression {src!r}: call not allowed")
        if isinstance(node, ast.Name):
            if node.id not in var_names and node.id not in _ALLOWED_CALLS \
                    and node.id not in _ALLOWED_NAMES:
                raise ProblemFileError(
                    f"expression {src!r}: unknown name {node.id!r}"
                )
    code = compile(tree, "<expression>", "eval")

    def fn(theta):
        env = dict(_ALLOWED_NAMES)
        env.update(_ALLOWED_CALLS)
        env.update(zip(var_names, np.asarray(theta, dtype=float)))
        return float(eval(code, {"__builtins__": {}}, env))

    return fn


def _with_fd_gradient(fn, extents):
    """Wrap a scalar theta-function with central-difference gradients."""

    def wrapped(theta, *_):
        theta = np.asarray(theta, dtype=float)
        v = fn(theta)
        g = np.empty(len(theta))
        for j in range(len(theta)):
            h = 1e-6 * extents[j]
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            g[j] = (fn(up) - fn(dn)) / (2.0 * h)
        return v, g

    return wrapped


def builtin_performances():
    from . import bench

    return {
        "column-buckling": bench.column_limit_state,
        "short-column-yield": bench.short_column_limit_state,
        "bracket-bending": bench.bracket_bending_limit_state,
        "bracket-buckling": bench.bracket_buckling_limit_state,
        "four-branch": bench.four_branch_limit_state,
    }


def _parse_marginal(entry, design_names):
    if "family" not in entry:
        raise ProblemFileError(f"marginal {entry.get('name', '?')!r}: missing family")
    family = str(entry["family"]).lower()
    name = entry.get("name", family)
    design = None
    if "design" in entry:
        if entry["design"] not in design_names:
            raise ProblemFileError(
                f"marginal {name!r}: unknown design variable {entry['design']!r}"
            )
        design = design_names.index(entry["design"])
    kwargs = {"name": name, "design": design}
    if family == "deterministic":
        if "value" in entry:
            kwargs["mean"] = float(entry["value"])
    else:
        if "mean" in entry:
            kwargs["mean"] = float(entry["mean"])
        if "cov" in entry:
            kwargs["cov"] = float(entry["cov"])
        if "std" in entry:
            kwargs["std"] = float(entry["std"])
    try:
        return Marginal(family, **kwargs)
    except ValueError as exc:
        raise ProblemFileError(f"marginal {name!r}: {exc}") from exc


def load_problem(path, evaluator_procs=1):
    """Parse a problem file into (RbdoProblem, solver_overrides, closeables)."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ProblemFileError(f"problem file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ProblemFileError(f"{path}: {exc}") from exc

    design = doc.get("design", {})
    if not isinstance(design, dict) or not design:
        raise ProblemFileError(f"{path}: missing [design.<name>] tables")
    design_names = list(design)
    box = []
    theta0 = []
    for nm in design_names:
        spec = design[nm]
        try:
            lo, hi = (float(v) for v in spec["bounds"])
            box.append((lo, hi))
            theta0.append(float(spec.get("init", 0.5 * (lo + hi))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProblemFileError(f"design {nm!r}: bad bounds/init: {exc}") from exc
    box = np.asarray(box)
    extents = box[:, 1] - box[:, 0]

    marginals = [_parse_marginal(e, design_names) for e in doc.get("marginal", [])]
    if not marginals:
        raise ProblemFileError(f"{path}: no [[marginal]] entries")
    rv = RandomVector(marginals, n_design=len(design_names))

    closeables = []
    cost_spec = doc.get("cost")
    if not cost_spec:
        raise ProblemFileError(f"{path}: missing [cost]")
    if "expr" in cost_spec:
        cost = _with_fd_gradient(compile_expression(cost_spec["expr"], design_names),
                                 extents)
    elif "command" in cost_spec:
        ev = ExternalEvaluator(cost_spec["command"], 1)
        closeables.append(ev)
        cost = _with_fd_gradient(lambda th: float(ev(np.asarray(th)[None, :])[0]),
                                 extents)
    else:
        raise ProblemFileError(f"{path}: [cost] needs expr or command")

    soft = []
    for entry in doc.get("soft", []):
        if "expr" not in entry:
            raise ProblemFileError(f"{path}: [[soft]] needs expr")
        nm = entry.get("name", entry["expr"])
        soft.append((nm, _with_fd_gradient(
            compile_expression(entry["expr"], design_names), extents)))

    registry = builtin_performances()
    performances = []
    for entry in doc.get("performance", []):
        nm = entry.get("name", "g")
        target = float(entry.get("target_beta", 2.0))
        if "builtin" in entry:
            key = entry["builtin"]
            if key not in registry:
                raise ProblemFileError(
                    f"performance {nm!r}: unknown builtin {key!r} "
                    f"(choose from {sorted(registry)})"
                )
            fn = registry[key]
        elif "command" in entry:
            ev = ExternalEvaluator(entry["command"], evaluator_procs)
            closeables.append(ev)
            fn = ev
        else:
            raise ProblemFileError(f"performance {nm!r}: needs builtin or command")
        performances.append(Performance(nm, fn, target))
    if not performances:
        raise ProblemFileError(f"{path}: no [[performance]] entries")

    solver = dict(doc.get("solver", {}))
    refine_cfg = RefineConfig(
        margin=MarginSpec(
            eps_beta=float(solver.pop("eps_beta", 0.1)),
        ),
        k_init=int(solver.pop("k_init", 10)),
        k_add=int(solver.pop("k_add", 10)),
        n_candidates=int(solver.pop("n_candidates", 10_000)),
    )
    fit_options = {"basis": str(solver.pop("basis", "constant"))}

    problem = RbdoProblem(
        name=str(doc.get("name", "problem")),
        rv=rv,
        cost=cost,
        soft=soft,
        performances=performances,
        design_box=box,
        theta0=np.asarray(theta0),
        design_names=design_names,
        fit_options=fit_options,
        refine=refine_cfg,
    )
    return problem, solver, closeables
