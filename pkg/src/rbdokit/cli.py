"""Command-line front end: rbdo / reliability / refine / bench subcommands."""

import argparse
import os
import sys

import numpy as np

from . import bench
from .artifacts import write_history, write_refine_trace, write_summary
from .augmented import build_space
from .kriging import DesignOfExperiments, fit
from .optimizer import NonConvergence, RbdoConfig, run_rbdo
from .problemfile import ProblemFileError, load_problem
from .evalproto import ExternalEvaluator, ProtocolError
from .refine import (
    BoxWeight,
    BudgetExhausted,
    EvalBudget,
    SphereWeight,
    refine_until_accurate,
)
from .reliability import LimitState, SubsetConfig, crude_mc, subset_simulation, \
    surrogate_mean_reliability
from .util import derive_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_BUDGET = 4
EXIT_PROTOCOL = 5


class _CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _resolve_problem(args):
    """Benchmark name or problem-file path -> (problem, overrides, closeables)."""
    ref = args.problem
    if ref in bench.BENCHMARKS:
        kwargs = {}
        if getattr(args, "theta0", None):
            kwargs["theta0"] = tuple(_parse_theta(args.theta0))
        bm = bench.get_benchmark(ref, **kwargs)
        return bm.problem, {}, []
    if os.path.exists(ref):
        try:
            return load_problem(ref, evaluator_procs=getattr(args, "evaluator_procs", 1))
        except ProblemFileError as exc:
            raise _CliError(str(exc), EXIT_CONFIG) from exc
    raise _CliError(
        f"unknown problem {ref!r}: not a benchmark ({', '.join(sorted(bench.BENCHMARKS))}) "
        f"and no such file", EXIT_CONFIG,
    )


def _parse_theta(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise _CliError(f"bad theta {text!r}: {exc}", EXIT_CONFIG) from exc


def _apply_overrides(problem, config, args, overrides):
    merged = dict(overrides)
    for key in ("n_level", "p0", "max_outer", "budget"):
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            merged[key] = v
    if getattr(args, "eps_beta", None) is not None:
        problem.refine.margin.eps_beta = args.eps_beta
    if getattr(args, "k_add", None) is not None:
        problem.refine.k_add = args.k_add
    if getattr(args, "k_init", None) is not None:
        problem.refine.k_init = args.k_init
    if "n_level" in merged:
        config.subset = SubsetConfig(n_per_level=int(float(merged["n_level"])),
                                     p0=config.subset.p0)
    if "p0" in merged:
        config.subset = SubsetConfig(n_per_level=config.subset.n_per_level,
                                     p0=float(merged["p0"]))
    if "max_outer" in merged:
        config.max_outer = int(merged["max_outer"])
    if "budget" in merged:
        config.max_true_evals = int(float(merged["budget"]))
    return config


def _echo(args, problem, config):
    echo = {
        "problem": problem.name,
        "seed": args.seed,
        "eps_beta": problem.refine.margin.eps_beta,
        "k_init": problem.refine.k_init,
        "k_add": problem.refine.k_add,
        "n_per_level": config.subset.n_per_level,
        "p0": config.subset.p0,
        "budget": config.max_true_evals,
        "max_outer": config.max_outer,
        "basis": problem.fit_options.get("basis", "constant"),
    }
    return echo


def _outdir(args):
    out = args.out or "rbdo-out"
    os.makedirs(out, exist_ok=True)
    return out


def _attach_evaluator(problem, args, closeables):
    if getattr(args, "evaluator", None):
        if len(problem.performances) != 1:
            raise _CliError("--evaluator requires a single-performance problem",
                            EXIT_CONFIG)
        ev = ExternalEvaluator(args.evaluator, args.evaluator_procs)
        closeables.append(ev)
        problem.performances[0].fn = ev


def cmd_rbdo(args):
    problem, overrides, closeables = _resolve_problem(args)
    if problem.theta0.size == 0:
        raise _CliError(f"problem {problem.name!r} has no design variables", EXIT_CONFIG)
    _attach_evaluator(problem, args, closeables)
    config = _apply_overrides(problem, RbdoConfig(), args, overrides)
    out = _outdir(args)
    echo = _echo(args, problem, config)
    perf_names = [p.name for p in problem.performances]
    status = EXIT_OK
    try:
        try:
            outcome = run_rbdo(problem, config, seed=args.seed)
        except NonConvergence as exc:
            outcome = exc.outcome
            status = EXIT_NONCONVERGENCE
        except BudgetExhausted as exc:
            outcome = getattr(exc, "outcome", None)
            print(f"error: {exc}", file=sys.stderr)
            if outcome is not None:
                write_history(os.path.join(out, "history.csv"), outcome.history,
                              problem.design_names, perf_names, echo)
            return EXIT_BUDGET
    finally:
        for c in closeables:
            c.close()

    write_history(os.path.join(out, "history.csv"), outcome.history,
                  problem.design_names, perf_names, echo)
    summary = {
        "config": {k: v for k, v in echo.items()},
        "status": outcome.status,
        "theta": outcome.theta.tolist(),
        "design_names": problem.design_names,
        "cost": outcome.cost,
        "total_evals": outcome.total_evals,
        "performances": [],
    }
    for p in outcome.per_performance:
        write_refine_trace(os.path.join(out, f"refine_{p['name']}.csv"),
                           p["refine_trace"], echo)
        p["doe"].save(os.path.join(out, f"doe_{p['name']}.csv"),
                      names=problem.rv.names, echo=echo)
        summary["performances"].append({
            "name": p["name"], "target": p["target"], "beta": p["beta"],
            "p_f": p["p_f"], "cov": p["cov"], "bracket": p["bracket"],
            "evals": p["evals"], "doe_size": p["doe_size"],
        })
    write_summary(os.path.join(out, "summary.json"), summary)
    theta_s = ", ".join(f"{nm}={v:.6g}" for nm, v in zip(problem.design_names, outcome.theta))
    print(f"{outcome.status}: {theta_s} cost={outcome.cost:.6g} "
          f"evals={outcome.total_evals}")
    for p in summary["performances"]:
        print(f"  {p['name']}: beta={p['beta']:.3f} (target {p['target']}) "
              f"bracket=[{p['bracket']['beta_minus']:.3f}, {p['bracket']['beta_plus']:.3f}] "
              f"evals={p['evals']}")
    if outcome.status != "converged" and status == EXIT_OK:
        status = EXIT_NONCONVERGENCE
    return status


def cmd_reliability(args):
    problem, overrides, closeables = _resolve_problem(args)
    _attach_evaluator(problem, args, closeables)
    config = _apply_overrides(problem, RbdoConfig(), args, overrides)
    theta = _parse_theta(args.theta) if args.theta else problem.theta0
    if theta.size != problem.theta0.size:
        raise _CliError("theta dimension mismatch", EXIT_CONFIG)
    if theta.size and (np.any(theta < problem.design_box[:, 0])
                       or np.any(theta > problem.design_box[:, 1])):
        raise _CliError("theta outside the design box", EXIT_CONFIG)
    out = _outdir(args)
    echo = _echo(args, problem, config)
    echo.update({"method": args.method, "n": args.n, "theta": args.theta})

    surrogate = None
    if args.surrogate:
        doe = DesignOfExperiments.load(args.surrogate)
        surrogate = fit(doe, **problem.fit_options)

    results = []
    try:
        for l, perf in enumerate(problem.performances):
            rng = derive_rng(args.seed, "reliability", l)
            if surrogate is not None:
                res = surrogate_mean_reliability(surrogate, problem.rv, theta,
                                                 config.subset, rng)
            elif args.method == "mc":
                res = crude_mc(LimitState(perf.fn, perf.name), problem.rv, theta,
                               int(float(args.n)), rng)
            else:
                cfg = SubsetConfig(n_per_level=config.subset.n_per_level,
                                   p0=config.subset.p0)
                res = subset_simulation(LimitState(perf.fn, perf.name), problem.rv,
                                        theta, cfg, rng)
            entry = {
                "name": perf.name,
                "p_f": res.p_f,
                "beta": res.beta,
                "cov": res.cov,
                "n_levels": res.n_levels,
                "n_samples": res.n_samples,
                "thresholds": [float(t) for t in res.thresholds],
                "degenerate": res.degenerate,
            }
            if res.grad_p is not None:
                entry["grad_p"] = res.grad_p.tolist()
                entry["grad_beta"] = (res.grad_beta.tolist()
                                      if res.grad_beta is not None else None)
            results.append(entry)
            print(f"{perf.name}: p_f={res.p_f:.6g} beta={res.beta:.4f} "
                  f"cov={res.cov:.3g} levels={res.n_levels}")
    finally:
        for c in closeables:
            c.close()
    write_summary(os.path.join(out, "reliability.json"),
                  {"config": echo, "theta": theta.tolist(), "results": results})
    return EXIT_OK


def cmd_refine(args):
    problem, overrides, closeables = _resolve_problem(args)
    _attach_evaluator(problem, args, closeables)
    config = _apply_overrides(problem, RbdoConfig(), args, overrides)
    theta = _parse_theta(args.theta) if args.theta else problem.theta0
    out = _outdir(args)
    echo = _echo(args, problem, config)

    n_random = problem.rv.n_random
    if args.weight == "sphere" or (args.weight == "auto" and theta.size == 0):
        weight = SphereWeight(args.beta0, n_random)
        if problem.rv.n != n_random:
            raise _CliError("sphere weighting requires a fully random vector",
                            EXIT_CONFIG)
        echo["weight"] = f"sphere(beta0={args.beta0})"
    else:
        space = build_space(problem.rv, problem.design_box, beta0=args.beta0)
        weight = BoxWeight(space)
        echo["weight"] = f"box(beta0={args.beta0})"
        for line in space.summary_lines(problem.rv.names):
            print(line)

    from .reliability import surrogate_cascade

    bracket_cfg = SubsetConfig(n_per_level=config.bracket_n, p0=config.subset.p0)
    status = EXIT_OK
    try:
        for l, perf in enumerate(problem.performances):
            doe = None
            if args.resume:
                doe = DesignOfExperiments.load(args.resume)

            def engine(model, k, _l=l):
                return surrogate_cascade(model, problem.rv, theta, k, bracket_cfg,
                                         derive_rng(args.seed, "bracket", _l))

            budget = EvalBudget(config.max_true_evals)
            trace = []
            try:
                doe, model, bracket = refine_until_accurate(
                    doe, perf.fn, weight, problem.refine, engine, budget,
                    derive_rng(args.seed, "refine", l), trace=trace.append,
                    fit_options=problem.fit_options,
                )
                print(f"{perf.name}: converged, DOE={doe.m} evals={budget.used} "
                      f"bracket=({bracket.beta_minus:.3f}, {bracket.beta_zero:.3f}, "
                      f"{bracket.beta_plus:.3f}) width={bracket.width:.4f}")
            except BudgetExhausted as exc:
                print(f"error: {perf.name}: {exc}", file=sys.stderr)
                doe, bracket = exc.doe, exc.bracket
                status = EXIT_BUDGET
            write_refine_trace(os.path.join(out, f"refine_{perf.name}.csv"),
                               trace, echo)
            if doe is not None:
                doe.save(os.path.join(out, f"doe_{perf.name}.csv"),
                         names=problem.rv.names, echo=echo)
    finally:
        for c in closeables:
            c.close()
    return status


def cmd_bench(args):
    if args.action == "list":
        for nm in sorted(bench.BENCHMARKS):
            bm = bench.get_benchmark(nm)
            p = bm.problem
            kind = "refine demo" if p.theta0.size == 0 else "rbdo"
            print(f"{nm}: {kind}, {len(p.performances)} performance(s), "
                  f"{p.theta0.size} design variable(s)")
        return EXIT_OK
    raise _CliError(f"unknown bench action {args.action!r}", EXIT_CONFIG)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="rbdo",
        description="Reliability-based design optimization with adaptive "
                    "kriging surrogates and subset simulation",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, theta0=False):
        p.add_argument("--problem", required=True,
                       help="benchmark name or problem file path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--eps-beta", type=float, default=None)
        p.add_argument("--k-init", type=int, default=None)
        p.add_argument("--k-add", type=int, default=None)
        p.add_argument("--n-level", default=None, help="subset samples per level")
        p.add_argument("--p0", type=float, default=None)
        p.add_argument("--budget", default=None, help="true-evaluation cap")
        p.add_argument("--evaluator", default=None,
                       help="external evaluator command (line protocol)")
        p.add_argument("--evaluator-procs", type=int, default=1)
        if theta0:
            p.add_argument("--theta0", default=None,
                           help="initial design, comma separated")

    p = sub.add_parser("rbdo", help="solve the design optimization problem")
    common(p, theta0=True)
    p.add_argument("--max-outer", type=int, default=None)
    p.set_defaults(fn=cmd_rbdo)

    p = sub.add_parser("reliability", help="single reliability analysis at theta")
    common(p)
    p.add_argument("--theta", default=None, help="design point, comma separated")
    p.add_argument("--method", choices=("mc", "subset"), default="subset")
    p.add_argument("--n", default="1000000", help="samples for --method mc")
    p.add_argument("--surrogate", default=None,
                   help="DOE file: analyze the fitted surrogate instead of g")
    p.set_defaults(fn=cmd_reliability)

    p = sub.add_parser("refine", help="stand-alone surrogate refinement")
    common(p)
    p.add_argument("--theta", default=None)
    p.add_argument("--weight", choices=("auto", "box", "sphere"), default="auto")
    p.add_argument("--beta0", type=float, default=8.0)
    p.add_argument("--resume", default=None, help="DOE file to continue from")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("bench", help="benchmark catalogue")
    p.add_argument("action", choices=("list",))
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
