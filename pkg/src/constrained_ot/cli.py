"""
Command-line front end.

    cot solve INSTANCE --algorithm sns --eta 10
    cot experiment --kind ranking --n 50 --eta 2.4 --trace trace.csv
    cot pareto --n 30 --etas 10,100,1000 --output front.csv
    cot check INSTANCE --eta 5

Exit codes: 0 when the solve converged (or all checks passed), 2 when the
iteration budget ran out, 1 on any error. ``COT_LOG`` (error, info, debug)
sets the diagnostic verbosity on stderr.
"""

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import lyapunov as lyap
from .exceptions import InvalidInput, NumericalFailure, NumericalOverflow
from .experiments import ExperimentKind, ExperimentSpec, build_problem, pareto_csv, pareto_sweep, trace_csv
from .model import DualState, load_instance
from .sinkhorn import SolverConfig, Status, a_update, greedy_solve, q_values, sinkhorn_solve, x_update, y_update
from .sns import ScheduleConfig, SnsConfig, scheduled_solve, sns_solve
from .transport import cost, kl_div, round_to_feasible, violation, violation_bound

logger = logging.getLogger("constrained_ot")

ALGORITHMS = ("sinkhorn", "greedy", "sns", "scheduled")
BUNDLED = ("symmetric2x2",)

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITER = 0, 1, 2


def _setup_logging():
    level = os.environ.get("COT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def bundled_instance_path(name):
    if name not in BUNDLED:
        raise InvalidInput(f"unknown bundled instance {name!r}; choose from {', '.join(BUNDLED)}")
    return resources.files("constrained_ot").joinpath("data", f"{name}.json")


def _load(args):
    if args.bundled:
        with resources.as_file(bundled_instance_path(args.bundled)) as path:
            return load_instance(path)
    if not args.instance:
        raise InvalidInput("an instance path or --bundled NAME is required")
    return load_instance(args.instance)


def solve(problem, algorithm, eta, eta_target=None, tol=1e-6, max_iter=10_000, n1=20, n2=30, nnz_budget=None, track_metrics=False):
    """Run one of the four solvers with command-line semantics.

    For ``scheduled``, ``eta`` is the target unless ``eta_target`` is given,
    in which case ``eta`` is the starting level of the doubling sequence.
    """
    if algorithm in ("sinkhorn", "greedy"):
        cfg = SolverConfig(eta=eta, max_iter=max_iter, tol_grad_l1=tol, track_metrics=track_metrics)
        return (sinkhorn_solve if algorithm == "sinkhorn" else greedy_solve)(problem, cfg)
    sns_cfg = SnsConfig(n1=n1, n2=n2, nnz_budget=nnz_budget, tol=tol, stop_tol=tol, track_metrics=track_metrics)
    if algorithm == "sns":
        return sns_solve(problem, sns_cfg, eta=eta)
    if algorithm == "scheduled":
        target = eta if eta_target is None else eta_target
        eta_init = 1.0 if eta_target is None else eta
        sched = ScheduleConfig(final_tol=tol, final_max_iter=min(max_iter, 1000), eta_init=min(eta_init, target), sns=sns_cfg)
        return scheduled_solve(problem, target, sched)
    raise InvalidInput(f"unknown algorithm {algorithm!r}")


def result_dict(problem, report, emit_plan=False):
    out = {
        "status": report.status.value,
        "iterations": report.iterations,
        "f_final": report.final_f,
        "grad_l1_final": report.final_grad_l1,
        "cost": None,
        "violation": None,
    }
    try:
        rounded = round_to_feasible(report.plan(problem), problem.r, problem.c).plan
    except (InvalidInput, NumericalOverflow) as exc:
        logger.error("could not form the final plan: %s", exc)
        return out
    out["cost"] = cost(rounded, problem.cost)
    out["violation"] = violation(rounded, problem.constraints)
    if emit_plan:
        out["plan"] = rounded.ravel().tolist()
    return out


def _exit_code(status):
    return {Status.CONVERGED: EXIT_OK, Status.MAX_ITER: EXIT_MAX_ITER}.get(status, EXIT_ERROR)


def _write_outputs(args, problem, report):
    res = result_dict(problem, report, emit_plan=args.emit_plan)
    text = json.dumps(res, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    if args.trace:
        Path(args.trace).write_text(trace_csv(report))
    if report.status is Status.NUMERICAL_FAILURE:
        print(f"error: {report.message}", file=sys.stderr)
    return res


def run_solve(args):
    problem = _load(args)
    report = solve(
        problem,
        args.algorithm,
        args.eta,
        args.eta_target,
        args.tol,
        args.max_iter,
        args.n1,
        args.n2,
        args.nnz_budget,
        track_metrics=bool(args.trace),
    )
    _write_outputs(args, problem, report)
    return _exit_code(report.status)


def run_experiment(args):
    thresholds = None
    if args.t_I is not None or args.t_E is not None:
        if args.t_I is None or args.t_E is None:
            raise InvalidInput("--t-I and --t-E must be given together")
        thresholds = (args.t_I, args.t_E)
    spec = ExperimentSpec(args.kind, args.n, args.eta, args.seed, thresholds=thresholds, algorithm=args.algorithm)
    problem = build_problem(spec)
    report = solve(
        problem,
        args.algorithm,
        args.eta,
        args.eta_target,
        args.tol,
        args.max_iter,
        args.n1,
        args.n2,
        args.nnz_budget,
        track_metrics=True,
    )
    res = _write_outputs(args, problem, report)
    print(f"status={res['status']} cost={res['cost']!r} violation={res['violation']!r}", file=sys.stderr)
    return _exit_code(report.status)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def run_pareto(args):
    from .experiments import load_grayscale_csv

    src = load_grayscale_csv(args.source) if args.source else None
    dst = load_grayscale_csv(args.target) if args.target else None
    n = len(src[0]) if src is not None else args.n
    spec = ExperimentSpec(
        ExperimentKind.PARETO_GEOMETRIC,
        n,
        max(args.etas),
        args.seed,
        t_grid=args.t_grid,
        etas=tuple(args.etas),
        n_t=args.n_t,
        jobs=args.jobs,
        source=src,
        target=dst,
    )
    points = pareto_sweep(spec)
    text = pareto_csv(points)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    ok = sum(pt.converged for pt in points)
    print(f"front size={len(points)} converged={ok}", file=sys.stderr)
    return EXIT_OK if ok > 0 else EXIT_ERROR


# ---------------------------------------------------------------------------
# check


def _check(name, value, bound, passed, skipped=False):
    return {
        "check": name,
        "value": None if value is None else float(value),
        "bound": None if bound is None else float(bound),
        "status": "skipped" if skipped else ("pass" if passed else "fail"),
    }


def _random_state(p, eta, rng):
    return DualState(
        rng.normal(0.0, 0.5, p.n), rng.normal(0.0, 0.5, p.n), rng.normal(0.0, 0.5, p.n_constraints), eta
    )


def _fd_gradient_error(p, s, h=1e-6):
    z = s.as_vector()
    g = lyap.grad_f(p, s).flat()
    fd = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        fp = lyap.eval_f(p, DualState.from_vector(z + e, p.n, s.eta))
        fm = lyap.eval_f(p, DualState.from_vector(z - e, p.n, s.eta))
        fd[i] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(g)))))


def check_report(p, eta, seed=0, tol=1e-6, max_iter=10_000):
    """Invariant checks on one instance; every entry has a value and a bound."""
    rng = np.random.default_rng(seed)
    checks = []
    constrained = p.n_constraints > 0
    s = _random_state(p, eta, rng)
    checks.append(_check("gradient_finite_difference", _fd_gradient_error(p, s), 1e-6, None))
    checks[-1]["status"] = "pass" if checks[-1]["value"] <= 1e-6 else "fail"

    warm = a_update(p, y_update(p, x_update(p, s)))
    plan = lyap.plan_from_duals(p, warm)
    f0 = lyap.eval_f(p, warm)
    # a scaling step gains KL / eta, since f carries 1/eta in front of the plan mass
    gap = abs(eta * (lyap.eval_f(p, x_update(p, warm)) - f0) - kl_div(p.r, plan.row_sums()))
    checks.append(_check("x_step_equals_kl", gap, 1e-9, gap <= 1e-9))
    gap = abs(eta * (lyap.eval_f(p, y_update(p, warm)) - f0) - kl_div(p.c, plan.col_sums()))
    checks.append(_check("y_step_equals_kl", gap, 1e-9, gap <= 1e-9))
    if constrained:
        qa = q_values(p, warm, plan).qa
        gain = lyap.eval_f(p, a_update(p, warm)) - f0
        checks.append(_check("a_step_lower_bound", qa - gain, 1e-10, gain >= qa - 1e-10))
    else:
        checks.append(_check("a_step_lower_bound", None, None, True, skipped=True))

    report = sinkhorn_solve(p, SolverConfig(eta=eta, max_iter=max_iter, tol_grad_l1=tol))
    final = report.plan(p)
    rounded = round_to_feasible(final, p.r, p.c)
    marg = float(np.abs(rounded.plan.sum(axis=1) - p.r).max() + np.abs(rounded.plan.sum(axis=0) - p.c).max())
    checks.append(_check("rounding_marginals", marg, 1e-12, marg <= 1e-12))
    l1_bound = 2.0 * (np.abs(final.row_sums() - p.r).sum() + np.abs(final.col_sums() - p.c).sum())
    checks.append(_check("rounding_l1_change", rounded.l1_correction, l1_bound, rounded.l1_correction <= l1_bound + 1e-15))
    if constrained:
        eps = report.final_grad_l1
        viol = violation(rounded.plan, p.constraints)
        bound = violation_bound(eps, p)
        checks.append(_check("rounded_violation_bound", viol, bound, viol <= bound + 1e-15))
    else:
        checks.append(_check("rounded_violation_bound", None, None, True, skipped=True))
    return {"solver_status": report.status.value, "checks": checks}


def run_check(args):
    problem = _load(args)
    rep = check_report(problem, args.eta, args.seed, args.tol, args.max_iter)
    text = json.dumps(rep, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    failed = [c["check"] for c in rep["checks"] if c["status"] == "fail"]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _solver_flags(sp, eta_required=True):
    sp.add_argument("--algorithm", choices=ALGORITHMS, default="sinkhorn")
    sp.add_argument("--eta", type=_positive, required=eta_required, help="regularization strength")
    sp.add_argument("--eta-target", type=_positive, help="target eta for --algorithm scheduled")
    sp.add_argument("--tol", type=float, default=1e-6, help="stop at ||grad f||_1 <= tol")
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.add_argument("--n1", type=int, default=20, help="Sinkhorn warm-start sweeps (sns)")
    sp.add_argument("--n2", type=int, default=30, help="Newton steps (sns)")
    sp.add_argument("--nnz-budget", type=int, help="Hessian plan entries kept (default 5 n)")
    sp.add_argument("--output", help="result file (default: stdout)")
    sp.add_argument("--trace", help="per-iteration CSV")
    sp.add_argument("--emit-plan", action="store_true", help="include the rounded plan in the result")


def _instance_flags(sp):
    sp.add_argument("instance", nargs="?", help="instance JSON file")
    sp.add_argument("--bundled", choices=BUNDLED, help="use a bundled instance instead of a file")


def build_parser():
    parser = argparse.ArgumentParser(prog="cot", description="Entropic optimal transport with linear constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve an instance file")
    _instance_flags(sp)
    _solver_flags(sp)
    sp.set_defaults(func=run_solve)

    sp = sub.add_parser("experiment", help="generate and solve a random instance")
    sp.add_argument("--kind", choices=[ExperimentKind.RANDOM_ASSIGNMENT.value, ExperimentKind.RANKING_DCG.value], required=True)
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--t-I", dest="t_I", type=float)
    sp.add_argument("--t-E", dest="t_E", type=float)
    _solver_flags(sp)
    sp.set_defaults(func=run_experiment)

    sp = sub.add_parser("pareto", help="Manhattan vs squared-Euclidean front")
    sp.add_argument("--n", type=int, default=30, help="points per random cloud")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--etas", type=_floats, default=[10.0, 100.0, 1000.0])
    sp.add_argument("--t-grid", type=_floats, help="comma-separated budgets t")
    sp.add_argument("--n-t", type=int, default=5, help="grid size when --t-grid is absent")
    sp.add_argument("--source", help="grayscale CSV image for the source measure")
    sp.add_argument("--target", help="grayscale CSV image for the target measure")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--output", help="CSV file (default: stdout)")
    sp.set_defaults(func=run_pareto)

    sp = sub.add_parser("check", help="run the invariant checks on an instance")
    _instance_flags(sp)
    sp.add_argument("--eta", type=_positive, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.add_argument("--output")
    sp.set_defaults(func=run_check)
    return parser


def main(argv=None):
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which is reserved here for MaxIterReached
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InvalidInput, OSError, NumericalFailure, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
