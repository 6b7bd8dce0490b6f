"""Batch front door: ``slaglab <subcommand>``.

Subcommands
-----------
solve      continuation solve of one spec, persisted to a run directory
verify     lemma suites (equivalence, appendix, jacobi, lemma-4.1,
           wang-yuan, ty-identity, sigma-divergence)
estimate   a priori estimate functionals over existing run directories
sweep      parameter grid of solves (sweep.* keys in the spec)
report     aggregate manifests, estimate rows and counterexamples

Exit codes: 0 success, 1 verification counterexample found,
2 nonconvergence, 3 invalid input.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    ContinuationError,
    DomainError,
    InfeasibleError,
    LinearSolverError,
    NonconvergenceError,
    PreconditionError,
    SlagError,
)
from .estimates import estimate_report
from .exprlang import ExprSyntaxError
from .grids import set_deterministic_reductions
from .probspec import ProblemSpec, parse_config, parse_scalar
from .runs import RunDir, load_run
from .solver import (
    ContinuationConfig,
    DirichletProblem,
    NewtonConfig,
    barrier_check,
    continuation_solve,
)
from .suites import SUITES, run_suite

EXIT_OK = 0
EXIT_COUNTEREXAMPLE = 1
EXIT_NONCONVERGENCE = 2
EXIT_INVALID = 3


def _load_spec(args) -> ProblemSpec:
    config = {}
    if args.spec:
        config = parse_config(Path(args.spec).read_text())
    spec = ProblemSpec.from_config(config)
    if getattr(args, "grid", None):
        spec.grid = args.grid
    if getattr(args, "theta", None) is not None:
        spec.theta = parse_scalar(args.theta)
    if getattr(args, "f", None):
        spec.f_source = args.f
    if getattr(args, "out", None):
        spec.out = args.out
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    if getattr(args, "deterministic", False):
        spec.deterministic = True
    spec.validate()
    return spec


def _solve_spec(spec: ProblemSpec, rundir: RunDir) -> int:
    set_deterministic_reductions(spec.deterministic)
    rundir.create()
    rundir.write_spec(spec.to_text())
    f, phi = spec.build_fields()
    problem = DirichletProblem(f=f, theta=spec.theta, phi=phi)
    cfg = ContinuationConfig(
        waypoints=spec.waypoints,
        newton=NewtonConfig(newton_tol=spec.newton_tol, max_newton=spec.max_newton),
    )
    t0 = time.perf_counter()
    try:
        u, rep = continuation_solve(problem, cfg)
    except (NonconvergenceError, ContinuationError, LinearSolverError) as exc:
        rundir.manifest["status"] = "nonconvergence"
        rundir.record_error(str(exc))
        rundir.write_manifest()
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    wall = time.perf_counter() - t0

    rundir.write_solution(u, f)
    barrier = barrier_check(u, phi, f, spec.theta)
    phi_inf = float(np.abs(phi.values[~phi.interior_mask(1)]).max())
    norms = {
        "final_residual": rep.final_residual,
        "hessian_min": rep.hessian_range[0],
        "hessian_max": rep.hessian_range[1],
        "barrier_lower_margin": barrier.lower_margin,
        "barrier_upper_margin": barrier.upper_margin,
        "barrier_domain_note": barrier.domain_note,
        "barrier_passed": barrier.passed(phi_inf),
    }
    if spec.reference:
        u_ref = spec.reference_solution()
        norms["reference_error_inf"] = float(
            np.abs(u.values - u_ref.values).max()
        )
    rundir.manifest["status"] = "solved"
    rundir.manifest["norms"] = norms
    rundir.manifest["timings"] = {
        "wall_s": wall,
        "newton_iterations": rep.iterations,
        "path": [(float(t), float(r), int(i)) for t, r, i in rep.path],
    }
    rundir.write_manifest()
    print(
        f"solved: residual {rep.final_residual:.3e}, "
        f"{sum(rep.iterations)} Newton steps, {wall:.2f}s -> {rundir.path}"
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    spec = _load_spec(args)
    out = spec.out or "runs/solve"
    return _solve_spec(spec, RunDir(out))


def cmd_verify(args) -> int:
    set_deterministic_reductions(args.deterministic)
    names = args.suite or sorted(SUITES)
    worst = EXIT_OK
    all_records = []
    for name in names:
        result = run_suite(name, args.samples, args.seed)
        for line in result.summary_lines():
            print(line)
        all_records.extend(result.counterexamples)
        if not result.passed:
            worst = EXIT_COUNTEREXAMPLE
    if args.out:
        rundir = RunDir(args.out).create()
        rundir.manifest["status"] = "verified" if worst == EXIT_OK else "failed"
        rundir.manifest["suites"] = names
        rundir.manifest["samples"] = args.samples
        rundir.manifest["seed"] = args.seed
        rundir.write_manifest()
        if all_records:
            rundir.write_counterexamples(all_records)
    return worst


def cmd_estimate(args) -> int:
    rows = []
    for run_path in args.runs:
        u, f, manifest = load_run(run_path)
        rep = estimate_report(u, f)
        row = {"run": str(run_path), **rep.as_row()}
        rows.append(row)
        print(
            f"{run_path}: R_hess={rep.r_hess:.4e} R_grad={rep.r_grad:.4e} "
            f"osc={rep.osc:.4e}"
        )
    if args.out:
        rundir = RunDir(args.out).create()
        rundir.write_rows("estimates.csv", rows)
        rundir.manifest["status"] = "estimated"
        rundir.manifest["runs"] = [str(r) for r in args.runs]
        rundir.write_manifest()
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.spec:
        print("sweep requires --spec with sweep.* keys", file=sys.stderr)
        return EXIT_INVALID
    config = parse_config(Path(args.spec).read_text())
    sweep_keys = {k[len("sweep."):]: v for k, v in config.items() if k.startswith("sweep.")}
    base = {k: v for k, v in config.items() if not k.startswith("sweep.")}
    if not sweep_keys:
        print("no sweep.* keys in spec", file=sys.stderr)
        return EXIT_INVALID
    axes = [(key, [v.strip() for v in vals.split(",")]) for key, vals in sweep_keys.items()]
    out_base = Path(args.out or base.get("run.out", "runs/sweep"))
    failures = 0
    for combo_idx, combo in enumerate(itertools.product(*[vals for _, vals in axes])):
        cfg = dict(base)
        tag_parts = []
        for (key, _), value in zip(axes, combo):
            cfg[key] = value
            tag_parts.append(f"{key.split('.')[-1]}-{value}")
        cfg["run.out"] = str(out_base / f"case{combo_idx:03d}_{'_'.join(tag_parts)}")
        spec = ProblemSpec.from_config(cfg)
        if args.deterministic:
            spec.deterministic = True
        code = _solve_spec(spec, RunDir(spec.out))
        if code != EXIT_OK:
            failures += 1
    print(f"sweep finished: {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_NONCONVERGENCE


def cmd_report(args) -> int:
    rows = []
    counterexamples = []
    for run_path in args.runs:
        path = Path(run_path)
        manifest_file = path / "manifest.json"
        if not manifest_file.exists():
            print(f"skipping {path}: no manifest", file=sys.stderr)
            continue
        manifest = json.loads(manifest_file.read_text())
        row = {"run": str(path), "status": manifest.get("status", "?")}
        for key, value in manifest.get("norms", {}).items():
            row[key] = value
        rows.append(row)
        cx = path / "counterexamples.txt"
        if cx.exists():
            counterexamples.extend(cx.read_text().splitlines())
    out = Path(args.out or "runs/report")
    rundir = RunDir(out).create()
    if rows:
        keys = sorted({k for row in rows for k in row})
        rows = [{k: row.get(k, "") for k in keys} for row in rows]
        rundir.write_rows("summary.csv", rows)
    if counterexamples:
        rundir.write_counterexamples(counterexamples)
    rundir.manifest["status"] = "reported"
    rundir.manifest["runs"] = [str(r) for r in args.runs]
    rundir.write_manifest()
    print(f"report written to {out} ({len(rows)} runs, "
          f"{len(counterexamples)} counterexamples)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slaglab",
        description="numerical laboratory for the twisted special "
        "Lagrangian equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--spec", help="path to a key=value spec file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")

    p_solve = sub.add_parser("solve", help="solve one Dirichlet problem")
    common(p_solve)
    p_solve.add_argument("--grid", type=int, help="nodes per axis (odd)")
    p_solve.add_argument("--theta", help="phase constant (number or pi expr)")
    p_solve.add_argument("--f", help="twist source: family or expression")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="run lemma verification suites")
    common(p_verify)
    p_verify.add_argument(
        "--suite",
        action="append",
        choices=sorted(SUITES),
        help="suite name (repeatable; default: all)",
    )
    p_verify.add_argument("--samples", type=int, default=10000)
    p_verify.set_defaults(func=cmd_verify, seed=0)

    p_est = sub.add_parser("estimate", help="estimate functionals over runs")
    common(p_est)
    p_est.add_argument("runs", nargs="+", help="run directories")
    p_est.set_defaults(func=cmd_estimate)

    p_sweep = sub.add_parser("sweep", help="parameter grid of solves")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="aggregate run directories")
    common(p_rep)
    p_rep.add_argument("runs", nargs="+", help="run directories")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = 0
    try:
        return args.func(args)
    except (DomainError, InfeasibleError, PreconditionError, ExprSyntaxError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonconvergenceError, ContinuationError, LinearSolverError) as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except SlagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
