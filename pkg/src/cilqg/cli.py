"""Command-line front end: ``cilqg plan | validate | benchmark | compare``.

Exit codes: 0 success, 1 usage or IO error, 2 solver did not produce a
converged plan, 3 Monte Carlo validation failed. A scenario argument is
either a path to a JSON document or the name of a built-in scenario. Output
directories default to ``$CILQG_OUT_DIR`` (or ``./cilqg_out``).
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from pathlib import Path

from . import artifacts
from .errors import BadParams, CILQGError, InfeasibleStart, NoProgress
from .montecarlo import monte_carlo_validate
from .scenario import BUILTIN_NAMES, resolve_scenario
from .solver import MODES, solve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_VALIDATION = 3
OUT_ENV = "CILQG_OUT_DIR"


class _Usage(Exception):
    pass


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "cilqg_out")


def _load(arg: str):
    try:
        return resolve_scenario(arg)
    except FileNotFoundError:
        raise _Usage(f"scenario not found: {arg} (built-ins: {', '.join(BUILTIN_NAMES)})") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise _Usage(f"cannot read scenario {arg}: {exc}") from None
    except CILQGError as exc:
        raise _Usage(f"invalid scenario {arg}: {exc}") from None


def _solve_mode(scenario, mode: str):
    """Run one solve; returns ``(plan or None, status, message, seconds)``."""
    sc = scenario.with_settings(mode=mode)
    t0 = time.perf_counter()
    try:
        plan = solve(sc)
        return plan, "converged", "", time.perf_counter() - t0
    except NoProgress as exc:
        return exc.result, "no_progress", str(exc), time.perf_counter() - t0
    except InfeasibleStart as exc:
        return None, "infeasible_start", str(exc), time.perf_counter() - t0


def _plan_into(out: Path, scenario, mode: str, seed: int):
    plan, status, message, seconds = _solve_mode(scenario, mode)
    if plan is not None:
        artifacts.write_plan_artifacts(out, scenario, plan, seed)
    else:
        artifacts.write_failure_summary(out, scenario, mode, status, message, seed)
    return plan, status, message, seconds


def cmd_plan(args) -> int:
    scenario = _load(args.scenario)
    out = Path(args.out or _default_out())
    plan, status, message, _ = _plan_into(out, scenario, args.mode, args.seed)
    if status != "converged":
        print(f"{args.mode}: {message}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{scenario.name} [{args.mode}] converged: cost {plan.cost:.6g}, "
          f"max constraint value {plan.max_constraint_value:.3g}, artifacts in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = _load(args.scenario)
    try:
        policy = artifacts.load_policy(args.plan_dir)
    except (OSError, ValueError) as exc:
        raise _Usage(f"cannot read plan in {args.plan_dir}: {exc}") from None
    if policy.controls.shape[0] != scenario.horizon:
        raise _Usage(f"plan horizon {policy.controls.shape[0]} does not match scenario horizon {scenario.horizon}")
    try:
        stats = monte_carlo_validate(scenario, policy, trials=args.trials, seed=args.seed, threads=args.threads)
    except BadParams as exc:
        raise _Usage(str(exc)) from None
    threshold = (1.0 - scenario.settings.p) + args.tolerance
    passed = stats.max_violation_rate <= threshold
    out = Path(args.out or args.plan_dir)
    artifacts.write_validation_report(out, stats, threshold, passed)
    verdict = "PASS" if passed else "FAIL"
    print(f"{verdict}: max per-step violation {stats.max_violation_rate:.4f} "
          f"(state {stats.max_state_violation_rate:.4f}, control {stats.max_control_violation_rate:.4f}) "
          f"vs threshold {threshold:.4f} over {stats.trials} trials; collision rate {stats.collision_rate:.4f}")
    return EXIT_OK if passed else EXIT_VALIDATION


def _timings(scenario, mode: str, repeats: int, warmup: int) -> list[float]:
    sc = scenario.with_settings(mode=mode)
    for _ in range(warmup):
        solve(sc, raise_on_stall=False)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve(sc, raise_on_stall=False)
        samples.append(1e3 * (time.perf_counter() - t0))
    return samples


def cmd_benchmark(args) -> int:
    if args.repeats < 2:
        raise _Usage("--repeats must be at least 2")
    scenarios = [_load(s) for s in args.scenarios]
    rows = []
    print(f"{'scenario':<28} {'mode':<6} {'repeats':>7} {'mean [ms]':>10} {'std [ms]':>9}")
    for sc in scenarios:
        try:
            samples = _timings(sc, args.mode, args.repeats, args.warmup)
        except InfeasibleStart as exc:
            print(f"{sc.name}: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        mean, std = statistics.fmean(samples), statistics.stdev(samples)
        rows.append((sc.name, samples))
        print(f"{sc.name:<28} {args.mode:<6} {len(samples):>7} {mean:>10.2f} {std:>9.2f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["scenario,mode,repeat,solve_time[ms]"]
        for name, samples in rows:
            lines += [f"{name},{args.mode},{i},{s:.6f}" for i, s in enumerate(samples)]
        (out / "timings.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _load(args.scenario)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if not modes or bad:
        raise _Usage(f"--modes must list values from {', '.join(MODES)}")
    out = Path(args.out or _default_out())
    header = ["mode", "status", "min_clearance[m]", "max_constraint_value", "total_cost",
              "solve_time[ms]", "max_box_excess_raw", "max_box_excess_tightened", "within_tightened_box"]
    rows = []
    code = EXIT_OK
    for mode in modes:
        plan, status, message, seconds = _plan_into(out / mode, scenario, mode, args.seed)
        if status != "converged":
            print(f"{mode}: {message}", file=sys.stderr)
            code = EXIT_SOLVER
        if plan is None:
            rows.append([mode, status, "", "", "", f"{1e3 * seconds:.3f}", "", "", ""])
            continue
        cu = plan.control_constraint_values
        tight = float(cu.max()) if cu.size else float("-inf")
        rows.append([
            mode, status,
            artifacts.fmt_float(artifacts.min_clearance(scenario, plan.states)),
            artifacts.fmt_float(plan.max_constraint_value),
            artifacts.fmt_float(plan.cost),
            f"{1e3 * seconds:.3f}",
            artifacts.fmt_float(artifacts.box_excess(scenario, plan.controls)),
            artifacts.fmt_float(tight),
            str(tight <= 0.0).lower(),
        ])
    artifacts.write_csv(out / "compare.csv", header, rows)
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    for r in [header, *rows]:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cilqg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one scenario and write artifacts")
    p.add_argument("scenario", help="scenario JSON path or built-in name")
    p.add_argument("--mode", choices=MODES, default="cilqg")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./cilqg_out)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="Monte Carlo check of a written plan")
    p.add_argument("scenario")
    p.add_argument("plan_dir")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=0.01,
                   help="allowance added to 1-p for linearization error (default 0.01)")
    p.add_argument("--out", help="report directory (default: the plan directory)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("benchmark", help="solve-time statistics over repeated runs")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--warmup", type=int, default=1, help="untimed runs before sampling (default 1)")
    p.add_argument("--mode", choices=MODES, default="cilqg")
    p.add_argument("--out", help="also write per-repeat timings.csv here")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("compare", help="run several modes and tabulate them")
    p.add_argument("scenario")
    p.add_argument("--modes", default="cilqg,cilqr,gbsp,open")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
