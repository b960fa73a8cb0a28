# Command-line front end: solve, simulate, baseline, check-convexity,
# dump-problem and paths subcommands over one scenario file.

import sys
import math
import logging
import argparse
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd

from config import SOLVER_CONFIG, SIMULATION_CONFIG, CLI_CONFIG, TOOL_VERSION, setup_logging
from topology import Scenario, load_scenario, best_path, end_to_end_success
from throughput import RateVector, ThroughputModel
from optimizer import (
    SolverConfig,
    build_problem,
    solve,
    solve_best_path,
    solve_distributed,
    nonconvexity_condition,
    render_problem,
)
from simulator import SimConfig, run, delay_bounded
from utils.errors import MpathError, ScenarioError, UsageError
from utils.report_utils import (
    audit_header,
    parse_rate_overrides,
    parse_sweep,
    single_gamma,
    write_csv,
)
from utils.topology_utils import scenario_digest

logger = logging.getLogger("mpath_cli")

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- Scenario / sweep helpers ---

def _load(args) -> tuple[Scenario, str]:
    path = Path(args.scenario)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e.strerror or e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ScenarioError(f"scenario file {path} is not UTF-8: {e.reason} at byte {e.start}") from e
    scenario = load_scenario(text)
    if getattr(args, "interference_policy", None):
        scenario = scenario.with_policy(args.interference_policy)
    return scenario, scenario_digest(raw)


def _sweep_points(args, scenario: Scenario) -> list[float | None]:
    """Gamma values to evaluate; None keeps the file's own thresholds."""
    if getattr(args, "sweep_gamma", None):
        return list(parse_sweep(args.sweep_gamma).gamma_values)
    if getattr(args, "gamma", None) is not None:
        return list(single_gamma(args.gamma).gamma_values)
    return [None]


def _at(scenario: Scenario, gamma: float | None) -> Scenario:
    return scenario if gamma is None else scenario.with_sinr_threshold(gamma)


def _checked_gamma(gamma: float | None) -> float | None:
    return None if gamma is None else single_gamma(gamma).gamma_values[0]


def _gamma_column(scenario: Scenario, gamma: float | None) -> float:
    if gamma is not None:
        return gamma
    uniform = scenario.uniform_sinr_threshold()
    return math.nan if uniform is None else uniform


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(seed=args.seed, restarts=args.restarts)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _map(fn, jobs: list, workers: int) -> list:
    """Runs jobs in a process pool; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# --- Sweep-point workers (module level so the pool can pickle them) ---

def _solve_point(job) -> dict:
    scenario, gamma, config, distributed = job
    if distributed:
        result = solve_distributed(scenario, config)
    else:
        result = solve(build_problem(scenario), config)
    row = {"gamma": _gamma_column(scenario, gamma)}
    for f in scenario.flows:
        row[f"rate_f{f.id}"] = result.rates.rate(f.id)
    for f in scenario.flows:
        row[f"throughput_f{f.id}"] = result.per_flow[f.id]
    row.update(aat=result.aat, feasible=result.feasible, seed=config.seed)
    if distributed:
        row["agreed"] = result.agreed
    return row


def _baseline_point(job) -> dict:
    scenario, gamma, config = job
    multipath = solve(build_problem(scenario), config)
    single = solve_best_path(scenario, config)
    ratio = multipath.aat / single.aat if single.aat > 0 else math.nan
    return {
        "gamma": _gamma_column(scenario, gamma),
        "multipath_aat": multipath.aat,
        "best_path_aat": single.aat,
        "ratio": ratio,
        "best_flow": best_path(scenario).id,
    }


def _simulate_point(job) -> dict:
    scenario, gamma, rates_mode, solver_config, sim_kwargs, run_index = job
    if rates_mode == "solve":
        rates = solve(build_problem(scenario), solver_config).rates
    elif rates_mode == "scenario":
        rates = RateVector.from_scenario(scenario)
    else:
        rates = RateVector(rates_mode)
    stats = run(scenario, SimConfig(rates=rates, run_index=run_index, **sim_kwargs))
    analytic = float(ThroughputModel(scenario).aggregate([rates.as_list(scenario)])[0])
    gap = (stats.aat - analytic) / analytic if analytic > 0 else math.nan

    row = {"gamma": _gamma_column(scenario, gamma)}
    for f in scenario.flows:
        row[f"rate_f{f.id}"] = rates.rate(f.id)
    for f in scenario.flows:
        row[f"sim_throughput_f{f.id}"] = stats.per_flow_throughput[f.id]
    row.update(sim_aat=stats.aat, analytic_aat=analytic, gap=gap)
    for f in scenario.flows:
        row[f"delay_mean_f{f.id}"] = stats.delay[f.id].mean
        row[f"delay_p99_f{f.id}"] = stats.delay[f.id].p99
    row["delay_bounded"] = delay_bounded(stats, scenario)
    row["saturated_relays"] = sim_kwargs["saturated_relays"]
    return row


# --- Subcommands ---

def cmd_solve(args) -> int:
    scenario, digest = _load(args)
    config = _solver_config(args)
    points = _sweep_points(args, scenario)
    logger.info("Solving %d sweep point(s), seed=%d, restarts=%d", len(points), config.seed, config.restarts)
    jobs = [(_at(scenario, g), g, config, args.distributed) for g in points]
    rows = _map(_solve_point, jobs, args.workers)
    for row in rows:
        if not row["feasible"]:
            logger.warning("No feasible allocation at gamma=%s", row["gamma"])
    write_csv(pd.DataFrame(rows), audit_header("solve", config.seed, digest), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.warmup < 0:
        raise UsageError(f"--warmup must be non-negative, got {args.warmup}")
    if args.slots <= args.warmup:
        raise UsageError(f"--slots ({args.slots}) must exceed --warmup ({args.warmup})")
    scenario, digest = _load(args)
    points = _sweep_points(args, scenario)
    if args.rates in ("solve", "scenario"):
        rates_mode = args.rates
    else:
        rates_mode = parse_rate_overrides(args.rates, [f.id for f in scenario.flows])
    sim_kwargs = {"slots": args.slots, "warmup_slots": args.warmup, "seed": args.seed,
                  "saturated_relays": args.saturated_relays}
    jobs = [(_at(scenario, g), g, rates_mode, _solver_config(args), sim_kwargs, k) for k, g in enumerate(points)]
    logger.info("Simulating %d sweep point(s), %d slots each", len(points), args.slots)
    rows = _map(_simulate_point, jobs, args.workers)
    frame = pd.DataFrame(rows)
    write_csv(frame, audit_header("simulate", args.seed, digest), args.out)
    gaps = frame["gap"].abs()
    print(f"Mean relative gap (simulated vs analytic AAT): {gaps.mean():.2%}", file=sys.stderr)
    return EXIT_OK


def cmd_baseline(args) -> int:
    scenario, digest = _load(args)
    config = _solver_config(args)
    points = _sweep_points(args, scenario)
    logger.info("Comparing multipath with best-path over %d sweep point(s)", len(points))
    rows = _map(_baseline_point, [(_at(scenario, g), g, config) for g in points], args.workers)
    frame = pd.DataFrame(rows)
    write_csv(frame, audit_header("baseline", config.seed, digest), args.out)
    mean_ratio = frame["ratio"].mean()
    print(f"Mean multipath/best-path ratio: {mean_ratio:.4f} (improvement {(mean_ratio - 1.0):.1%})",
          file=sys.stderr)
    return EXIT_OK


def cmd_check_convexity(args) -> int:
    scenario, _ = _load(args)
    check = nonconvexity_condition(_at(scenario, _checked_gamma(args.gamma)))
    print(f"lhs={check.lhs:.12g}")
    print(f"rhs={check.rhs:.12g}")
    print(f"holds={str(check.holds).lower()}")
    return EXIT_OK


def cmd_dump_problem(args) -> int:
    gamma = _checked_gamma(args.gamma)
    scenario, _ = _load(args)
    text = render_problem(build_problem(_at(scenario, gamma)))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_paths(args) -> int:
    """End-to-end success probability of every flow's path and the best path, per gamma."""
    scenario, digest = _load(args)
    rows = []
    for gamma in _sweep_points(args, scenario):
        at = _at(scenario, gamma)
        row = {"gamma": _gamma_column(at, gamma)}
        for f in at.flows:
            row[f"p_e2e_f{f.id}"] = end_to_end_success(at, f)
        row["best_flow"] = best_path(at).id
        rows.append(row)
    write_csv(pd.DataFrame(rows), audit_header("paths", args.seed, digest), args.out)
    return EXIT_OK


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario file (JSON5)")
    common.add_argument("--interference-policy", choices=["all_nodes", "path_nodes"],
                        help="override the scenario's interference policy")
    common.add_argument("--seed", type=int, default=SOLVER_CONFIG["seed"])
    common.add_argument("--out", help="output path (default: stdout)")

    sweep = argparse.ArgumentParser(add_help=False)
    group = sweep.add_mutually_exclusive_group()
    group.add_argument("--sweep-gamma", metavar="A:B:S", help="inclusive SINR threshold sweep")
    group.add_argument("--gamma", type=float, help="single SINR threshold")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--restarts", type=int, default=SOLVER_CONFIG["restarts"])
    solver.add_argument("--workers", type=int, default=CLI_CONFIG["workers"])

    parser = _Parser(prog="mpath-alloc", description="Multipath flow allocation for MPR random-access networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common, sweep, solver], help="optimal source rates per gamma")
    p.add_argument("--distributed", action="store_true",
                   help="every flow originator solves its own copy and keeps its own rate")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("simulate", parents=[common, sweep, solver], help="slotted simulation vs analytic model")
    p.add_argument("--slots", type=int, default=SIMULATION_CONFIG["slots"])
    p.add_argument("--warmup", type=int, default=SIMULATION_CONFIG["warmup_slots"])
    p.add_argument("--rates", default="solve", help="solve | scenario | ID=RATE,...")
    p.add_argument("--saturated-relays", action="store_true",
                   help="relays transmit a filler packet when their queue is empty")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("baseline", parents=[common, sweep, solver], help="multipath vs best-path AAT")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("check-convexity", parents=[common], help="toy-topology non-convexity condition")
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(handler=cmd_check_convexity)

    p = sub.add_parser("dump-problem", parents=[common], help="print the smooth problem's variables and constraints")
    p.add_argument("--gamma", type=float)
    p.set_defaults(handler=cmd_dump_problem)

    p = sub.add_parser("paths", parents=[common, sweep], help="end-to-end path success and best path per gamma")
    p.set_defaults(handler=cmd_paths)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"Usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as e:
        print(f"Scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except MpathError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        logger.exception("Internal error while running %s", args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
