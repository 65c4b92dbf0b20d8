"""Command-line entry point for the brachiation toolkit."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import read_trajectory, write_summary, write_sweep, write_telemetry, write_trajectory
from .config import RunConfig, get_default_config, load_config, load_sweep
from .configspace import swing_endpoints
from .designlab import cost_minimizer, run_sweep
from .errors import ArtifactFormatError, BrachiationError, ConfigError, Diverged
from .simulator import Telemetry, TrajectoryPlanner, run_brachiation, simulate_swing
from .tracking import TrackingController, build_reference
from .trajopt import solve, terminal_hand_error

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def _output_dir(args, config: RunConfig) -> Path:
    out = Path(args.out) if args.out else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    return out


def cmd_optimize(args, config: RunConfig) -> int:
    params = config.robot
    endpoints = swing_endpoints(params, config.bars, config.offset_angle)
    horizon, freefall = config.optimizer.resolve_horizon(params, endpoints.x0)
    print(f"Optimizing swing to bar {config.bars.base_index + 1} over {horizon:.4f} s...")

    try:
        solution = solve(config.optimizer.problem(params, endpoints, horizon))
    except Diverged as e:
        print(f"Optimization diverged: {e}", file=sys.stderr)
        return EXIT_NUMERICAL

    out = _output_dir(args, config)
    hand_error = terminal_hand_error(params, solution.trajectory, endpoints.target)
    reaches_target = hand_error <= config.sim.catch_tolerance
    write_trajectory(out / "trajectory.csv", solution.trajectory)
    write_summary(
        out / "summary.json",
        {
            "initial_cost": solution.initial_cost,
            "final_cost": solution.final_cost,
            "cost_ratio": solution.initial_cost / solution.final_cost if solution.final_cost > 0 else None,
            "iterations": solution.iterations,
            "converged": solution.converged,
            "horizon": horizon,
            "steps": config.optimizer.steps,
            "freefall_time": freefall,
            "terminal_hand_error": hand_error,
            "reaches_target": reaches_target,
            "q0": endpoints.q0,
            "qT": endpoints.qT,
            "target": endpoints.target,
        },
    )
    print(
        f"Cost {solution.initial_cost:.6g} -> {solution.final_cost:.6g} in {solution.iterations} iterations, "
        f"hand error {hand_error * 1000:.2f} mm"
    )
    print(f"Wrote {out / 'trajectory.csv'}")
    if not solution.converged:
        print("Optimizer hit max_iters without converging", file=sys.stderr)
        return EXIT_NUMERICAL
    if not reaches_target:
        print(
            f"Planned hand ends {hand_error * 1000:.2f} mm from the bar, beyond the "
            f"{config.sim.catch_tolerance * 1000:.1f} mm catch tolerance",
            file=sys.stderr,
        )
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_simulate(args, config: RunConfig) -> int:
    params = config.robot
    traj = read_trajectory(Path(args.trajectory))
    reference = build_reference(params, traj)
    controller = TrackingController(params, reference, config.tracker, saturate=config.sim.saturate)
    target = config.bars.target()
    print(f"Simulating {reference.duration:.4f} s swing (alpha={config.tracker.alpha:g})...")

    outcome = simulate_swing(
        params,
        reference.start_state,
        controller,
        reference,
        reference.duration,
        plant_dt=config.sim.plant_dt,
        disturbance=config.sim.disturbance,
        target=target,
        catch_tolerance=config.sim.catch_tolerance,
    )

    out = _output_dir(args, config)
    write_telemetry(out / "telemetry.csv", outcome.telemetry)
    write_summary(out / "outcome.json", outcome.summary())
    status = "caught" if outcome.caught else "missed"
    print(
        f"Bar {status}: final hand error {outcome.final_ee_error * 1000:.2f} mm, "
        f"max {outcome.max_ee_error * 1000:.2f} mm"
    )
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    spec = load_sweep(Path(args.sweep), config)
    print(f"Sweeping {spec.axis} over {len(spec.values)} values x {len(spec.cases)} mass cases...")
    records = run_sweep(spec)

    out = _output_dir(args, config)
    write_sweep(out / "sweep.csv", records)
    failed = sum(not r.ok for r in records)
    for case in spec.cases:
        try:
            best = cost_minimizer(records, case)
        except ValueError:
            print(f"Case {case}: no successful points")
            continue
        print(f"Case {case}: lowest cost {best.final_cost:.6g} at {spec.axis}={best.value:g}")
    if failed:
        print(f"{failed} of {len(records)} points failed (recorded with NaN cost)")
    print(f"Wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _combined_telemetry(outcomes) -> Telemetry:
    offsets = np.cumsum([0.0] + [o.trajectory.times[-1] for o in outcomes[:-1]])
    parts = [o.telemetry for o in outcomes]
    return Telemetry(
        times=np.concatenate([p.times + t0 for p, t0 in zip(parts, offsets)]),
        **{
            name: np.concatenate([getattr(p, name) for p in parts])
            for name in ("states", "u", "u_config", "u_task", "y", "dy", "singular")
        },
    )


def cmd_brachiate(args, config: RunConfig) -> int:
    planner = TrajectoryPlanner(config.optimizer, config.offset_angle, config.sim.catch_tolerance)
    gaps = len(config.bars.bars) - 1 - config.bars.base_index
    print(f"Brachiating across {gaps} gaps...")
    result = run_brachiation(
        config.robot,
        config.bars,
        planner,
        config.tracker,
        plant_dt=config.sim.plant_dt,
        catch_tolerance=config.sim.catch_tolerance,
        disturbance=config.sim.disturbance,
        saturate=config.sim.saturate,
    )

    out = _output_dir(args, config)
    cycles = []
    for i, (outcome, plan, frame) in enumerate(zip(result.outcomes, result.plans, result.frames)):
        write_telemetry(out / f"cycle_{i}_telemetry.csv", outcome.telemetry)
        cycles.append(
            {
                **outcome.summary(),
                "base_bar": frame.base_bar,
                "swing_hand": frame.swing_hand,
                "horizon": plan.horizon,
                "final_cost": plan.solution.final_cost,
                "iterations": plan.solution.iterations,
            }
        )
        print(f"Cycle {i}: bar {frame.base_bar} -> {frame.base_bar + 1} {'caught' if outcome.caught else 'missed'}")
    if result.outcomes:
        write_telemetry(out / "telemetry.csv", _combined_telemetry(result.outcomes))
    write_summary(
        out / "brachiation.json",
        {"cycles": cycles, "failed_cycle": result.failed_cycle, "error": result.error, "solves": planner.solves},
    )
    print(f"{planner.solves} trajectory solve(s) for {len(cycles)} cycle(s)")
    if result.failed_cycle is not None:
        reason = f": {result.error}" if result.error else ""
        print(f"Missed the bar on cycle {result.failed_cycle}{reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, default=None, help="run config JSON (default: bundled prototype robot)")
    common.add_argument("--out", "-o", default=None, help="output directory (default: config output_dir)")
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-path config override, e.g. robot.body_length=0.1 (repeatable)",
    )
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="brachiate", description="Three-link brachiation robot toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="solve one swing trajectory")
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("simulate", parents=[common], help="track a trajectory on the simulated plant")
    p.add_argument("trajectory", help="trajectory CSV written by optimize")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="run a design-parameter sweep")
    p.add_argument("sweep", help="sweep spec JSON")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("brachiate", parents=[common], help="swing along every bar in the layout")
    p.set_defaults(handler=cmd_brachiate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="%(levelname)s:%(message)s",
        level=logging.DEBUG if args.verbose else logging.WARNING,
    )

    try:
        if args.config is None and not args.override:
            config = get_default_config()
        else:
            config = load_config(args.config, args.override)
        logger.debug("running %s with config %s", args.command, config.to_dict())
        return args.handler(args, config)
    except (ConfigError, ArtifactFormatError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BrachiationError as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
