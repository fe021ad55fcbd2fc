"""Command-line entry points: plan, track, guess, validate.

Each subcommand loads one scenario file (or bundled name), runs the
corresponding pipeline stage and writes a CSV run log (plus an
optional vector plot) into the output directory.  Exit code 0 means
the run produced a certified-feasible plan (plan/guess) or completed
the tracking horizon (track).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .discretization import FlatTrajectory
from .guess import assemble_guess
from .mpc import ReferenceTrajectory, closed_loop
from .ocp import ControlSampler, plan
from .runlog import RunLog, cross_evaluate, plot_run, write_csv
from .scenario import Scenario, ScenarioError, load_scenario


def _dense_log(traj: FlatTrajectory, scenario: Scenario, dt: float) -> RunLog:
    sampler = ControlSampler(traj, scenario.params)
    n = max(2, int(round(traj.grid.duration / dt)) + 1)
    t = np.linspace(traj.grid.t0, traj.grid.t_end, n)
    z, nu, tau = sampler.sample(t)
    states = np.concatenate([z, nu], axis=1)
    return RunLog(times=t, states=states, taus=tau)


def run_guess(scenario: Scenario) -> RunLog:
    """Assemble the initial guess and render it as a run log."""
    spec = scenario.ocp_spec()
    xi = assemble_guess(
        scenario.x0, scenario.xe, scenario.field,
        scenario.planning, spec.grid,
        eps=scenario.eps, margin=scenario.margin, via=scenario.via,
    )
    traj = FlatTrajectory.from_decision(xi, spec.grid)
    log = _dense_log(traj, scenario, scenario.output_dt)
    energy, distance = cross_evaluate(log, scenario.q1_diag)
    obstacle = scenario.field.constraint_value(
        log.states[:, 0], log.states[:, 1], log.times
    )
    log.metrics.update(
        energy_measure=energy,
        distance_measure=distance,
        max_constraint_violation=float(np.maximum(obstacle, 0.0).max()),
    )
    return log


def run_plan(scenario: Scenario, cost_kind: Optional[str] = None):
    """Solve the point-to-point problem; log the verified simulation."""
    spec = scenario.ocp_spec(cost_kind)
    result = plan(spec, scenario.solver)
    log = _dense_log(result.trajectory, scenario, scenario.output_dt)
    energy, distance = cross_evaluate(log, scenario.q1_diag)
    log.metrics.update(
        energy_measure=energy,
        distance_measure=distance,
        max_constraint_violation=result.certified_violation,
        dense_violation=result.dense_violation,
        solver_wall_time=result.report.wall_time,
        endpoint_error_pos=result.endpoint_error_pos,
        certified=float(result.certified),
    )
    return log, result


def run_track(scenario: Scenario, cost_kind: Optional[str] = None):
    """Plan the reference, then track it through the disturbance set."""
    plan_result = plan(scenario.ocp_spec(), scenario.solver)
    reference = ReferenceTrajectory(plan_result.trajectory, scenario.params)
    config = scenario.mpc
    if cost_kind is not None:
        from dataclasses import replace

        config = replace(config, cost_kind=cost_kind)
    run = closed_loop(
        reference,
        scenario.tracking_field(),
        config,
        scenario.params,
        plant_params=scenario.plant_params(),
        disturbance=scenario.disturbance(),
    )
    iterate_rows = {}
    t_by_index = {round(float(t), 9): k for k, t in enumerate(run.times)}
    for it in run.iterates:
        k = t_by_index.get(round(it.t, 9))
        if k is not None:
            iterate_rows[k] = {
                "solve_time": it.solve_time,
                "status": "fallback" if it.fallback else it.report.status,
                "slack": 0.0 if np.isnan(it.slack) else it.slack,
                "terminal_deviation": it.terminal_deviation,
            }
    log = RunLog(
        times=run.times, states=run.states, taus=run.taus,
        iterate_rows=iterate_rows,
    )
    energy, distance = cross_evaluate(log, scenario.q1_diag)
    log.metrics.update(
        energy_measure=energy,
        distance_measure=distance,
        max_constraint_violation=run.max_penetration,
        max_slack=run.max_slack,
        n_fallback=float(run.n_fallback),
        mean_solve_time=run.mean_solve_time,
    )
    return log, run, plan_result


def _write_outputs(log: RunLog, scenario: Scenario, out: Path, stem: str,
                   do_plot: bool, reference: Optional[RunLog] = None):
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    write_csv(log, csv_path)
    print(f"wrote {csv_path}")
    for key in sorted(log.metrics):
        print(f"  {key} = {log.metrics[key]:.6g}")
    if do_plot:
        plot_path = out / f"{stem}.svg"
        plot_run(
            log,
            scenario.tracking_field() if stem == "track" else scenario.field,
            plot_path,
            reference=reference,
            bounds=(
                scenario.planning.x_min, scenario.planning.x_max,
                scenario.planning.y_min, scenario.planning.y_max,
            ),
            title=f"{scenario.name}: {stem}",
        )
        print(f"wrote {plot_path}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flatboat",
        description="Flatness-based trajectory optimization and MPC tracking "
        "for underactuated surface vessels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("plan", "solve the point-to-point trajectory problem"),
        ("track", "closed-loop tracking of the planned reference"),
        ("guess", "emit the grid-search initial guess as a trajectory"),
        ("validate", "check a scenario file against the schema"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("scenario", help="scenario file or bundled name")
        if name != "validate":
            p.add_argument("--out", default="out", help="output directory")
            p.add_argument("--plot", action="store_true", help="write an SVG plot")
        if name in ("plan", "track"):
            p.add_argument(
                "--cost", default=None,
                help="override the cost kind (plan: energy|shortest_distance; "
                "track: lwm|all_waypoint_match)",
            )
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"scenario {scenario.name!r} is valid")
        return 0

    out = Path(args.out)
    if args.command == "guess":
        log = run_guess(scenario)
        _write_outputs(log, scenario, out, "guess", args.plot)
        return 0
    if args.command == "plan":
        log, result = run_plan(scenario, args.cost)
        _write_outputs(log, scenario, out, "plan", args.plot)
        return 0 if result.certified else 1
    if args.command == "track":
        log, run, plan_result = run_track(scenario, args.cost)
        ref_log = _dense_log(plan_result.trajectory, scenario, scenario.output_dt)
        _write_outputs(log, scenario, out, "track", args.plot, reference=ref_log)
        return 0 if run.n_fallback == 0 else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
