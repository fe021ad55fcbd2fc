"""Receding-horizon trajectory tracking on a tiered sample grid.

Each iteration solves a short-horizon variant of the trajectory NLP:

* the initial flat state (z0, zdot0) is substituted from the measured
  vessel state rather than constrained, removing six variables and six
  equalities from the hot loop;
* one nonnegative slack variable relaxes the obstacle rows so external
  disturbances cannot render the problem infeasible; the slack is
  penalized quadratically (how far constraints may yield) and linearly
  (for how long);
* the cost is last-waypoint-match: running input energy plus a
  terminal penalty on the deviation from the reference state at the
  horizon end (an all-waypoint-match running cost is available as a
  comparison baseline);
* the horizon mixes three sample times, short first for control
  resolution, long last for reach, with no discretization error on
  any of them;
* the initial guess is regenerated from scratch (grid search through
  the current obstacle snapshot) every iteration, so the optimizer is
  offered the currently best corridor instead of the previous
  iteration's local minimum.

Moving obstacles enter each solve either frozen at their current
position or extrapolated over the horizon with their currently
observable velocity ("predicted", the default): re-planning reacts
within one iteration when an obstacle starts to move.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .discretization import FlatTrajectory, SampleGrid, knot_states, pack, unpack
from .flat import body_velocities, control_forces
from .guess import PathNotFoundError, assemble_guess
from .obstacles import ObstacleField
from .ocp import (
    ControlSampler,
    GuessConfig,
    InputBounds,
    NlpProblem,
    SolverReport,
    SolverSettings,
    _check_finite,
    _input_rows,
    solve,
    trapezoid_weights,
)
from .vessel import (
    ControlInput,
    EnvironmentalDisturbance,
    VesselParams,
    VesselState,
    simulate,
)


@dataclass
class MpcConfig:
    """Horizon layout, weights and solver settings of the tracker."""

    tiers: Sequence[Tuple[float, int]] = ((0.5, 2), (0.75, 4), (1.78, 9))
    bounds: Optional[InputBounds] = None
    q1_diag: np.ndarray = dataclass_field(default_factory=lambda: np.array([0.04, 0.0, 25.0]))
    q4_diag: np.ndarray = dataclass_field(
        default_factory=lambda: np.array([50.0, 50.0, 50.0, 10.0, 10.0, 10.0])
    )
    q2: float = 1e3
    q3: float = 1e2
    cost_kind: str = "lwm"  # lwm | all_waypoint_match
    awm_q_diag: np.ndarray = dataclass_field(
        default_factory=lambda: np.array([100.0, 100.0, 100.0, 0.0, 0.0, 0.0])
    )
    obstacle_mode: str = "predicted"  # predicted | frozen
    obstacle_midpoints: bool = True
    guess: Optional[GuessConfig] = None
    solver: SolverSettings = dataclass_field(
        default_factory=lambda: SolverSettings(max_iter=150, restarts=1)
    )

    def __post_init__(self):
        self.q1_diag = np.asarray(self.q1_diag, dtype=float)
        self.q4_diag = np.asarray(self.q4_diag, dtype=float)
        self.awm_q_diag = np.asarray(self.awm_q_diag, dtype=float)
        dts = [dt for dt, _ in self.tiers]
        if sorted(dts) != dts or len(set(dts)) != len(dts):
            raise ValueError("tier sample times must be strictly increasing")
        if self.cost_kind not in ("lwm", "all_waypoint_match"):
            raise ValueError(f"unknown MPC cost kind {self.cost_kind!r}")
        if self.obstacle_mode not in ("frozen", "predicted"):
            raise ValueError(f"unknown obstacle mode {self.obstacle_mode!r}")

    @property
    def horizon(self) -> float:
        return float(sum(dt * n for dt, n in self.tiers))

    def grid_from(self, t_now: float) -> SampleGrid:
        return SampleGrid.from_tiers(t_now, self.tiers)

    @property
    def control_interval(self) -> float:
        return float(self.tiers[0][0])


class ReferenceTrajectory:
    """Dense state lookup along a planned flat trajectory.

    Queries outside [t0, te] clamp to the endpoint states, so the
    tracker can look past the end of the plan while decelerating.
    """

    def __init__(self, traj: FlatTrajectory, params: VesselParams):
        self._sampler = ControlSampler(traj, params)
        self.t0 = float(traj.grid.t0)
        self.te = float(traj.grid.t_end)
        self.params = params

    def state_at(self, t) -> np.ndarray:
        """Full state [eta, nu] at time t, shape (..., 6)."""
        return self._sampler.state(np.clip(t, self.t0, self.te))

    def position_at(self, t) -> np.ndarray:
        return self.state_at(t)[..., :2]

    def control_at(self, t) -> np.ndarray:
        return self._sampler.control(np.clip(t, self.t0, self.te))


def _embed_full(
    zdd_flat: np.ndarray, z0: np.ndarray, zdot0: np.ndarray, n_knots: int
) -> np.ndarray:
    """Reduced (batched) acceleration samples -> full decision layout."""
    B = zdd_flat.shape[0]
    blocks = zdd_flat.reshape(B, 3, n_knots)
    head = np.broadcast_to(
        np.stack([z0, zdot0], axis=-1)[None, :, :], (B, 3, 2)
    )
    return np.concatenate([head, blocks], axis=-1).reshape(B, 3 * (n_knots + 2))


def mpc_cost(
    xi_with_slack: np.ndarray,
    grid: SampleGrid,
    q1_diag: Sequence[float],
    q4_diag: Sequence[float],
    q2: float,
    q3: float,
    reference: ReferenceTrajectory,
    params: VesselParams,
) -> float:
    """Last-waypoint-match cost of a full decision vector plus slack."""
    xi = np.asarray(xi_with_slack, dtype=float)
    s = xi[..., -1]
    z0, zdot0, zddot = unpack(xi[..., :-1], grid)
    z, zdot = knot_states(z0, zdot0, zddot, grid)
    tau = control_forces(z, zdot, zddot, params)
    w = trapezoid_weights(grid)
    energy = np.sum(w * np.sum(np.asarray(q1_diag) * tau**2, axis=-1), axis=-1)
    nu_end = body_velocities(z[..., -1, :], zdot[..., -1, :])
    x_end = np.concatenate([z[..., -1, :], nu_end], axis=-1)
    dx = x_end - reference.state_at(grid.t_end)
    terminal = np.sum(np.asarray(q4_diag) * dx**2, axis=-1)
    return energy + q2 * s**2 + q3 * s + terminal


def cost_all_waypoint_match(
    xi: np.ndarray,
    grid: SampleGrid,
    q_diag: Sequence[float],
    reference: ReferenceTrajectory,
    params: VesselParams,
) -> float:
    """Trapezoidal quadrature of the state-deviation running cost."""
    z0, zdot0, zddot = unpack(np.asarray(xi, dtype=float), grid)
    z, zdot = knot_states(z0, zdot0, zddot, grid)
    nu = body_velocities(z, zdot)
    x = np.concatenate([z, nu], axis=-1)
    dx = x - reference.state_at(grid.times)
    w = trapezoid_weights(grid)
    return np.sum(w * np.sum(np.asarray(q_diag) * dx**2, axis=-1), axis=-1)


def slack_constraints(
    xi_with_slack: np.ndarray,
    grid: SampleGrid,
    bounds: InputBounds,
    field_: ObstacleField,
    params: VesselParams,
    times: Optional[np.ndarray] = None,
    tau_prev: Optional[np.ndarray] = None,
    t_prev_step: float = 1.0,
) -> np.ndarray:
    """Inequality residuals with the obstacle rows relaxed by the slack.

    Input magnitude/rate rows are unchanged; every obstacle row becomes
    1 - U_p - s <= 0.  s >= 0 itself is a box bound, not a row here.
    """
    xi = np.asarray(xi_with_slack, dtype=float)
    s = xi[..., -1]
    z0, zdot0, zddot = unpack(xi[..., :-1], grid)
    z, zdot = knot_states(z0, zdot0, zddot, grid)
    tau = control_forces(z, zdot, zddot, params)
    rows = _input_rows(
        tau, grid, bounds, include_pinched=True, tau_prev=tau_prev, t_prev_step=t_prev_step
    )
    t = grid.times if times is None else np.asarray(times, dtype=float)
    obstacle = 1.0 - field_.union_value(z[..., 0], z[..., 1], t) - s[..., None]
    rows.append(obstacle)
    return np.concatenate(rows, axis=-1)


def _build_mpc_nlp(
    grid: SampleGrid,
    z0: np.ndarray,
    zdot0: np.ndarray,
    reference: ReferenceTrajectory,
    field_: ObstacleField,
    config: MpcConfig,
    params: VesselParams,
    tau_prev: Optional[np.ndarray],
) -> NlpProblem:
    bounds = config.bounds
    pinched = bounds.pinched
    knot_times = grid.times
    w = trapezoid_weights(grid)
    m = grid.n_knots
    x_ref_end = reference.state_at(grid.t_end)
    x_ref_knots = reference.state_at(knot_times)
    q1 = config.q1_diag
    q4 = config.q4_diag
    qawm = config.awm_q_diag
    t1 = config.control_interval

    def batch(X: np.ndarray):
        s = X[:, -1]
        xi_full = _embed_full(X[:, :-1], z0, zdot0, m)
        fz0, fzdot0, zddot = unpack(xi_full, grid)
        z, zdot = knot_states(fz0, fzdot0, zddot, grid)
        nu = body_velocities(z, zdot)
        tau = control_forces(z, zdot, zddot, params)
        _check_finite(tau, "input map")

        energy = np.sum(w * np.sum(q1 * tau**2, axis=-1), axis=-1)
        if config.cost_kind == "lwm":
            x_end = np.concatenate([z[..., -1, :], nu[..., -1, :]], axis=-1)
            dxe = x_end - x_ref_end
            cost = energy + np.sum(q4 * dxe**2, axis=-1)
        else:
            x = np.concatenate([z, nu], axis=-1)
            dx = x - x_ref_knots
            cost = np.sum(w * np.sum(qawm * dx**2, axis=-1), axis=-1)
        cost = cost + config.q2 * s**2 + config.q3 * s

        if pinched.any():
            r = tau[..., pinched] - bounds.tau_max[pinched]
            eq = r.reshape(r.shape[:-2] + (-1,))
        else:
            eq = np.zeros(X.shape[:-1] + (0,))

        rows = _input_rows(
            tau, grid, bounds, include_pinched=False,
            tau_prev=tau_prev, t_prev_step=t1,
        )
        obstacle = 1.0 - field_.union_value(z[..., 0], z[..., 1], knot_times)
        rows.append(obstacle - s[:, None])
        if config.obstacle_midpoints:
            half = grid.steps / 2.0
            slope = np.diff(zddot, axis=-2) / grid.steps[:, None]
            z_mid = (
                z[..., :-1, :]
                + zdot[..., :-1, :] * half[:, None]
                + zddot[..., :-1, :] * half[:, None] ** 2 / 2.0
                + slope * half[:, None] ** 3 / 6.0
            )
            mid = 1.0 - field_.union_value(
                z_mid[..., 0], z_mid[..., 1], knot_times[:-1] + half
            )
            rows.append(mid - s[:, None])
        ineq = np.concatenate(rows, axis=-1)
        return cost, eq, ineq

    n = 3 * m + 1
    lb = np.full(n, -np.inf)
    lb[-1] = 0.0
    probe = batch(np.zeros((1, n)))
    return NlpProblem(
        n=n, batch=batch, n_eq=probe[1].shape[-1], n_ineq=probe[2].shape[-1], lb=lb
    )


@dataclass
class MpcIterate:
    """Record of one receding-horizon solve."""

    t: float
    measured: VesselState
    xi: np.ndarray  # full decision layout over the horizon
    slack: float
    report: Optional[SolverReport]
    terminal_deviation: float
    solve_time: float
    fallback: bool = False
    grid: Optional[SampleGrid] = None

    @property
    def trajectory(self) -> FlatTrajectory:
        return FlatTrajectory.from_decision(self.xi, self.grid)


def mpc_step(
    t_now: float,
    measured: VesselState,
    tau_prev: np.ndarray,
    reference: ReferenceTrajectory,
    field_: ObstacleField,
    config: MpcConfig,
    params: VesselParams,
) -> Tuple[Callable[[float], ControlInput], MpcIterate]:
    """One receding-horizon iteration.

    Builds the tiered grid from the measured state, regenerates the
    grid-search guess toward the reference point at the horizon end,
    solves the slack-relaxed NLP and returns the continuous control
    for the first tier-1 interval.  On solver failure the last applied
    input is held and the iterate is flagged.
    """
    t_start = time.perf_counter()
    grid = config.grid_from(t_now)
    z0 = measured.eta.copy()
    c, s_ = np.cos(z0[2]), np.sin(z0[2])
    zdot0 = np.array(
        [
            c * measured.nu[0] - s_ * measured.nu[1],
            s_ * measured.nu[0] + c * measured.nu[1],
            measured.nu[2],
        ]
    )
    snapshot = (
        field_.frozen_at(t_now)
        if config.obstacle_mode == "frozen"
        else field_.predicted_from(t_now)
    )

    def fallback_result(reason: str):
        segment_tau = np.asarray(tau_prev, dtype=float)
        zdd_hold = np.zeros((grid.n_knots, 3))
        xi_full = pack(z0, zdot0, zdd_hold)
        it = MpcIterate(
            t=t_now,
            measured=measured,
            xi=xi_full,
            slack=np.nan,
            report=SolverReport(
                status="infeasible", iterations=0, cost=np.nan,
                max_violation=np.nan, wall_time=0.0, message=reason,
            ),
            terminal_deviation=np.nan,
            solve_time=time.perf_counter() - t_start,
            fallback=True,
            grid=grid,
        )
        return (lambda t: ControlInput.from_vector(segment_tau)), it

    try:
        x_goal = reference.state_at(grid.t_end)
        xe = VesselState(eta=x_goal[:3], nu=x_goal[3:])
        xi_guess = assemble_guess(
            measured,
            xe,
            snapshot,
            config.guess.planning,
            grid,
            eps=config.guess.eps,
            margin=config.guess.margin,
            occupancy_time=grid.times,
        )
        problem = _build_mpc_nlp(
            grid, z0, zdot0, reference, snapshot, config, params, tau_prev
        )
        _, _, zdd_guess = unpack(xi_guess, grid)
        x0_red = np.concatenate(
            [zdd_guess.T.reshape(-1), [0.0]]
        )
        _, _, i0 = problem.evaluate(x0_red)
        n_obs = grid.n_knots + (grid.n_segments if config.obstacle_midpoints else 0)
        s0 = max(0.0, float(np.maximum(i0[-n_obs:], 0.0).max()))
        x0_red[-1] = s0 + 1e-6
        x_sol, report = solve(problem, x0_red, config.solver)
        if not report.converged and report.max_violation > 0.01:
            # diverged on the fresh guess: retry from a coasting start
            # (zero accelerations, slack covering its own violations)
            coast = np.zeros(problem.n)
            _, _, ic = problem.evaluate(coast)
            coast[-1] = max(0.0, float(np.maximum(ic[-n_obs:], 0.0).max())) + 1e-6
            x_alt, rep_alt = solve(problem, coast, config.solver)
            if rep_alt.converged or rep_alt.max_violation < report.max_violation:
                x_sol, report = x_alt, rep_alt
    except (PathNotFoundError, RuntimeError) as exc:
        return fallback_result(f"guess/solve failure: {exc}")
    if not np.isfinite(x_sol).all():
        return fallback_result("non-finite solution")
    if not report.converged and report.max_violation > 1.0:
        return fallback_result(
            f"solver diverged (violation {report.max_violation:.3g})"
        )

    xi_full = _embed_full(x_sol[None, :-1], z0, zdot0, grid.n_knots)[0]
    traj = FlatTrajectory.from_decision(xi_full, grid)
    sampler = ControlSampler(traj, params)
    nu_end = body_velocities(traj.z[-1], traj.zdot[-1])
    dx_end = np.concatenate([traj.z[-1], nu_end]) - reference.state_at(grid.t_end)
    iterate = MpcIterate(
        t=t_now,
        measured=measured,
        xi=xi_full,
        slack=float(x_sol[-1]),
        report=report,
        terminal_deviation=float(np.linalg.norm(dx_end)),
        solve_time=time.perf_counter() - t_start,
        fallback=False,
        grid=grid,
    )
    return sampler.control_input, iterate


@dataclass
class MpcRunResult:
    """Closed-loop log: plant trace rows plus per-iterate records."""

    times: np.ndarray
    states: np.ndarray  # (n, 6)
    taus: np.ndarray  # (n, 3)
    iterates: List[MpcIterate]
    energy: float
    distance: float
    max_slack: float
    max_penetration: float
    n_fallback: int
    mean_solve_time: float

    @property
    def completed(self) -> bool:
        return self.n_fallback == 0


def closed_loop(
    reference: ReferenceTrajectory,
    field_: ObstacleField,
    config: MpcConfig,
    model_params: VesselParams,
    plant_params: Optional[VesselParams] = None,
    disturbance: Optional[EnvironmentalDisturbance] = None,
    x_start: Optional[VesselState] = None,
    tau_start: Optional[np.ndarray] = None,
    t_start: Optional[float] = None,
    t_stop: Optional[float] = None,
    log_substeps: int = 2,
) -> MpcRunResult:
    """Run plan-apply-measure until the reference end.

    The plant integrates with its own (possibly mismatched) parameters
    and the ambient current; the controller knows neither.  A fallback
    iterate (held input) does not abort the run.
    """
    plant_params = plant_params or model_params
    t1 = config.control_interval
    t_begin = t_start if t_start is not None else reference.t0
    t_end = t_stop if t_stop is not None else reference.te
    state = x_start or VesselState.from_vector(reference.state_at(t_begin))
    tau_prev = (
        np.asarray(tau_start, dtype=float)
        if tau_start is not None
        else reference.control_at(t_begin)
    )
    times = [t_begin]
    states = [state.as_vector()]
    taus = [tau_prev.copy()]
    iterates: List[MpcIterate] = []

    t_now = t_begin
    while t_now < t_end - 1e-9:
        control, iterate = mpc_step(
            t_now, state, tau_prev, reference, field_, config, model_params
        )
        iterates.append(iterate)
        t_next = min(t_now + t1, t_end)
        t_eval = np.linspace(t_now, t_next, log_substeps + 1)[1:]
        sim = simulate(
            state, control, t_now, t_next, plant_params,
            disturbance=disturbance, rtol=1e-8, atol=1e-10, t_eval=t_eval,
        )
        for tk, xk in zip(sim.times, sim.states):
            times.append(tk)
            states.append(xk)
            taus.append(control(tk).as_vector())
        state = sim.final_state
        tau_prev = control(t_next).as_vector()
        t_now = t_next

    times = np.asarray(times)
    states = np.asarray(states)
    taus = np.asarray(taus)
    energy = float(
        np.trapezoid(np.sum(config.q1_diag * taus**2, axis=1), times)
    )
    speed_ned = np.linalg.norm(
        np.gradient(states[:, :2], times, axis=0), axis=1
    )
    distance = float(np.trapezoid(speed_ned, times))
    penetration = np.maximum(
        field_.constraint_value(states[:, 0], states[:, 1], times), 0.0
    )
    slacks = [it.slack for it in iterates if not it.fallback]
    return MpcRunResult(
        times=times,
        states=states,
        taus=taus,
        iterates=iterates,
        energy=energy,
        distance=distance,
        max_slack=float(np.nanmax(slacks)) if slacks else 0.0,
        max_penetration=float(penetration.max()),
        n_fallback=sum(it.fallback for it in iterates),
        mean_solve_time=float(np.mean([it.solve_time for it in iterates])),
    )
