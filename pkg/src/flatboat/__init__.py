"""Flatness-based trajectory optimization and MPC tracking for
underactuated 3DOF marine surface vessels."""

from .vessel import (
    ControlInput,
    EnvironmentalDisturbance,
    IntegrationError,
    VesselParams,
    VesselState,
    coriolis_matrix,
    damping_matrix,
    rotation,
    simulate,
    state_derivative,
)
from .flat import FlatPoint, theta_tau, theta_tau_rate, theta_x
from .discretization import (
    ContractViolation,
    FlatTrajectory,
    SampleGrid,
    a_matrix,
    b_matrix,
    build_h_matrix,
    evaluate_continuous,
    pack,
    propagate,
    unpack,
)
from .obstacles import BasicShape, ObstacleField
from .guess import (
    PathNotFoundError,
    PlanningGrid,
    assemble_guess,
    astar,
    build_speed_signals,
    mollifier_phi,
    mollifier_phi_dot,
    refine_path,
    smooth_to_zddot,
)
from .ocp import (
    GuessConfig,
    InputBounds,
    NlpProblem,
    OcpSpec,
    PlanResult,
    SolverReport,
    SolverSettings,
    build_nlp,
    cost_energy,
    cost_shortest_distance,
    equality_constraints,
    inequality_constraints,
    plan,
    solve,
)
from .mpc import (
    MpcConfig,
    MpcIterate,
    MpcRunResult,
    ReferenceTrajectory,
    closed_loop,
    cost_all_waypoint_match,
    mpc_cost,
    mpc_step,
    slack_constraints,
)
from .scenario import Scenario, ScenarioError, load_scenario
from .runlog import RunLog, cross_evaluate, read_csv, write_csv

__version__ = "0.1.0"
