"""Scenario files: schema, validation, and the bundled fixture.

A scenario is one JSON document driving planning, guess generation and
tracking.  Units are meters, seconds, newtons and radians; angle
fields ending in `_deg` take degrees.  Unknown keys are rejected so a
typo cannot silently change a run.

The `disturbance` section (plant parameter scaling, ambient current,
extra moving shapes) applies only to closed-loop tracking runs; the
open-loop planner sees the nominal model and the static obstacle set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .discretization import SampleGrid
from .guess import PlanningGrid
from .mpc import MpcConfig
from .obstacles import BasicShape, ObstacleField
from .ocp import GuessConfig, InputBounds, OcpSpec, SolverSettings
from .vessel import EnvironmentalDisturbance, VesselParams, VesselState


class ScenarioError(ValueError):
    """Scenario file violates the schema; the message names the field."""


_VESSEL_KEYS = [
    "m11", "m22", "m23", "m32", "m33",
    "Xu", "Yv", "Yr", "Nv", "Nr", "Xuu", "Yvv", "Nrr",
]


def _require(cond: bool, field: str, message: str):
    if not cond:
        raise ScenarioError(f"{field}: {message}")


def _check_keys(d: dict, allowed: Sequence[str], where: str):
    unknown = set(d) - set(allowed)
    _require(not unknown, where, f"unknown field(s) {sorted(unknown)}")


def _angle(d: dict, base: str, where: str, default=None) -> float:
    has_rad = base in d
    has_deg = f"{base}_deg" in d
    _require(not (has_rad and has_deg), where, f"give {base} or {base}_deg, not both")
    if has_rad:
        return float(d[base])
    if has_deg:
        return math.radians(float(d[f"{base}_deg"]))
    _require(default is not None, where, f"missing {base} / {base}_deg")
    return default


def _state(d: dict, where: str) -> VesselState:
    _check_keys(d, ["x", "y", "psi", "psi_deg", "u", "v", "r"], where)
    psi = _angle(d, "psi", where)
    return VesselState(
        eta=[float(d.get("x", 0.0)), float(d.get("y", 0.0)), psi],
        nu=[float(d.get("u", 0.0)), float(d.get("v", 0.0)), float(d.get("r", 0.0))],
    )


def _shape(d: dict, where: str) -> BasicShape:
    _check_keys(
        d,
        ["xo", "yo", "dx", "dy", "alpha", "alpha_deg", "a", "move_t0", "vx", "vy"],
        where,
    )
    for key in ("xo", "yo", "dx", "dy"):
        _require(key in d, where, f"missing {key}")
    _require(float(d["dx"]) > 0, f"{where}.dx", "must be > 0")
    _require(float(d["dy"]) > 0, f"{where}.dy", "must be > 0")
    a = int(d.get("a", 1))
    _require(a >= 1, f"{where}.a", "must be an integer >= 1")
    return BasicShape(
        xo=float(d["xo"]),
        yo=float(d["yo"]),
        dx=float(d["dx"]),
        dy=float(d["dy"]),
        alpha=_angle(d, "alpha", where, default=0.0),
        a=a,
        move_t0=float(d["move_t0"]) if "move_t0" in d else None,
        vx=float(d.get("vx", 0.0)),
        vy=float(d.get("vy", 0.0)),
    )


def _bound_vec(value, where: str, sign: float) -> np.ndarray:
    _require(isinstance(value, (list, tuple)) and len(value) == 3, where, "need 3 entries")
    out = []
    for v in value:
        out.append(sign * math.inf if v is None else float(v))
    return np.array(out)


@dataclass
class Scenario:
    """Validated scenario ready to drive plan / guess / track runs."""

    name: str
    params: VesselParams
    x0: VesselState
    xe: VesselState
    t0: float
    te: float
    tau0: Optional[np.ndarray]
    bounds: InputBounds
    field: ObstacleField
    planning: PlanningGrid
    eps: np.ndarray
    margin: float
    via: Optional[List[Tuple[float, float]]]
    ocp_dt: float
    ocp_segments: int
    cost_kind: str
    q1_diag: np.ndarray
    c1_value: float
    c1_window: Tuple[float, float]
    solver: SolverSettings
    mpc: MpcConfig
    plant_scale: float
    current: np.ndarray
    extra_shapes: List[BasicShape]
    output_dt: float
    description: str = ""

    def ocp_spec(self, cost_kind: Optional[str] = None) -> OcpSpec:
        return OcpSpec(
            x0=self.x0,
            xe=self.xe,
            t0=self.t0,
            te=self.te,
            grid=SampleGrid.uniform(self.t0, self.ocp_dt, self.ocp_segments),
            bounds=self.bounds,
            field=self.field,
            params=self.params,
            guess=self.guess_config(),
            q1_diag=self.q1_diag,
            cost_kind=cost_kind or self.cost_kind,
            tau0=self.tau0,
            c1_value=self.c1_value,
            c1_window=self.c1_window,
        )

    def guess_config(self) -> GuessConfig:
        return GuessConfig(
            planning=self.planning, eps=self.eps, margin=self.margin, via=self.via
        )

    def tracking_field(self) -> ObstacleField:
        return self.field.with_shapes(self.extra_shapes)

    def plant_params(self) -> VesselParams:
        return self.params.scaled(self.plant_scale)

    def disturbance(self) -> Optional[EnvironmentalDisturbance]:
        if np.allclose(self.current, 0.0):
            return None
        return EnvironmentalDisturbance(current_ned=self.current)

    def to_dict(self) -> dict:
        """Canonical (normalized) dictionary form; radians throughout."""

        def shape_dict(s: BasicShape) -> dict:
            d = {
                "xo": s.xo, "yo": s.yo, "dx": s.dx, "dy": s.dy,
                "alpha": s.alpha, "a": int(s.a),
            }
            if s.move_t0 is not None:
                d.update({"move_t0": s.move_t0, "vx": s.vx, "vy": s.vy})
            return d

        def state_dict(x: VesselState) -> dict:
            return {
                "x": x.eta[0], "y": x.eta[1], "psi": x.eta[2],
                "u": x.nu[0], "v": x.nu[1], "r": x.nu[2],
            }

        def bound_list(v: np.ndarray) -> list:
            return [None if not np.isfinite(b) else float(b) for b in v]

        return {
            "name": self.name,
            "description": self.description,
            "vessel": {k: getattr(self.params, k) for k in _VESSEL_KEYS},
            "start": state_dict(self.x0),
            "goal": state_dict(self.xe),
            "t0": self.t0,
            "te": self.te,
            "tau0": None if self.tau0 is None else list(self.tau0),
            "bounds": {
                "tau_min": bound_list(self.bounds.tau_min),
                "tau_max": bound_list(self.bounds.tau_max),
                "dtau_min": bound_list(self.bounds.dtau_min),
                "dtau_max": bound_list(self.bounds.dtau_max),
            },
            "obstacles": {
                "p": int(self.field.p),
                "shapes": [shape_dict(s) for s in self.field.shapes],
            },
            "map": {
                "x_min": self.planning.x_min, "x_max": self.planning.x_max,
                "y_min": self.planning.y_min, "y_max": self.planning.y_max,
            },
            "planning": {
                "nx": self.planning.nx, "ny": self.planning.ny,
                "margin": self.margin, "eps": list(self.eps),
                "via": None if self.via is None else [list(p) for p in self.via],
            },
            "ocp": {
                "dt": self.ocp_dt, "n_segments": self.ocp_segments,
                "cost": self.cost_kind, "q1_diag": list(self.q1_diag),
                "c1": {
                    "value": self.c1_value,
                    "t_on": self.c1_window[0], "t_off": self.c1_window[1],
                },
            },
            "solver": {
                "max_iter": self.solver.max_iter,
                "feas_tol": self.solver.feas_tol,
                "opt_tol": self.solver.opt_tol,
                "fd_step": self.solver.fd_step,
            },
            "mpc": {
                "tiers": [[dt, int(n)] for dt, n in self.mpc.tiers],
                "q2": self.mpc.q2, "q3": self.mpc.q3,
                "q4_diag": list(self.mpc.q4_diag),
                "cost": self.mpc.cost_kind,
                "awm_q_diag": list(self.mpc.awm_q_diag),
                "obstacle_mode": self.mpc.obstacle_mode,
                "max_iter": self.mpc.solver.max_iter,
            },
            "disturbance": {
                "plant_param_scale": self.plant_scale,
                "current": list(self.current),
                "extra_shapes": [shape_dict(s) for s in self.extra_shapes],
            },
            "output": {"dt": self.output_dt},
        }


_TOP_KEYS = [
    "name", "description", "vessel", "start", "goal", "t0", "te", "tau0",
    "bounds", "obstacles", "map", "planning", "ocp", "solver", "mpc",
    "disturbance", "output",
]


def scenario_from_dict(data: dict) -> Scenario:
    _require(isinstance(data, dict), "scenario", "must be a JSON object")
    _check_keys(data, _TOP_KEYS, "scenario")
    for key in ("vessel", "start", "goal", "t0", "te", "bounds", "obstacles", "map"):
        _require(key in data, "scenario", f"missing section {key!r}")

    v = data["vessel"]
    _check_keys(v, _VESSEL_KEYS, "vessel")
    for k in _VESSEL_KEYS:
        _require(k in v, f"vessel.{k}", "missing")
    try:
        params = VesselParams(**{k: float(v[k]) for k in _VESSEL_KEYS})
    except ValueError as exc:
        raise ScenarioError(f"vessel: {exc}") from exc

    x0 = _state(data["start"], "start")
    xe = _state(data["goal"], "goal")
    t0 = float(data["t0"])
    te = float(data["te"])
    _require(te > t0, "te", "must exceed t0")

    b = data["bounds"]
    _check_keys(b, ["tau_min", "tau_max", "dtau_min", "dtau_max"], "bounds")
    try:
        bounds = InputBounds(
            tau_min=_bound_vec(b["tau_min"], "bounds.tau_min", -1),
            tau_max=_bound_vec(b["tau_max"], "bounds.tau_max", +1),
            dtau_min=_bound_vec(b.get("dtau_min", [None] * 3), "bounds.dtau_min", -1),
            dtau_max=_bound_vec(b.get("dtau_max", [None] * 3), "bounds.dtau_max", +1),
        )
    except ValueError as exc:
        raise ScenarioError(f"bounds: {exc}") from exc

    o = data["obstacles"]
    _check_keys(o, ["p", "shapes"], "obstacles")
    p = int(o.get("p", 5))
    _require(p >= 1, "obstacles.p", "must be >= 1")
    shapes = []
    for i, sd in enumerate(o.get("shapes", [])):
        try:
            shapes.append(_shape(sd, f"obstacles.shapes[{i}]"))
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"obstacles.shapes[{i}]: {exc}") from exc
    _require(len(shapes) > 0, "obstacles.shapes", "need at least one shape")
    field = ObstacleField(shapes=tuple(shapes), p=p)

    m = data["map"]
    _check_keys(m, ["x_min", "x_max", "y_min", "y_max"], "map")
    pl = data.get("planning", {})
    _check_keys(pl, ["nx", "ny", "margin", "eps", "via"], "planning")
    try:
        planning = PlanningGrid(
            x_min=float(m["x_min"]), x_max=float(m["x_max"]),
            y_min=float(m["y_min"]), y_max=float(m["y_max"]),
            nx=int(pl.get("nx", 20)), ny=int(pl.get("ny", 40)),
        )
    except ValueError as exc:
        raise ScenarioError(f"map/planning: {exc}") from exc
    eps = np.asarray(pl.get("eps", [0.5, 0.5, 1.6]), dtype=float)
    _require(eps.shape == (3,) and (eps > 0).all(), "planning.eps", "need 3 positive widths")
    via_raw = pl.get("via")
    via = None if via_raw is None else [tuple(map(float, q)) for q in via_raw]

    oc = data.get("ocp", {})
    _check_keys(oc, ["dt", "n_segments", "cost", "q1_diag", "c1"], "ocp")
    ocp_dt = float(oc.get("dt", 2.0))
    ocp_segments = int(oc.get("n_segments", round((te - t0) / ocp_dt)))
    _require(ocp_segments >= 1, "ocp.n_segments", "must be >= 1")
    cost_kind = oc.get("cost", "energy")
    _require(
        cost_kind in ("energy", "shortest_distance"), "ocp.cost",
        "must be 'energy' or 'shortest_distance'",
    )
    default_q1 = [
        (1.0 / bounds.tau_max[0]) ** 2 if bounds.tau_max[0] not in (0.0, math.inf) else 0.0,
        0.0,
        (1.0 / bounds.tau_max[2]) ** 2 if bounds.tau_max[2] not in (0.0, math.inf) else 0.0,
    ]
    q1_diag = np.asarray(oc.get("q1_diag", default_q1), dtype=float)
    _require(q1_diag.shape == (3,) and (q1_diag >= 0).all(), "ocp.q1_diag", "3 nonneg entries")
    c1 = oc.get("c1", {})
    _check_keys(c1, ["value", "t_on", "t_off"], "ocp.c1")
    c1_value = float(c1.get("value", 10.0))
    c1_window = (float(c1.get("t_on", t0 + 10.0)), float(c1.get("t_off", te - 10.0)))

    so = data.get("solver", {})
    _check_keys(so, ["max_iter", "feas_tol", "opt_tol", "fd_step"], "solver")
    solver = SolverSettings(
        max_iter=int(so.get("max_iter", 600)),
        feas_tol=float(so.get("feas_tol", 1e-6)),
        opt_tol=float(so.get("opt_tol", 1e-6)),
        fd_step=float(so.get("fd_step", 1e-7)),
    )

    mp = data.get("mpc", {})
    _check_keys(
        mp,
        ["tiers", "q2", "q3", "q4_diag", "cost", "awm_q_diag", "obstacle_mode", "max_iter"],
        "mpc",
    )
    tiers = [
        (float(dt_), int(n_)) for dt_, n_ in mp.get("tiers", [[0.5, 2], [0.75, 4], [1.78, 9]])
    ]
    try:
        mpc = MpcConfig(
            tiers=tiers,
            bounds=bounds,
            q1_diag=q1_diag,
            q4_diag=np.asarray(mp.get("q4_diag", [50, 50, 50, 10, 10, 10]), dtype=float),
            q2=float(mp.get("q2", 1e3)),
            q3=float(mp.get("q3", 1e2)),
            cost_kind=mp.get("cost", "lwm"),
            awm_q_diag=np.asarray(mp.get("awm_q_diag", [100, 100, 100, 0, 0, 0]), dtype=float),
            obstacle_mode=mp.get("obstacle_mode", "predicted"),
            guess=GuessConfig(planning=planning, eps=eps, margin=float(pl.get("margin", 0.0))),
            solver=SolverSettings(max_iter=int(mp.get("max_iter", 150)), restarts=1),
        )
    except ValueError as exc:
        raise ScenarioError(f"mpc: {exc}") from exc

    di = data.get("disturbance", {})
    _check_keys(di, ["plant_param_scale", "current", "extra_shapes"], "disturbance")
    plant_scale = float(di.get("plant_param_scale", 1.0))
    _require(plant_scale > 0, "disturbance.plant_param_scale", "must be > 0")
    current = np.asarray(di.get("current", [0.0, 0.0]), dtype=float)
    _require(current.shape == (2,), "disturbance.current", "need 2 entries")
    extra = []
    for i, sd in enumerate(di.get("extra_shapes", [])):
        extra.append(_shape(sd, f"disturbance.extra_shapes[{i}]"))

    out = data.get("output", {})
    _check_keys(out, ["dt"], "output")

    tau0 = data.get("tau0")
    if tau0 is not None:
        _require(isinstance(tau0, (list, tuple)) and len(tau0) == 3, "tau0", "need 3 entries")
        tau0 = np.asarray(tau0, dtype=float)

    return Scenario(
        name=str(data.get("name", "unnamed")),
        description=str(data.get("description", "")),
        params=params,
        x0=x0,
        xe=xe,
        t0=t0,
        te=te,
        tau0=tau0,
        bounds=bounds,
        field=field,
        planning=planning,
        eps=eps,
        margin=float(pl.get("margin", 0.0)),
        via=via,
        ocp_dt=ocp_dt,
        ocp_segments=ocp_segments,
        cost_kind=cost_kind,
        q1_diag=q1_diag,
        c1_value=c1_value,
        c1_window=c1_window,
        solver=solver,
        mpc=mpc,
        plant_scale=plant_scale,
        current=current,
        extra_shapes=extra,
        output_dt=float(out.get("dt", 0.5)),
    )


def load_scenario(source) -> Scenario:
    """Load a scenario from a path or a bundled name (e.g. 'ipan-2021')."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.suffix and not path.exists():
            ref = resources.files("flatboat.scenarios").joinpath(f"{source}.json")
            if not ref.is_file():
                raise FileNotFoundError(f"no scenario file or bundled scenario {source!r}")
            data = json.loads(ref.read_text())
        else:
            if not path.exists():
                raise FileNotFoundError(f"scenario file {path} not found")
            data = json.loads(path.read_text())
    elif isinstance(source, dict):
        data = source
    else:
        raise TypeError("source must be a path, bundled name, or dict")
    return scenario_from_dict(data)


def bundled_scenario_names() -> List[str]:
    root = resources.files("flatboat.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
