"""3DOF surface vessel model and plant simulator.

The vessel is described by its pose eta = [x, y, psi] in the inertial
NED frame (x north, y east, psi heading) and body-fixed velocities
nu = [u, v, r] (surge, sway, yaw rate).  The equations of motion are

    eta_dot = R(psi) nu  (+ ocean current drift)
    M nu_dot = -(C(nu) + D(nu)) nu + tau

with constant inertia matrix M, velocity-dependent Coriolis matrix
C(nu) and nonlinear damping D(nu).  The control vector is
tau = [tau_u, tau_v, tau_r]; tau_v = 0 in the underactuated case.

Headings are tracked on the real line (never wrapped): downstream
trajectory generation requires psi to be a smooth signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp


class IntegrationError(RuntimeError):
    """Adaptive integration failed before reaching the end time."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t={t_reached:.6g} s)")
        self.t_reached = t_reached


@dataclass(frozen=True)
class VesselParams:
    """Inertia, Coriolis and damping coefficients of the 3DOF model.

    Units: m11, m22 in kg; m23, m32 in kg*m; m33 in kg*m^2; Xu, Yv in
    kg/s; Yr, Nv in kg*m/s; Nr in kg*m^2/s; Xuu, Yvv in kg/m; Nrr in
    kg*m^2.
    """

    m11: float
    m22: float
    m23: float
    m32: float
    m33: float
    Xu: float
    Yv: float
    Yr: float
    Nv: float
    Nr: float
    Xuu: float
    Yvv: float
    Nrr: float

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(np.isfinite(vals)):
            raise ValueError("vessel parameters must be finite")
        if self.m11 <= 0 or self.m22 <= 0:
            raise ValueError("m11 and m22 must be positive")
        if self.m22 * self.m33 - self.m23 * self.m32 <= 0:
            raise ValueError("inertia matrix must be invertible: m22*m33 - m23*m32 > 0")
        for name in ("Xu", "Yv", "Yr", "Nv", "Nr", "Xuu", "Yvv", "Nrr"):
            if getattr(self, name) < 0:
                raise ValueError(f"damping coefficient {name} must be >= 0")

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.m11, 0.0, 0.0],
                [0.0, self.m22, self.m23],
                [0.0, self.m32, self.m33],
            ]
        )

    def scaled(self, factor: float) -> "VesselParams":
        """All coefficients multiplied by `factor` (plant/model mismatch)."""
        return replace(
            self, **{f: factor * getattr(self, f) for f in self.__dataclass_fields__}
        )


@dataclass
class VesselState:
    """Pose eta = (x, y, psi) in NED and body velocities nu = (u, v, r)."""

    eta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.eta.shape != (3,) or self.nu.shape != (3,):
            raise ValueError("eta and nu must be 3-vectors")
        if not (np.isfinite(self.eta).all() and np.isfinite(self.nu).all()):
            raise ValueError("state entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.nu])

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "VesselState":
        x = np.asarray(x, dtype=float)
        return cls(eta=x[:3].copy(), nu=x[3:6].copy())


@dataclass
class ControlInput:
    """Surge force, sway force and yaw moment (N, N, N*m)."""

    tau_u: float
    tau_v: float = 0.0
    tau_r: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.tau_u, self.tau_v, self.tau_r], dtype=float)

    @classmethod
    def from_vector(cls, tau: Sequence[float]) -> "ControlInput":
        tau = np.asarray(tau, dtype=float)
        return cls(*tau[:3])


@dataclass
class EnvironmentalDisturbance:
    """Ocean current velocity in the NED frame (pure kinematic drift)."""

    current_ned: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.current_ned = np.asarray(self.current_ned, dtype=float)
        if self.current_ned.shape != (2,) or not np.isfinite(self.current_ned).all():
            raise ValueError("current_ned must be a finite 2-vector")


def rotation(psi: float) -> np.ndarray:
    """Rotation matrix mapping body velocities to the NED frame."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def coriolis_matrix(nu: Sequence[float], params: VesselParams) -> np.ndarray:
    """Coriolis/centripetal matrix C(nu); skew in the sense c31 = -c13."""
    u, v, r = np.asarray(nu, dtype=float)
    c13 = -params.m22 * v - 0.5 * (params.m23 + params.m32) * r
    return np.array(
        [
            [0.0, 0.0, c13],
            [0.0, 0.0, params.m11 * u],
            [-c13, -params.m11 * u, 0.0],
        ]
    )


def damping_matrix(nu: Sequence[float], params: VesselParams) -> np.ndarray:
    """Linear plus quadratic damping matrix D(nu)."""
    u, v, r = np.asarray(nu, dtype=float)
    return np.array(
        [
            [params.Xu + params.Xuu * abs(u), 0.0, 0.0],
            [0.0, params.Yv + params.Yvv * abs(v), params.Yr],
            [0.0, params.Nv, params.Nr + params.Nrr * abs(r)],
        ]
    )


def state_derivative(
    state: VesselState,
    tau: ControlInput,
    params: VesselParams,
    disturbance: Optional[EnvironmentalDisturbance] = None,
) -> np.ndarray:
    """Time derivative of the 6-dim state vector [eta, nu].

    The current enters only at the kinematic level (rigid-body drift).
    """
    x = state.as_vector()
    return _rhs(x, tau.as_vector(), params, disturbance)


def _rhs(
    x: np.ndarray,
    tau: np.ndarray,
    params: VesselParams,
    disturbance: Optional[EnvironmentalDisturbance],
) -> np.ndarray:
    psi = x[2]
    nu = x[3:6]
    eta_dot = rotation(psi) @ nu
    if disturbance is not None:
        eta_dot = eta_dot + np.array(
            [disturbance.current_ned[0], disturbance.current_ned[1], 0.0]
        )
    rhs = tau - (coriolis_matrix(nu, params) + damping_matrix(nu, params)) @ nu
    nu_dot = np.linalg.solve(params.inertia_matrix, rhs)
    return np.concatenate([eta_dot, nu_dot])


@dataclass
class SimResult:
    """Sampled trajectory from the plant simulator."""

    times: np.ndarray
    states: np.ndarray  # shape (len(times), 6)

    @property
    def final_state(self) -> VesselState:
        return VesselState.from_vector(self.states[-1])


def simulate(
    state0: VesselState,
    control_signal: Callable[[float], ControlInput],
    t0: float,
    t1: float,
    params: VesselParams,
    disturbance: Optional[EnvironmentalDisturbance] = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    t_eval: Optional[Sequence[float]] = None,
    max_step: float = np.inf,
) -> SimResult:
    """Integrate the plant with an embedded RK4(5) pair (adaptive step).

    Returns the states at the requested output times; the final state at
    t1 is always included as the last sample.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")

    def rhs(t, x):
        tau = control_signal(t).as_vector()
        return _rhs(x, tau, params, disturbance)

    if t_eval is None:
        ts = np.array([t0, t1])
    else:
        ts = np.asarray(t_eval, dtype=float)
        if ts.size == 0 or ts[-1] < t1:
            ts = np.append(ts, t1)
    sol = solve_ivp(
        rhs,
        (t0, t1),
        state0.as_vector(),
        method="RK45",
        rtol=rtol,
        atol=atol,
        t_eval=ts,
        max_step=max_step,
    )
    if not sol.success:
        reached = sol.t[-1] if sol.t.size else t0
        raise IntegrationError(sol.message, t_reached=float(reached))
    return SimResult(times=sol.t, states=sol.y.T)
