"""Flat parametrization of the fully actuated 3DOF vessel model.

The flat output is the pose, z = eta.  States follow from (z, z_dot) by
inverting the kinematics, inputs from (z, z_dot, z_ddot) by inverting
the dynamics:

    nu     = R(z3)^T z_dot
    nu_dot = z3_dot * dR^T/dpsi z_dot + R(z3)^T z_ddot
    tau    = M nu_dot + (C(nu) + D(nu)) nu

Both maps are smooth everywhere (R is always invertible), so no
singular set restricts the trajectories that can be parametrized.
Underactuation (tau_v = 0) is imposed downstream through input bounds.

The array helpers `body_velocities`, `control_forces` and
`control_force_rates` broadcast over arbitrary leading axes; the
optimizer relies on this to evaluate whole trajectories (and batches of
finite-difference perturbations) in a few vectorized passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vessel import ControlInput, VesselParams, VesselState


@dataclass
class FlatPoint:
    """Flat output z = (z1, z2, z3) with first and second derivatives."""

    z: np.ndarray
    zdot: np.ndarray
    zddot: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.zdot = np.asarray(self.zdot, dtype=float)
        self.zddot = np.asarray(self.zddot, dtype=float)


def body_velocities(z: np.ndarray, zdot: np.ndarray) -> np.ndarray:
    """nu = R(z3)^T z_dot, vectorized over leading axes (..., 3)."""
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    c, s = np.cos(z[..., 2]), np.sin(z[..., 2])
    u = c * zdot[..., 0] + s * zdot[..., 1]
    v = -s * zdot[..., 0] + c * zdot[..., 1]
    return np.stack([u, v, zdot[..., 2]], axis=-1)


def body_accelerations(
    z: np.ndarray, zdot: np.ndarray, zddot: np.ndarray
) -> np.ndarray:
    """nu_dot along a flat trajectory, vectorized over leading axes."""
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    zddot = np.asarray(zddot, dtype=float)
    c, s = np.cos(z[..., 2]), np.sin(z[..., 2])
    psidot = zdot[..., 2]
    u = c * zdot[..., 0] + s * zdot[..., 1]
    v = -s * zdot[..., 0] + c * zdot[..., 1]
    # d/dt(R^T) zdot = psidot * [v, -u, 0]
    udot = psidot * v + c * zddot[..., 0] + s * zddot[..., 1]
    vdot = -psidot * u - s * zddot[..., 0] + c * zddot[..., 1]
    return np.stack([udot, vdot, zddot[..., 2]], axis=-1)


def _rigid_body_forces(
    nu: np.ndarray, nudot: np.ndarray, params: VesselParams
) -> np.ndarray:
    """tau = M nu_dot + (C(nu) + D(nu)) nu, elementwise over (..., 3)."""
    p = params
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    m23p32 = 0.5 * (p.m23 + p.m32)
    c13 = -p.m22 * v - m23p32 * r
    coriolis = np.stack(
        [
            c13 * r,
            p.m11 * u * r,
            -c13 * u - p.m11 * u * v,
        ],
        axis=-1,
    )
    damping = np.stack(
        [
            (p.Xu + p.Xuu * np.abs(u)) * u,
            (p.Yv + p.Yvv * np.abs(v)) * v + p.Yr * r,
            p.Nv * v + (p.Nr + p.Nrr * np.abs(r)) * r,
        ],
        axis=-1,
    )
    inertial = np.stack(
        [
            p.m11 * nudot[..., 0],
            p.m22 * nudot[..., 1] + p.m23 * nudot[..., 2],
            p.m32 * nudot[..., 1] + p.m33 * nudot[..., 2],
        ],
        axis=-1,
    )
    return inertial + coriolis + damping


def control_forces(
    z: np.ndarray, zdot: np.ndarray, zddot: np.ndarray, params: VesselParams
) -> np.ndarray:
    """Input forces tau realizing the flat trajectory, shape (..., 3)."""
    nu = body_velocities(z, zdot)
    nudot = body_accelerations(z, zdot, zddot)
    return _rigid_body_forces(nu, nudot, params)


def control_force_rates(
    z: np.ndarray,
    zdot: np.ndarray,
    zddot: np.ndarray,
    zjerk: np.ndarray,
    params: VesselParams,
) -> np.ndarray:
    """d(tau)/dt along a flat trajectory with piecewise-linear z_ddot.

    `zjerk` is the (segment-constant) slope of z_ddot.  The quadratic
    damping terms use d|w|w/dt = 2|w| w_dot, which is continuous.
    """
    p = params
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    zddot = np.asarray(zddot, dtype=float)
    zjerk = np.asarray(zjerk, dtype=float)

    c, s = np.cos(z[..., 2]), np.sin(z[..., 2])
    psidot, psiddot = zdot[..., 2], zddot[..., 2]
    nu = body_velocities(z, zdot)
    nudot = body_accelerations(z, zdot, zddot)
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    udot, vdot, rdot = nudot[..., 0], nudot[..., 1], nudot[..., 2]

    # nu_ddot = psiddot dR^T/dpsi zdot + psidot^2 d2R^T/dpsi2 zdot
    #           + 2 psidot dR^T/dpsi zddot + R^T zjerk
    rot_dot_zdot_u = v  # (dR^T/dpsi zdot)_u
    rot_dot_zdot_v = -u  # (dR^T/dpsi zdot)_v
    rot_ddot_zdot_u = -(c * zdot[..., 0] + s * zdot[..., 1])  # (d2R^T/dpsi2 zdot)_u
    rot_ddot_zdot_v = s * zdot[..., 0] - c * zdot[..., 1]  # (d2R^T/dpsi2 zdot)_v
    rot_dot_zddot_u = -s * zddot[..., 0] + c * zddot[..., 1]
    rot_dot_zddot_v = -(c * zddot[..., 0] + s * zddot[..., 1])
    uddot = (
        psiddot * rot_dot_zdot_u
        + psidot**2 * rot_ddot_zdot_u
        + 2.0 * psidot * rot_dot_zddot_u
        + c * zjerk[..., 0]
        + s * zjerk[..., 1]
    )
    vddot = (
        psiddot * rot_dot_zdot_v
        + psidot**2 * rot_ddot_zdot_v
        + 2.0 * psidot * rot_dot_zddot_v
        - s * zjerk[..., 0]
        + c * zjerk[..., 1]
    )
    rddot = zjerk[..., 2]

    m23p32 = 0.5 * (p.m23 + p.m32)
    c13 = -p.m22 * v - m23p32 * r
    c13_dot = -p.m22 * vdot - m23p32 * rdot

    dcoriolis = np.stack(
        [
            c13_dot * r + c13 * rdot,
            p.m11 * (udot * r + u * rdot),
            -(c13_dot * u + c13 * udot) - p.m11 * (udot * v + u * vdot),
        ],
        axis=-1,
    )
    ddamping = np.stack(
        [
            (p.Xu + 2.0 * p.Xuu * np.abs(u)) * udot,
            (p.Yv + 2.0 * p.Yvv * np.abs(v)) * vdot + p.Yr * rdot,
            p.Nv * vdot + (p.Nr + 2.0 * p.Nrr * np.abs(r)) * rdot,
        ],
        axis=-1,
    )
    dinertial = np.stack(
        [
            p.m11 * uddot,
            p.m22 * vddot + p.m23 * rddot,
            p.m32 * vddot + p.m33 * rddot,
        ],
        axis=-1,
    )
    return dinertial + dcoriolis + ddamping


def theta_x(z, zdot, params: VesselParams = None) -> VesselState:
    """State map: eta = z, nu = R(z3)^T z_dot (exact kinematic inverse)."""
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    return VesselState(eta=z.copy(), nu=body_velocities(z, zdot))


def theta_tau(z, zdot, zddot, params: VesselParams) -> ControlInput:
    """Input map: forces realizing the flat trajectory point."""
    tau = control_forces(
        np.asarray(z, dtype=float),
        np.asarray(zdot, dtype=float),
        np.asarray(zddot, dtype=float),
        params,
    )
    return ControlInput.from_vector(tau)


def theta_tau_rate(z, zdot, zddot, zjerk, params: VesselParams) -> np.ndarray:
    """d(tau)/dt at a flat point with given z_ddot slope `zjerk`."""
    return control_force_rates(
        np.asarray(z, dtype=float),
        np.asarray(zdot, dtype=float),
        np.asarray(zddot, dtype=float),
        np.asarray(zjerk, dtype=float),
        params,
    )
