"""Discrete integrator chain for a piecewise-linear z_ddot ansatz.

Each flat-output dimension is a double integrator driven by z_ddot.
With z_ddot continuous and piecewise linear between samples, the state
zeta_k = (z_k, zdot_k) obeys the exact discrete recursion

    zeta_{k+1} = A(T) zeta_k + B(T) [zddot_k, zddot_{k+1}]^T
    A(T) = [[1, T], [0, 1]],   B(T) = [[T^2/3, T^2/6], [T/2, T/2]]

so sample values carry no discretization error, on uniform or mixed
step grids alike.  The decision vector stacks, per dimension, the
initial values (z_0, zdot_0) followed by all z_ddot samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .flat import FlatPoint


class ContractViolation(ValueError):
    """An argument does not satisfy the operation's contract."""


@dataclass(frozen=True)
class SampleGrid:
    """Strictly positive segment lengths T_1..T_N starting at t0."""

    t0: float
    steps: np.ndarray

    def __post_init__(self):
        steps = np.atleast_1d(np.asarray(self.steps, dtype=float))
        object.__setattr__(self, "steps", steps)
        if steps.ndim != 1 or steps.size < 1:
            raise ContractViolation("grid needs at least one segment")
        if not (np.isfinite(steps).all() and (steps > 0).all()):
            raise ContractViolation("segment lengths must be finite and > 0")

    @property
    def n_segments(self) -> int:
        return self.steps.size

    @property
    def n_knots(self) -> int:
        return self.steps.size + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.concatenate([[0.0], np.cumsum(self.steps)])

    @property
    def duration(self) -> float:
        return float(np.sum(self.steps))

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    @classmethod
    def uniform(cls, t0: float, dt: float, n_segments: int) -> "SampleGrid":
        return cls(t0=t0, steps=np.full(n_segments, float(dt)))

    @classmethod
    def from_tiers(
        cls, t0: float, tiers: Sequence[Tuple[float, int]]
    ) -> "SampleGrid":
        """Concatenated runs of constant sample times, e.g. MPC tiers."""
        steps = np.concatenate([np.full(n, float(dt)) for dt, n in tiers])
        return cls(t0=t0, steps=steps)


def a_matrix(T: float) -> np.ndarray:
    return np.array([[1.0, T], [0.0, 1.0]])


def b_matrix(T: float) -> np.ndarray:
    return np.array([[T * T / 3.0, T * T / 6.0], [T / 2.0, T / 2.0]])


def propagate(
    zeta0: np.ndarray, zddot_seq: np.ndarray, grid: SampleGrid
) -> np.ndarray:
    """Knot states (z_k, zdot_k) for k = 0..N, exactly.

    zeta0: (..., 2); zddot_seq: (..., N+1).  Returns (..., N+1, 2).
    Broadcasts over leading axes, which the optimizer uses to evaluate
    batches of finite-difference perturbations in one call.
    """
    zeta0 = np.asarray(zeta0, dtype=float)
    zdd = np.asarray(zddot_seq, dtype=float)
    if zeta0.shape[-1] != 2:
        raise ContractViolation("zeta0 must have trailing dimension 2")
    if zdd.shape[-1] != grid.n_knots:
        raise ContractViolation(
            f"zddot sequence length {zdd.shape[-1]} != {grid.n_knots} knots"
        )
    T = grid.steps
    dv = T * 0.5 * (zdd[..., :-1] + zdd[..., 1:])
    zdot = np.concatenate(
        [zeta0[..., 1:2], zeta0[..., 1:2] + np.cumsum(dv, axis=-1)], axis=-1
    )
    dz = T * zdot[..., :-1] + T * T * (zdd[..., :-1] / 3.0 + zdd[..., 1:] / 6.0)
    z = np.concatenate(
        [zeta0[..., 0:1], zeta0[..., 0:1] + np.cumsum(dz, axis=-1)], axis=-1
    )
    return np.stack([z, zdot], axis=-1)


def build_h_matrix(grid: SampleGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form transition A_N (2x2) and input map H_N (2 x N+1).

    zeta_N = A_N zeta_0 + H_N zddot_[0..N].  Exists for testing and
    linear pre-elimination; the forward recursion in `propagate` is the
    computational path.
    """
    n = grid.n_segments
    # phi[k] = A(T_N) ... A(T_{k+1}) maps knot k to knot N.
    phi = [np.eye(2) for _ in range(n + 1)]
    for k in range(n - 1, -1, -1):
        phi[k] = phi[k + 1] @ a_matrix(grid.steps[k])
    H = np.zeros((2, n + 1))
    for j in range(n + 1):
        col = np.zeros(2)
        if j < n:  # enters segment j -> j+1 through b1(T_{j+1})
            col += phi[j + 1] @ b_matrix(grid.steps[j])[:, 0]
        if j > 0:  # enters segment j-1 -> j through b2(T_j)
            col += phi[j] @ b_matrix(grid.steps[j - 1])[:, 1]
        H[:, j] = col
    return phi[0], H


def decision_length(n_segments: int, with_slack: bool = False) -> int:
    return 3 * (n_segments + 3) + (1 if with_slack else 0)


def pack(
    z0: np.ndarray, zdot0: np.ndarray, zddot: np.ndarray
) -> np.ndarray:
    """Stack per-dimension (z_0, zdot_0, zddot_0..N) into one vector."""
    z0 = np.asarray(z0, dtype=float)
    zdot0 = np.asarray(zdot0, dtype=float)
    zddot = np.asarray(zddot, dtype=float)
    if z0.shape != (3,) or zdot0.shape != (3,) or zddot.ndim != 2 or zddot.shape[1] != 3:
        raise ContractViolation("expected z0 (3,), zdot0 (3,), zddot (N+1, 3)")
    parts = []
    for i in range(3):
        parts.extend([[z0[i]], [zdot0[i]], zddot[:, i]])
    return np.concatenate(parts)


def unpack(
    xi: np.ndarray, grid: SampleGrid
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of `pack`; broadcasts over leading batch axes of xi.

    Returns (z0, zdot0, zddot) with shapes (..., 3), (..., 3) and
    (..., N+1, 3).
    """
    xi = np.asarray(xi, dtype=float)
    m = grid.n_knots
    if xi.shape[-1] != 3 * (m + 2):
        raise ContractViolation(
            f"decision vector length {xi.shape[-1]} != 3*(N+3) = {3 * (m + 2)}"
        )
    blocks = xi.reshape(xi.shape[:-1] + (3, m + 2))
    z0 = blocks[..., 0]
    zdot0 = blocks[..., 1]
    zddot = np.moveaxis(blocks[..., 2:], -2, -1)
    return z0, zdot0, zddot


@dataclass
class FlatTrajectory:
    """Sample grid plus per-knot (z, zdot, zddot), each (N+1, 3)."""

    grid: SampleGrid
    z: np.ndarray
    zdot: np.ndarray
    zddot: np.ndarray

    @classmethod
    def from_decision(cls, xi: np.ndarray, grid: SampleGrid) -> "FlatTrajectory":
        z0, zdot0, zddot = unpack(xi, grid)
        z, zdot = knot_states(z0, zdot0, zddot, grid)
        return cls(grid=grid, z=z, zdot=zdot, zddot=zddot)

    def to_decision(self) -> np.ndarray:
        return pack(self.z[0], self.zdot[0], self.zddot)

    def knot_point(self, k: int) -> FlatPoint:
        return FlatPoint(z=self.z[k], zdot=self.zdot[k], zddot=self.zddot[k])


def knot_states(
    z0: np.ndarray, zdot0: np.ndarray, zddot: np.ndarray, grid: SampleGrid
) -> Tuple[np.ndarray, np.ndarray]:
    """(z, zdot) at all knots, shapes (..., N+1, 3); batch-aware."""
    zeta0 = np.stack([z0, zdot0], axis=-1)  # (..., 3, 2)
    states = propagate(zeta0, np.swapaxes(zddot, -1, -2), grid)  # (..., 3, N+1, 2)
    z = np.swapaxes(states[..., 0], -1, -2)
    zdot = np.swapaxes(states[..., 1], -1, -2)
    return z, zdot


def evaluate_continuous(
    xi: np.ndarray, grid: SampleGrid, t
) -> FlatPoint:
    """Dense trajectory evaluation, exact within the ansatz class.

    z_ddot is interpolated linearly on the containing segment, zdot and
    z by its exact quadratic/cubic integrals.  `t` may be scalar or an
    array within [t0, t_end] (1e-9 s slack for roundoff).
    """
    t_arr = np.asarray(t, dtype=float)
    times = grid.times
    if np.any(t_arr < times[0] - 1e-9) or np.any(t_arr > times[-1] + 1e-9):
        raise ValueError(
            f"t outside grid range [{times[0]:.6g}, {times[-1]:.6g}]"
        )
    z0, zdot0, zddot = unpack(xi, grid)
    z, zdot = knot_states(z0, zdot0, zddot, grid)

    seg = np.clip(np.searchsorted(times, t_arr, side="right") - 1, 0, grid.n_segments - 1)
    sigma = t_arr - times[seg]
    T = grid.steps[seg]
    slope = (zddot[seg + 1, :] - zddot[seg, :]) / T[..., None]
    sig = sigma[..., None]
    zdd_t = zddot[seg, :] + slope * sig
    zdot_t = zdot[seg, :] + zddot[seg, :] * sig + 0.5 * slope * sig**2
    z_t = (
        z[seg, :]
        + zdot[seg, :] * sig
        + 0.5 * zddot[seg, :] * sig**2
        + slope * sig**3 / 6.0
    )
    return FlatPoint(z=z_t, zdot=zdot_t, zddot=zdd_t)
