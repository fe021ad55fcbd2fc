"""Smooth constructive-solid-geometry obstacle field.

Obstacles are parametric basic shapes with an implicit defining
function f(x, y) >= 0: f <= 1 marks occupied area, f = 1 the boundary.
The corner-rounding exponent a morphs the shape from an ellipse (a = 1)
toward a rectangle (a -> inf).  Multiple shapes combine through the
smooth union

    U_p(f_1, ..., f_n) = (sum_i f_i^(-p))^(-1/p)

which underestimates min_i f_i (conservative) and converges to it as
p grows.  The constraint handed to the optimizer is 1 - U_p <= 0,
independent of the number of shapes.

Shapes may carry a constant-velocity motion law that kicks in at a
start time; evaluation at time t translates the center accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class BasicShape:
    """Rounded-rectangle defining function with optional drift motion.

    xo, yo: center (m); dx, dy: length and width (m); alpha:
    orientation (rad); a: corner rounding (a = 1 circular/elliptic).
    Motion: center moves with (vx, vy) for t > move_t0.
    """

    xo: float
    yo: float
    dx: float
    dy: float
    alpha: float = 0.0
    a: int = 1
    move_t0: Optional[float] = None
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("shape dimensions dx, dy must be > 0")
        if int(self.a) < 1 or self.a != int(self.a):
            raise ValueError("corner exponent a must be an integer >= 1")

    @property
    def moving(self) -> bool:
        return self.move_t0 is not None and (self.vx != 0.0 or self.vy != 0.0)

    def center_at(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Center position at time t (broadcasts over t)."""
        t = np.asarray(t, dtype=float)
        if self.move_t0 is None:
            shift = np.zeros_like(t)
            return self.xo + shift, self.yo + shift
        dt = np.maximum(t - self.move_t0, 0.0)
        return self.xo + self.vx * dt, self.yo + self.vy * dt

    def velocity_at(self, t: float) -> Tuple[float, float]:
        """Observable center velocity at time t (left limit: a shape
        whose motion starts exactly at t still reads as stationary)."""
        if self.move_t0 is None or t <= self.move_t0:
            return 0.0, 0.0
        return self.vx, self.vy

    def value(self, x, y, t=0.0) -> np.ndarray:
        """Defining function; 0 at the center, 1 on the boundary."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cx, cy = self.center_at(t)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        rx = x - cx
        ry = y - cy
        xi = 2.0 * (ca * rx + sa * ry) / self.dx
        eta = 2.0 * (-sa * rx + ca * ry) / self.dy
        two_a = 2 * int(self.a)
        return (xi**two_a + eta**two_a) ** (1.0 / self.a)


def shape_value(shape: BasicShape, x, y, t=0.0) -> np.ndarray:
    return shape.value(x, y, t)


@dataclass(frozen=True)
class ObstacleField:
    """Smooth union of basic shapes with sharpness exponent p >= 1."""

    shapes: Tuple[BasicShape, ...]
    p: int = 5

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        if int(self.p) < 1 or self.p != int(self.p):
            raise ValueError("union exponent p must be an integer >= 1")

    @property
    def has_moving_shapes(self) -> bool:
        return any(s.moving for s in self.shapes)

    def with_shapes(self, extra: List[BasicShape]) -> "ObstacleField":
        return ObstacleField(shapes=self.shapes + tuple(extra), p=self.p)

    def frozen_at(self, t: float) -> "ObstacleField":
        """Field with every center pinned at its position at time t."""
        pinned = []
        for s in self.shapes:
            cx, cy = s.center_at(t)
            pinned.append(
                BasicShape(
                    xo=float(cx), yo=float(cy), dx=s.dx, dy=s.dy,
                    alpha=s.alpha, a=s.a,
                )
            )
        return ObstacleField(shapes=tuple(pinned), p=self.p)

    def predicted_from(self, t_now: float) -> "ObstacleField":
        """Field extrapolating each center from its position at t_now
        with its velocity observable at t_now (constant-velocity
        prediction; motion that has not started yet is not foreseen)."""
        predicted = []
        for s in self.shapes:
            cx, cy = s.center_at(t_now)
            vx, vy = s.velocity_at(t_now)
            predicted.append(
                BasicShape(
                    xo=float(cx), yo=float(cy), dx=s.dx, dy=s.dy,
                    alpha=s.alpha, a=s.a,
                    move_t0=t_now if (vx, vy) != (0.0, 0.0) else None,
                    vx=vx, vy=vy,
                )
            )
        return ObstacleField(shapes=tuple(predicted), p=self.p)

    def union_value(self, x, y, t=0.0) -> np.ndarray:
        """Approximate union of the defining functions; 0 where any
        shape value is 0 (limit continuation).

        Computed as fmin * (sum (fmin/f_i)^p)^(-1/p) so no overflow
        occurs for small values or large p.
        """
        if not self.shapes:
            raise ValueError("union of an empty field is undefined")
        vals = np.stack(
            [s.value(x, y, t) for s in self.shapes], axis=0
        )
        fmin = vals.min(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(vals > 0, fmin / np.where(vals > 0, vals, 1.0), 1.0)
            ssum = np.sum(ratios ** self.p, axis=0)
            out = fmin * ssum ** (-1.0 / self.p)
        return np.where(fmin > 0, out, 0.0)

    def constraint_value(self, x, y, t=0.0) -> np.ndarray:
        """1 - U_p; feasible (outside obstacles) iff <= 0."""
        return 1.0 - self.union_value(x, y, t)

    def occupancy_grid(
        self,
        bounds: Tuple[float, float, float, float],
        nx: int,
        ny: int,
        t=0.0,
        margin: float = 0.0,
    ) -> np.ndarray:
        """Boolean (nx, ny) array; True where the cell center has
        union value <= 1 + margin.

        `t` may be an array of times, in which case a cell is occupied
        if it is occupied at any of them (swept occupancy for moving
        shapes).
        """
        x_min, x_max, y_min, y_max = bounds
        if not (x_max > x_min and y_max > y_min):
            raise ValueError("degenerate bounds")
        if nx < 2 or ny < 2:
            raise ValueError("nx, ny must be >= 2")
        if not self.shapes:
            return np.zeros((nx, ny), dtype=bool)
        xc = x_min + (np.arange(nx) + 0.5) * (x_max - x_min) / nx
        yc = y_min + (np.arange(ny) + 0.5) * (y_max - y_min) / ny
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        times = np.atleast_1d(np.asarray(t, dtype=float))
        occ = np.zeros((nx, ny), dtype=bool)
        for tk in times:
            occ |= self.union_value(X, Y, tk) <= 1.0 + margin
        return occ


def union_value(field: ObstacleField, x, y, t=0.0) -> np.ndarray:
    return field.union_value(x, y, t)


def constraint_value(field: ObstacleField, x, y, t=0.0) -> np.ndarray:
    return field.constraint_value(x, y, t)


def occupancy_grid(field, bounds, nx, ny, t=0.0, margin=0.0) -> np.ndarray:
    return field.occupancy_grid(bounds, nx, ny, t, margin)
