"""Initial-guess pipeline: grid search, timing, mollifier smoothing.

The flat output equals the vessel pose, so a geometric path is already
"half" a trajectory.  The pipeline runs:

1. A* on an occupancy grid (8-connected, Euclidean step costs).
2. Path refinement: drop nodes not adjacent to an obstacle, snap the
   ends to the exact start/goal positions.
3. Timing: constant along-track speed V = L / (te - t0) turns the
   polyline into piecewise-constant speed signals for x and y and an
   impulse train for the heading rate (one impulse per turn).
4. Smoothing: the decision variables are second derivatives, so the
   guess samples the convolution (signal * phi_dot) where phi is a
   polynomial mollifier.  Every step of height h at time s contributes
   h*phi(t - s) and every impulse of weight a contributes
   a*phi_dot(t - s); the convolution is therefore evaluated in closed
   form, no quadrature.
5. Boundary handling: signals are extended by odd mirroring about
   (t0, zdot0*) and (te, zdote*) so the smoothed derivatives meet the
   prescribed boundary speeds exactly.

The result satisfies the vessel ODE by construction (any flat
trajectory does) but may violate input bounds; the NLP repairs that.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .discretization import SampleGrid, build_h_matrix, knot_states, pack, propagate
from .obstacles import ObstacleField
from .vessel import VesselState, rotation


class PathNotFoundError(RuntimeError):
    """No collision-free grid path connects start and goal."""


@dataclass(frozen=True)
class PlanningGrid:
    """Rectangular cell grid over the map area used by the A* search."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("degenerate planning bounds")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("planning grid needs nx, ny >= 2")

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    @property
    def pitch(self) -> Tuple[float, float]:
        return (
            (self.x_max - self.x_min) / self.nx,
            (self.y_max - self.y_min) / self.ny,
        )

    def cell_center(self, cell: Tuple[int, int]) -> np.ndarray:
        px, py = self.pitch
        return np.array(
            [self.x_min + (cell[0] + 0.5) * px, self.y_min + (cell[1] + 0.5) * py]
        )

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        px, py = self.pitch
        i = int(np.clip((x - self.x_min) // px, 0, self.nx - 1))
        j = int(np.clip((y - self.y_min) // py, 0, self.ny - 1))
        return i, j

    def nearest_free_cell(
        self, x: float, y: float, occupancy: np.ndarray
    ) -> Tuple[int, int]:
        """Free cell whose center is closest to (x, y)."""
        if not occupancy.any():
            return self.cell_of(x, y)
        px, py = self.pitch
        xc = self.x_min + (np.arange(self.nx) + 0.5) * px
        yc = self.y_min + (np.arange(self.ny) + 0.5) * py
        d2 = (xc[:, None] - x) ** 2 + (yc[None, :] - y) ** 2
        d2 = np.where(occupancy, np.inf, d2)
        if not np.isfinite(d2.min()):
            raise PathNotFoundError("no free cell in the planning grid")
        flat = int(np.argmin(d2))
        return flat // self.ny, flat % self.ny


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def astar(
    occupancy: np.ndarray,
    start: Tuple[int, int],
    goal: Tuple[int, int],
    pitch: Tuple[float, float] = (1.0, 1.0),
) -> List[Tuple[int, int]]:
    """Minimal-cost 8-connected path from start to goal.

    Step cost is the Euclidean distance between cell centers; the
    heuristic is the Euclidean distance to the goal (admissible).  Ties
    on the f-score break toward lower h, then row-major cell order, so
    results are deterministic.
    """
    nx, ny = occupancy.shape
    px, py = pitch

    def check(cell, name):
        i, j = cell
        if not (0 <= i < nx and 0 <= j < ny):
            raise PathNotFoundError(f"{name} cell {cell} outside the grid")
        if occupancy[i, j]:
            raise PathNotFoundError(f"{name} cell {cell} is occupied")

    check(start, "start")
    check(goal, "goal")
    if start == goal:
        return [start]

    def h(cell):
        return float(np.hypot((cell[0] - goal[0]) * px, (cell[1] - goal[1]) * py))

    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    open_heap = [(h(start), h(start), start[0] * ny + start[1], start)]
    while open_heap:
        f, _, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        if cell == goal:
            path = []
            while cell is not None:
                path.append(cell)
                cell = parent[cell]
            return path[::-1]
        closed.add(cell)
        gc = g[cell]
        for di, dj in _NEIGHBORS:
            nb = (cell[0] + di, cell[1] + dj)
            if not (0 <= nb[0] < nx and 0 <= nb[1] < ny):
                continue
            if occupancy[nb] or nb in closed:
                continue
            gn = gc + float(np.hypot(di * px, dj * py))
            if gn < g.get(nb, np.inf) - 1e-12:
                g[nb] = gn
                parent[nb] = cell
                hn = h(nb)
                heapq.heappush(open_heap, (gn + hn, hn, nb[0] * ny + nb[1], nb))
    raise PathNotFoundError(f"goal {goal} unreachable from {start}")


def path_cost(path: Sequence[Tuple[int, int]], pitch=(1.0, 1.0)) -> float:
    cells = np.asarray(path, dtype=float)
    if len(cells) < 2:
        return 0.0
    d = np.diff(cells, axis=0) * np.asarray(pitch)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def refine_path(
    cells: Sequence[Tuple[int, int]],
    occupancy: np.ndarray,
    grid: PlanningGrid,
    start_xy: Sequence[float],
    goal_xy: Sequence[float],
) -> np.ndarray:
    """Waypoints in NED coordinates: endpoints plus obstacle-adjacent
    nodes, with the endpoints replaced by the exact positions."""
    if len(cells) == 0:
        raise ValueError("empty cell path")
    nx, ny = occupancy.shape

    def adjacent_to_obstacle(cell):
        i, j = cell
        for di, dj in _NEIGHBORS:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and occupancy[a, b]:
                return True
        return False

    keep = [
        grid.cell_center(c)
        for k, c in enumerate(cells)
        if k == 0 or k == len(cells) - 1 or adjacent_to_obstacle(c)
    ]
    keep[0] = np.asarray(start_xy, dtype=float)
    keep[-1] = np.asarray(goal_xy, dtype=float)
    points = [keep[0]]
    for p in keep[1:]:
        if np.linalg.norm(p - points[-1]) > 1e-9:
            points.append(p)
    return np.array(points)


@dataclass
class PathSignals:
    """Timed piecewise-constant speed signals and heading impulses.

    breakpoints: (m+1,) times framing m constant-speed segments;
    vx, vy: (m,) segment speeds; impulses: (time, turn angle) pairs;
    heading0: unwrapped heading of the first segment.
    """

    breakpoints: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    impulses: List[Tuple[float, float]] = field(default_factory=list)
    heading0: float = 0.0
    path_length: float = 0.0


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return float(-((-a + np.pi) % (2.0 * np.pi) - np.pi))


def build_speed_signals(
    waypoints: np.ndarray,
    t0: float,
    te: float,
    psi0: Optional[float] = None,
    psie: Optional[float] = None,
    boundary_turn_offset: float = 0.0,
) -> PathSignals:
    """Timing information for a waypoint polyline.

    A constant along-track speed V = L / (te - t0) assigns each segment
    a duration proportional to its length.  Headings follow the segment
    bearings (unwrapped on the real line); each interior waypoint
    contributes a heading-rate impulse whose weight is the turn angle.
    If psi0/psie are given, alignment impulses are placed just inside
    the horizon (offset by `boundary_turn_offset`) so the accumulated
    heading starts at psi0 and ends exactly at psie.
    """
    w = np.asarray(waypoints, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] != 2:
        raise ValueError("waypoints must be an (m+1, 2) array with m >= 1")
    if not te > t0:
        raise ValueError("te must exceed t0")
    seg = np.diff(w, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths <= 0):
        raise ValueError("consecutive waypoints must be distinct")
    L = float(lengths.sum())
    if L <= 0:
        raise ValueError("zero-length path")
    V = L / (te - t0)
    breakpoints = t0 + np.concatenate([[0.0], np.cumsum(lengths)]) / V
    breakpoints[-1] = te
    vx = V * seg[:, 0] / lengths
    vy = V * seg[:, 1] / lengths

    bearings = np.arctan2(seg[:, 1], seg[:, 0])
    ref = psi0 if psi0 is not None else bearings[0]
    unwrapped = [ref + _wrap_angle(bearings[0] - ref)]
    for b in bearings[1:]:
        unwrapped.append(unwrapped[-1] + _wrap_angle(b - unwrapped[-1]))
    unwrapped = np.array(unwrapped)

    impulses: List[Tuple[float, float]] = []
    if psi0 is not None and abs(unwrapped[0] - psi0) > 1e-12:
        impulses.append((t0 + boundary_turn_offset, unwrapped[0] - psi0))
    for j in range(1, len(vx)):
        turn = unwrapped[j] - unwrapped[j - 1]
        if abs(turn) > 1e-12:
            impulses.append((float(breakpoints[j]), turn))
    if psie is not None and abs(psie - unwrapped[-1]) > 1e-12:
        # exact real-line difference: the guess must end at psie itself
        impulses.append((te - boundary_turn_offset, psie - unwrapped[-1]))
    return PathSignals(
        breakpoints=breakpoints,
        vx=vx,
        vy=vy,
        impulses=impulses,
        heading0=float(unwrapped[0]),
        path_length=L,
    )


def mollifier_phi(t, eps: float):
    """Polynomial bump 15/(16 eps) (1 - (t/eps)^2)^2 on [-eps, eps]."""
    t = np.asarray(t, dtype=float)
    s = t / eps
    inside = np.abs(s) <= 1.0
    val = 15.0 / (16.0 * eps) * (1.0 - s**2) ** 2
    return np.where(inside, val, 0.0)


def mollifier_phi_dot(t, eps: float):
    """Exact derivative of `mollifier_phi` (continuous, odd)."""
    t = np.asarray(t, dtype=float)
    s = t / eps
    inside = np.abs(s) <= 1.0
    val = -15.0 / (4.0 * eps**2) * s * (1.0 - s**2)
    return np.where(inside, val, 0.0)


def mollifier_cdf(t, eps: float):
    """Integral of the mollifier from -inf to t (0 to 1 ramp)."""
    t = np.asarray(t, dtype=float)
    s = np.clip(t / eps, -1.0, 1.0)
    return 0.5 + 15.0 / 16.0 * (s - 2.0 * s**3 / 3.0 + s**5 / 5.0)


def mollifier_cdf2(t, eps: float):
    """Second antiderivative: integral of `mollifier_cdf` from -inf.

    Equals 0 for t <= -eps and t for t >= eps (the kernel has zero
    mean), polynomial in between."""
    t = np.asarray(t, dtype=float)
    u = np.clip(t / eps, -1.0, 1.0)
    inner = eps * (
        0.5 * u
        + 15.0 / 16.0 * (u**2 / 2.0 - u**4 / 6.0 + u**6 / 30.0)
        + 0.5
        - 11.0 / 32.0
    )
    return np.where(t >= eps, t, np.where(t <= -eps, 0.0, inner))


def _step_features(
    breakpoints: np.ndarray, values: np.ndarray, v0: float, ve: float, t0: float, te: float
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Jump locations/heights of a piecewise-constant signal extended
    by odd mirroring about (t0, v0) and (te, ve), plus the baseline
    value left of every jump.

    Mirrored interior jumps keep their sign; the boundary jumps are
    2*(first - v0) and 2*(ve - last)."""
    s_int = breakpoints[1:-1]
    d_int = np.diff(values)
    times = [np.array([t0]), s_int, np.array([te]), 2.0 * t0 - s_int, 2.0 * te - s_int]
    jumps = [
        np.array([2.0 * (values[0] - v0)]),
        d_int,
        np.array([2.0 * (ve - values[-1])]),
        d_int,
        d_int,
    ]
    baseline = 2.0 * v0 - values[-1]
    return np.concatenate(times), np.concatenate(jumps), baseline


def _impulse_features(
    impulses: List[Tuple[float, float]], r0: float, re: float, t0: float, te: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Impulse and baseline-step features of the heading-rate signal
    under the same odd mirroring (mirrored impulses flip sign)."""
    if impulses:
        ti = np.array([t for t, _ in impulses])
        ai = np.array([a for _, a in impulses])
        imp_t = np.concatenate([ti, 2.0 * t0 - ti, 2.0 * te - ti])
        imp_a = np.concatenate([ai, -ai, -ai])
    else:
        imp_t = np.zeros(0)
        imp_a = np.zeros(0)
    step_t = np.array([t0, te])
    step_w = np.array([-2.0 * r0, 2.0 * re])
    return imp_t, imp_a, step_t, step_w, 2.0 * r0


def smoothed_profile(
    signals: PathSignals,
    eps: Sequence[float],
    zdot0_star: Sequence[float],
    zdote_star: Sequence[float],
    z0: Sequence[float],
    times: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mollified guess trajectory (z, zdot, zddot) at arbitrary times.

    All three levels are closed-form sums over the jump/impulse
    features of the mirrored signals: a step of height w at time s
    contributes w*phi to the acceleration, w*Phi to the velocity and
    w*Phi2 to the position (Phi, Phi2 the mollifier antiderivatives);
    heading impulses enter one derivative level higher.  The mirroring
    makes zdot(t0) = zdot0* and zdot(te) = zdote* exact.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (3,) or np.any(eps <= 0):
        raise ValueError("eps must be three positive smoothing widths")
    t0, te = signals.breakpoints[0], signals.breakpoints[-1]
    if 2.0 * eps.max() >= te - t0:
        raise ValueError("mollifier width too large for the horizon")
    tk = np.atleast_1d(np.asarray(times, dtype=float))
    z = np.zeros((tk.size, 3))
    zdot = np.zeros((tk.size, 3))
    zddot = np.zeros((tk.size, 3))

    for i, values in enumerate((signals.vx, signals.vy)):
        s, w, base = _step_features(
            signals.breakpoints, values, zdot0_star[i], zdote_star[i], t0, te
        )
        dt = tk[:, None] - s
        zddot[:, i] = np.sum(w * mollifier_phi(dt, eps[i]), axis=1)
        zdot[:, i] = base + np.sum(w * mollifier_cdf(dt, eps[i]), axis=1)
        z[:, i] = (
            z0[i]
            + base * (tk - t0)
            + np.sum(
                w * (mollifier_cdf2(dt, eps[i]) - mollifier_cdf2(t0 - s, eps[i])),
                axis=1,
            )
        )

    imp_t, imp_a, step_t, step_w, base3 = _impulse_features(
        signals.impulses, zdot0_star[2], zdote_star[2], t0, te
    )
    dti = tk[:, None] - imp_t
    dts = tk[:, None] - step_t
    zddot[:, 2] = np.sum(imp_a * mollifier_phi_dot(dti, eps[2]), axis=1) + np.sum(
        step_w * mollifier_phi(dts, eps[2]), axis=1
    )
    zdot[:, 2] = (
        base3
        + np.sum(imp_a * mollifier_phi(dti, eps[2]), axis=1)
        + np.sum(step_w * mollifier_cdf(dts, eps[2]), axis=1)
    )
    z[:, 2] = (
        z0[2]
        + base3 * (tk - t0)
        + np.sum(
            imp_a * (mollifier_cdf(dti, eps[2]) - mollifier_cdf(t0 - imp_t, eps[2])),
            axis=1,
        )
        + np.sum(
            step_w * (mollifier_cdf2(dts, eps[2]) - mollifier_cdf2(t0 - step_t, eps[2])),
            axis=1,
        )
    )
    return z, zdot, zddot


def smooth_to_zddot(
    signals: PathSignals,
    eps: Sequence[float],
    zdot0_star: Sequence[float],
    zdote_star: Sequence[float],
    grid: SampleGrid,
) -> np.ndarray:
    """Second-derivative samples of the mollified guess at the knots.

    Closed-form convolution: steps contribute jump*phi(t - s), heading
    impulses weight*phi_dot(t - s); mirror copies enforce the boundary
    speeds zdot0*/zdote* exactly.  Returns (N+1, 3).
    """
    z0 = np.zeros(3)
    _, _, zddot = smoothed_profile(
        signals, eps, zdot0_star, zdote_star, z0, grid.times
    )
    return zddot


def fit_zddot_to_profile(
    z_target: np.ndarray,
    zdot_target: np.ndarray,
    z0: np.ndarray,
    zdot0: np.ndarray,
    grid: SampleGrid,
    end_z: Optional[np.ndarray] = None,
    end_zdot: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Least-squares projection of a target trajectory onto the
    piecewise-linear z_ddot ansatz.

    Chooses the (N+1, 3) acceleration samples whose propagated knot
    positions/velocities best match the targets; when `end_z`/
    `end_zdot` are given, a minimal-norm correction through the
    closed-form input map pins the terminal knot exactly.  Point
    sampling of the smoothed acceleration is exact only when the knot
    spacing resolves the mollifier width; this projection stays
    faithful on grids much coarser than eps as well.
    """
    m = grid.n_knots
    basis = propagate(np.zeros((m, 2)), np.eye(m), grid)  # (m, m, 2): response to e_j
    Az = basis[..., 0].T  # knot positions from unit zddot_j, (knots, m)
    Av = basis[..., 1].T
    tk = grid.times - grid.t0
    design = np.vstack([Az, Av])
    zdd = np.zeros((m, 3))
    for i in range(3):
        rhs = np.concatenate(
            [
                z_target[:, i] - z0[i] - zdot0[i] * tk,
                zdot_target[:, i] - zdot0[i],
            ]
        )
        sol, *_ = np.linalg.lstsq(design, rhs, rcond=None)
        zdd[:, i] = sol
    if end_z is not None or end_zdot is not None:
        _, H = build_h_matrix(grid)
        zk, vk = knot_states(z0, zdot0, zdd, grid)
        target_end = np.stack(
            [
                zk[-1] if end_z is None else np.asarray(end_z, dtype=float),
                vk[-1] if end_zdot is None else np.asarray(end_zdot, dtype=float),
            ],
            axis=0,
        )
        residual = target_end - np.stack([zk[-1], vk[-1]], axis=0)  # (2, 3)
        correction = np.linalg.pinv(H) @ residual  # (m, 3)
        zdd = zdd + correction
    return zdd


def assemble_guess(
    x0: VesselState,
    xe: VesselState,
    field_: ObstacleField,
    planning: PlanningGrid,
    grid: SampleGrid,
    eps: Sequence[float] = (0.5, 0.5, 1.6),
    margin: float = 0.0,
    occupancy: Optional[np.ndarray] = None,
    occupancy_time=None,
    via: Optional[Sequence[Sequence[float]]] = None,
) -> np.ndarray:
    """Full pipeline from boundary states to a decision vector.

    The integration constants are set from x0 (z0 = eta0,
    zdot0 = R(psi0) nu0), so the guess starts at the initial state to
    machine precision; the endpoint lands within about one grid cell of
    xe.  Obstacles enter through the occupancy grid evaluated at
    `occupancy_time` (default: grid start time; an array sweeps moving
    shapes over several times).  `via` points route the search through
    intermediate cells, selecting a corridor when several homotopy
    classes exist; each leg remains a minimal-cost grid path.
    """
    if occupancy is None:
        t_occ = grid.t0 if occupancy_time is None else occupancy_time
        occupancy = field_.occupancy_grid(
            planning.bounds, planning.nx, planning.ny, t=t_occ, margin=margin
        )
    start_cell = planning.nearest_free_cell(x0.eta[0], x0.eta[1], occupancy)
    goal_cell = planning.nearest_free_cell(xe.eta[0], xe.eta[1], occupancy)
    anchors = [start_cell]
    for p in via or []:
        anchors.append(planning.nearest_free_cell(p[0], p[1], occupancy))
    anchors.append(goal_cell)
    cells: List[Tuple[int, int]] = []
    for a, b in zip(anchors[:-1], anchors[1:]):
        leg = astar(occupancy, a, b, planning.pitch)
        cells.extend(leg if not cells else leg[1:])
    waypoints = refine_path(cells, occupancy, planning, x0.eta[:2], xe.eta[:2])

    zdot0_star = rotation(x0.eta[2]) @ x0.nu
    if waypoints.shape[0] < 2 or np.hypot(*(waypoints[-1] - waypoints[0])) < 1e-6:
        # degenerate station-keeping case: coast guess
        zddot = np.zeros((grid.n_knots, 3))
        return pack(x0.eta, zdot0_star, zddot)
    zdote_star = rotation(xe.eta[2]) @ xe.nu
    signals = build_speed_signals(
        waypoints,
        grid.t0,
        grid.t_end,
        psi0=float(x0.eta[2]),
        psie=float(xe.eta[2]),
        boundary_turn_offset=float(eps[2]),
    )
    z_prof, zdot_prof, _ = smoothed_profile(
        signals, eps, zdot0_star, zdote_star, x0.eta, grid.times
    )
    zddot = fit_zddot_to_profile(
        z_prof,
        zdot_prof,
        x0.eta,
        zdot0_star,
        grid,
        end_z=xe.eta,
        end_zdot=zdote_star,
    )
    return pack(x0.eta, zdot0_star, zddot)
