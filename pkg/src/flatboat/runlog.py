"""Run logs: CSV serialization, metric recomputation, plots.

A run log is a table of samples (t, x, y, psi, u, v, r, tau_u, tau_v,
tau_r) plus per-run metrics.  Metrics are always recomputed from the
rows, never copied from a solver, so a reloaded CSV reproduces them.
Closed-loop logs append per-iteration columns (solve time, status,
slack, terminal deviation) on the rows that started an iteration.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

STATE_COLUMNS = ["t", "x", "y", "psi", "u", "v", "r", "tau_u", "tau_v", "tau_r"]
ITERATE_COLUMNS = ["solve_time", "status", "slack", "terminal_deviation"]


@dataclass
class RunLog:
    """Sampled run with recomputable metrics."""

    times: np.ndarray
    states: np.ndarray  # (n, 6)
    taus: np.ndarray  # (n, 3)
    metrics: Dict[str, float] = dataclass_field(default_factory=dict)
    iterate_rows: Optional[Dict[int, Dict[str, object]]] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.taus = np.asarray(self.taus, dtype=float)
        if self.states.shape != (self.times.size, 6) or self.taus.shape != (
            self.times.size,
            3,
        ):
            raise ValueError("inconsistent log array shapes")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("log times must be nondecreasing")


def cross_evaluate(
    log: RunLog, q1_diag: Sequence[float]
) -> Tuple[float, float]:
    """Energy and distance measures recomputed from the rows.

    Energy: trapezoidal integral of tau^T Q1 tau.  Distance:
    trapezoidal integral of the NED speed obtained by finite
    differences of the logged positions.
    """
    if log.times.size == 0:
        raise ValueError("empty log")
    if log.times.size == 1:
        return 0.0, 0.0
    q1 = np.asarray(q1_diag, dtype=float)
    energy = float(np.trapezoid(np.sum(q1 * log.taus**2, axis=1), log.times))
    vel = np.gradient(log.states[:, :2], log.times, axis=0)
    distance = float(np.trapezoid(np.hypot(vel[:, 0], vel[:, 1]), log.times))
    return energy, distance


def _format(value: float) -> str:
    return f"{value:.9g}"


def write_csv(log: RunLog, path) -> None:
    """Serialize with 9 significant digits; metrics go in '#' comments."""
    path = Path(path)
    has_iter = log.iterate_rows is not None
    with path.open("w", newline="") as fh:
        for key in sorted(log.metrics):
            fh.write(f"# {key} = {_format(log.metrics[key])}\n")
        writer = csv.writer(fh)
        writer.writerow(STATE_COLUMNS + (ITERATE_COLUMNS if has_iter else []))
        for k in range(log.times.size):
            row = [
                _format(v)
                for v in [log.times[k], *log.states[k], *log.taus[k]]
            ]
            if has_iter:
                extra = log.iterate_rows.get(k)
                if extra is None:
                    row += ["", "", "", ""]
                else:
                    row += [
                        _format(float(extra["solve_time"])),
                        str(extra["status"]),
                        _format(float(extra["slack"])),
                        _format(float(extra["terminal_deviation"])),
                    ]
            writer.writerow(row)


def read_csv(path) -> RunLog:
    path = Path(path)
    metrics: Dict[str, float] = {}
    rows: List[List[str]] = []
    header: Optional[List[str]] = None
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                metrics[key.strip()] = float(value)
                continue
            parsed = next(csv.reader(io.StringIO(line)))
            if header is None:
                header = parsed
            else:
                rows.append(parsed)
    if header is None or header[: len(STATE_COLUMNS)] != STATE_COLUMNS:
        raise ValueError(f"{path}: not a run log (unexpected header)")
    has_iter = len(header) > len(STATE_COLUMNS)
    times = np.array([float(r[0]) for r in rows])
    states = np.array([[float(v) for v in r[1:7]] for r in rows])
    taus = np.array([[float(v) for v in r[7:10]] for r in rows])
    iterate_rows = None
    if has_iter:
        iterate_rows = {}
        for k, r in enumerate(rows):
            if len(r) > 10 and r[10] != "":
                iterate_rows[k] = {
                    "solve_time": float(r[10]),
                    "status": r[11],
                    "slack": float(r[12]),
                    "terminal_deviation": float(r[13]),
                }
    return RunLog(
        times=times, states=states, taus=taus,
        metrics=metrics, iterate_rows=iterate_rows,
    )


def plot_run(
    log: RunLog,
    field,
    path,
    reference: Optional[RunLog] = None,
    guess_xy: Optional[np.ndarray] = None,
    bounds: Optional[Tuple[float, float, float, float]] = None,
    title: str = "",
) -> None:
    """NED path with obstacle outlines plus speed/input time series.

    Written as a standalone vector graphic (format from the suffix,
    e.g. .svg or .pdf); no display needed.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig = plt.figure(figsize=(10, 9))
    ax = fig.add_subplot(2, 1, 1)
    if bounds is None:
        bounds = (
            log.states[:, 0].min() - 2, log.states[:, 0].max() + 2,
            log.states[:, 1].min() - 2, log.states[:, 1].max() + 2,
        )
    xs = np.linspace(bounds[0], bounds[1], 250)
    ys = np.linspace(bounds[2], bounds[3], 250)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    t_ref = log.times[0]
    occ = field.union_value(X, Y, t_ref) <= 1.0
    ax.contourf(Y, X, occ.astype(float), levels=[0.5, 1.5], colors=["0.6"])
    ax.contour(Y, X, field.union_value(X, Y, t_ref), levels=[1.0], colors="k", linewidths=0.6)
    if guess_xy is not None:
        ax.plot(guess_xy[:, 1], guess_xy[:, 0], "g-", lw=1, label="initial guess")
    if reference is not None:
        ax.plot(reference.states[:, 1], reference.states[:, 0], "k--", lw=1, label="reference")
    ax.plot(log.states[:, 1], log.states[:, 0], "b-", lw=1.5, label="run")
    ax.plot(log.states[0, 1], log.states[0, 0], "b^")
    ax.plot(log.states[-1, 1], log.states[-1, 0], "bs")
    ax.set_xlabel("east y (m)")
    ax.set_ylabel("north x (m)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.set_aspect("equal", adjustable="box")

    ax2 = fig.add_subplot(2, 2, 3)
    ax2.plot(log.times, log.states[:, 3], label="u (m/s)")
    ax2.plot(log.times, log.states[:, 4], label="v (m/s)")
    ax2.plot(log.times, log.states[:, 5], label="r (rad/s)")
    ax2.set_xlabel("t (s)")
    ax2.legend(fontsize=8)
    ax2.set_title("body velocities")

    ax3 = fig.add_subplot(2, 2, 4)
    ax3.plot(log.times, log.taus[:, 0], label="tau_u (N)")
    ax3.plot(log.times, log.taus[:, 1], label="tau_v (N)")
    ax3.plot(log.times, log.taus[:, 2], label="tau_r (N m)")
    ax3.set_xlabel("t (s)")
    ax3.legend(fontsize=8)
    ax3.set_title("control inputs")

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
