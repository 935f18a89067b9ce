"""Cubic-in-time reference trajectories through cell centers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import GridWorld


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Piecewise Hermite cubic through knots spaced ``transition_time`` apart.

    ``coeffs[k]`` holds ``(a, b, c, d)`` rows for segment ``k`` in local time
    ``tau = t - t0 - times[k]``, each row an (x, y) pair.  ``t0`` is the
    global time of the first knot.
    """

    robot: int
    replan_index: int
    times: np.ndarray
    points: np.ndarray
    coeffs: np.ndarray
    t0: float = 0.0
    cells: tuple[int, ...] = ()

    @property
    def duration(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0

    @property
    def end_time(self) -> float:
        return self.t0 + self.duration

    @property
    def knots(self) -> list[tuple[float, tuple[float, float]]]:
        return [(self.t0 + float(t), (float(p[0]), float(p[1]))) for t, p in zip(self.times, self.points)]

    @property
    def target(self) -> np.ndarray:
        return self.points[-1]

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return sample(self, t)

    def sample_many(self, ts) -> tuple[np.ndarray, np.ndarray]:
        return sample_many(self, ts)


def _tangents(points: np.ndarray, h: float) -> np.ndarray:
    n = len(points)
    m = np.zeros_like(points)
    if n < 2:
        return m
    m[0] = (points[1] - points[0]) / h
    m[-1] = (points[-1] - points[-2]) / h
    if n > 2:
        m[1:-1] = (points[2:] - points[:-2]) / (2.0 * h)
    return m


def hermite_coeffs(points: np.ndarray, h: float) -> np.ndarray:
    """Catmull-Rom segment coefficients, shape ``(n-1, 4, 2)``."""
    points = np.asarray(points, dtype=float)
    m = _tangents(points, h)
    p0, p1 = points[:-1], points[1:]
    m0, m1 = m[:-1], m[1:]
    c = (3.0 * (p1 - p0) / h - 2.0 * m0 - m1) / h
    d = (2.0 * (p0 - p1) / h + m0 + m1) / (h * h)
    return np.stack([p0, m0, c, d], axis=1)


def from_points(
    points: Sequence[Sequence[float]],
    transition_time: float = 1.0,
    t0: float = 0.0,
    robot: int = 0,
    replan_index: int = 0,
    cells: Iterable[int] = (),
) -> ReferenceTrajectory:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("a trajectory needs at least one knot")
    if transition_time <= 0:
        raise ValueError("transition_time must be positive")
    times = np.arange(len(pts), dtype=float) * transition_time
    coeffs = hermite_coeffs(pts, transition_time) if len(pts) > 1 else np.zeros((0, 4, 2))
    return ReferenceTrajectory(robot, replan_index, times, pts, coeffs, float(t0), tuple(cells))


def interpolate(
    chain,
    grid: GridWorld,
    transition_time: float = 1.0,
    start_point: Sequence[float] | None = None,
    t0: float = 0.0,
    robot: int | None = None,
    replan_index: int = 0,
) -> ReferenceTrajectory:
    """Reference through the centers of ``chain`` cells.

    ``chain`` is a Chain or a plain cell sequence.  With ``start_point`` the
    first knot is that point instead of the first cell center, which is how
    replans start from where the robot actually is.  A one-cell chain gives
    a constant hold with zero duration.
    """
    cells = tuple(int(c) for c in getattr(chain, "cells", chain))
    if not cells:
        raise ValueError("empty chain")
    if robot is None:
        robot = int(getattr(chain, "robot", 0))
    pts = np.array([grid.cell_center(c) for c in cells], dtype=float)
    if start_point is not None:
        pts[0] = np.asarray(start_point, dtype=float)
    return from_points(pts, transition_time, t0, robot, replan_index, cells)


def sample(traj: ReferenceTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and velocity at global time ``t``; clamped outside the knot span."""
    local = float(t) - traj.t0
    n = len(traj.times)
    if n == 1 or local >= traj.duration:
        return traj.points[-1].copy(), np.zeros(2)
    if local < 0.0:
        return traj.points[0].copy(), np.zeros(2)
    h = traj.times[1] - traj.times[0]
    k = min(int(local // h), n - 2)
    tau = local - traj.times[k]
    a, b, c, d = traj.coeffs[k]
    pos = a + tau * (b + tau * (c + tau * d))
    vel = b + tau * (2.0 * c + tau * 3.0 * d)
    return pos, vel


def sample_many(traj: ReferenceTrajectory, ts) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``sample`` over an array of global times."""
    ts = np.asarray(ts, dtype=float)
    local = ts - traj.t0
    pos = np.empty(ts.shape + (2,))
    vel = np.zeros(ts.shape + (2,))
    n = len(traj.times)
    if n == 1:
        pos[...] = traj.points[-1]
        return pos, vel
    h = traj.times[1] - traj.times[0]
    k = np.clip((local // h).astype(int), 0, n - 2)
    tau = local - traj.times[k]
    a, b, c, d = (traj.coeffs[k, i] for i in range(4))
    tau2 = tau[..., None]
    pos[...] = a + tau2 * (b + tau2 * (c + tau2 * d))
    vel[...] = b + tau2 * (2.0 * c + tau2 * 3.0 * d)
    after = local >= traj.duration
    before = local < 0.0
    pos[after] = traj.points[-1]
    vel[after] = 0.0
    pos[before] = traj.points[0]
    vel[before] = 0.0
    return pos, vel


def write_csv(trajs: Sequence[ReferenceTrajectory], path, step: float = 0.1) -> None:
    """Sampled references as rows ``robot, replan, t, x, y, vx, vy``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["robot", "replan", "t", "x", "y", "vx", "vy"])
        for tr in trajs:
            count = int(round(tr.duration / step)) + 1
            ts = tr.t0 + np.arange(count) * step
            pos, vel = sample_many(tr, ts)
            for t, p, v in zip(ts, pos, vel):
                w.writerow([tr.robot, tr.replan_index, f"{t:.6f}", f"{p[0]:.9g}", f"{p[1]:.9g}", f"{v[0]:.9g}", f"{v[1]:.9g}"])
