"""Contractive MPC tracking for unicycles and the interleaved plan/track loop."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from . import _backend
from ._pykernels import (
    N_PARAMS, P_ALPHA, P_DT, P_E0, P_NC, P_P, P_Q1, P_Q2, P_RHO, P_RHOBOX,
    P_XMAX, P_XMIN, P_YMAX, P_YMIN,
)
from .config import MpcConfig
from .errors import InfeasibleMpcError
from .grid import GridWorld, ScenarioSpec, expand_cells
from .otcore import cost as step_cost
from .otcore import solve
from .plans import extract_chains
from .trajectory import ReferenceTrajectory, from_points, sample_many

BIG = 1e12
CONTRACTION_SLACK = 1e-9


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class RobotState:
    px: float
    py: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


@dataclass(frozen=True)
class TrackingError:
    e: tuple[float, float]
    p_norm: float

    @classmethod
    def of(cls, position, reference, P) -> "TrackingError":
        e = np.asarray(position, dtype=float) - np.asarray(reference, dtype=float)
        return cls((float(e[0]), float(e[1])), p_norm(e, P))


def p_norm(e, P) -> float:
    e = np.asarray(e, dtype=float)
    return math.sqrt(max(float(e @ np.asarray(P) @ e), 0.0))


def _unicycle(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])


def step_dynamics(state: RobotState, u: ControlInput, dt: float) -> RobotState:
    """Classical fourth-order Runge-Kutta step of the unicycle model."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.as_array()
    uu = u.as_array()
    k1 = _unicycle(x, uu)
    k2 = _unicycle(x + 0.5 * dt * k1, uu)
    k3 = _unicycle(x + 0.5 * dt * k2, uu)
    k4 = _unicycle(x + dt * k3, uu)
    x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return RobotState(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class MpcSolution:
    controls: np.ndarray  # (H, 2), first ``control_steps`` rows are applied
    predicted: np.ndarray  # (H+1, 3)
    cost: float
    contraction_ok: bool
    p_start: float
    p_end: float
    iterations: int
    rounds: int
    restored: bool = False

    def applied(self, cfg: MpcConfig) -> np.ndarray:
        return self.controls[: cfg.control_steps]


def pack_params(cfg: MpcConfig, e0norm: float, rho: float, x_bounds=None, rho_box=None) -> np.ndarray:
    """Parameter vector in the layout the kernels expect."""
    prm = np.zeros(N_PARAMS)
    prm[P_DT] = cfg.dt
    prm[P_NC] = cfg.control_steps
    prm[P_ALPHA] = cfg.alpha
    prm[P_E0] = e0norm
    prm[P_RHO] = rho
    prm[P_RHOBOX] = cfg.box_penalty if rho_box is None else rho_box
    prm[P_Q1:P_Q1 + 4] = np.asarray(cfg.Q1, dtype=float).ravel()
    prm[P_Q2:P_Q2 + 4] = np.asarray(cfg.Q2, dtype=float).ravel()
    prm[P_P:P_P + 4] = np.asarray(cfg.P, dtype=float).ravel()
    xb = x_bounds if x_bounds is not None else cfg.x_bounds
    if xb is None:
        xb = ((-BIG, BIG), (-BIG, BIG))
    (prm[P_XMIN], prm[P_XMAX]), (prm[P_YMIN], prm[P_YMAX]) = xb
    return prm


def reference_window(traj: ReferenceTrajectory, t: float, cfg: MpcConfig):
    ts = t + cfg.dt * np.arange(cfg.horizon_steps + 1)
    return sample_many(traj, ts)


def feedforward(x0: np.ndarray, ref: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    """Point-chasing initial guess: turn toward the next reference sample and drive."""
    H = cfg.horizon_steps
    dt = cfg.dt
    (vlo, vhi), (wlo, whi) = cfg.u_bounds
    u = np.zeros((H, 2))
    px, py, th = (float(v) for v in x0)
    for k in range(H):
        dx, dy = ref[k + 1, 0] - px, ref[k + 1, 1] - py
        dist = math.hypot(dx, dy)
        if dist < 1e-12:
            v = w = 0.0
        else:
            err = wrap_angle(math.atan2(dy, dx) - th)
            w = min(max(err / dt, wlo), whi)
            v = min(max(dist / dt * math.cos(err), vlo), vhi)
        u[k] = v, w
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        px += dt / 6.0 * v * (math.cos(th) + 4.0 * math.cos(t2) + math.cos(t4))
        py += dt / 6.0 * v * (math.sin(th) + 4.0 * math.sin(t2) + math.sin(t4))
        th = t4
    return u


def _terminal_jacobian(x0: np.ndarray, u: np.ndarray, dt: float, nc: int) -> np.ndarray:
    """d(position after ``nc`` steps)/du, shape (2, 2H)."""
    H = u.shape[0]
    v, w = u[:nc, 0], u[:nc, 1]
    th = x0[2] + dt * np.concatenate(([0.0], np.cumsum(w)[:-1]))
    t2 = th + 0.5 * dt * w
    t4 = th + dt * w
    h6 = dt / 6.0
    C = np.cos(th) + 4.0 * np.cos(t2) + np.cos(t4)
    S = np.sin(th) + 4.0 * np.sin(t2) + np.sin(t4)
    own_x = h6 * v * (-2.0 * dt * np.sin(t2) - dt * np.sin(t4))
    own_y = h6 * v * (2.0 * dt * np.cos(t2) + dt * np.cos(t4))
    # a heading change at step j rotates every later displacement
    later_x = np.concatenate((np.cumsum((-h6 * v * S)[::-1])[::-1][1:], [0.0]))
    later_y = np.concatenate((np.cumsum((h6 * v * C)[::-1])[::-1][1:], [0.0]))
    J = np.zeros((2, 2 * H))
    J[0, 0:2 * nc:2] = h6 * C
    J[1, 0:2 * nc:2] = h6 * S
    J[0, 1:2 * nc:2] = own_x + dt * later_x
    J[1, 1:2 * nc:2] = own_y + dt * later_y
    return J


def _restore(x0, u, ref, cfg: MpcConfig, p0: float, kern) -> np.ndarray:
    """Gauss-Newton pull of the control-horizon error into the contraction ball."""
    nc = cfg.control_steps
    lo = np.array([b[0] for b in cfg.u_bounds])
    hi = np.array([b[1] for b in cfg.u_bounds])
    P = np.asarray(cfg.P)
    bound = cfg.alpha * p0
    u = u.copy()
    for _ in range(cfg.restore_iters):
        pred = kern.unicycle_rollout(x0, u, cfg.dt)
        e = pred[nc, :2] - ref[nc]
        pn = p_norm(e, P)
        if pn <= bound + 0.5 * CONTRACTION_SLACK:
            break
        goal = e * min(1.0, 0.95 * bound / pn) if pn > 0 else e
        r = e - goal
        J = _terminal_jacobian(x0, u, cfg.dt, nc)
        du = -(J.T @ np.linalg.solve(J @ J.T + 1e-12 * np.eye(2), r)).reshape(-1, 2)
        step = 1.0
        base = float(r @ r)
        improved = False
        while step > 1e-6:
            cand = np.clip(u + step * du, lo, hi)
            en = kern.unicycle_rollout(x0, cand, cfg.dt)[nc, :2] - ref[nc]
            rn = en - goal
            if float(rn @ rn) < base:
                u = cand
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return u


def solve_mpc(
    state: RobotState,
    traj: ReferenceTrajectory,
    t: float,
    cfg: MpcConfig,
    warm: np.ndarray | None = None,
    strict: bool = False,
    x_bounds=None,
    kernel: str | None = None,
) -> MpcSolution:
    """One receding-horizon solve over ``[t, t + T]``.

    The contraction inequality at ``t + Tc`` is handled by an exterior
    penalty escalated tenfold per round; if it still fails, a Gauss-Newton
    restoration step targets it directly.  ``contraction_ok`` records the
    outcome; with ``strict`` a failure raises InfeasibleMpcError carrying
    the best-effort solution.
    """
    kern = _backend.get(kernel)
    H, nc = cfg.horizon_steps, cfg.control_steps
    x0 = state.as_array()
    ref, _ = reference_window(traj, t, cfg)
    P = np.asarray(cfg.P)
    p0 = p_norm(x0[:2] - ref[0], P)
    lo = np.array([b[0] for b in cfg.u_bounds])
    hi = np.array([b[1] for b in cfg.u_bounds])
    rho = cfg.contraction_penalty

    candidates = [feedforward(x0, ref, cfg), np.zeros((H, 2))]
    if warm is not None:
        warm = np.asarray(warm, dtype=float).reshape(-1, 2)
        shifted = np.vstack([warm[nc:], np.repeat(warm[-1:], min(nc, H), axis=0)])[:H]
        if shifted.shape == (H, 2):
            candidates.insert(0, shifted)
    prm = pack_params(cfg, p0, rho, x_bounds)
    scored = []
    for c in candidates:
        c = np.clip(c, lo, hi)
        scored.append((kern.mpc_cost_grad(x0, c, ref, prm, False)[0], len(scored), c))
    u = min(scored, key=lambda s: (s[0], s[1]))[2]

    iters = 0
    rounds = 0
    bound = cfg.alpha * p0 + CONTRACTION_SLACK
    p1 = math.inf
    for rounds in range(1, max(cfg.penalty_rounds, 1) + 1):
        prm = pack_params(cfg, p0, rho, x_bounds)
        u, _, it = kern.mpc_optimize(x0, u, ref, prm, lo, hi, cfg.max_iters, cfg.tol)
        u = np.asarray(u)
        iters += int(it)
        p1 = p_norm(kern.unicycle_rollout(x0, u, cfg.dt)[nc, :2] - ref[nc], P)
        if p1 <= bound:
            break
        rho *= 10.0
    restored = False
    if p1 > bound:
        u = _restore(x0, u, ref, cfg, p0, kern)
        restored = True
    pred = np.asarray(kern.unicycle_rollout(x0, u, cfg.dt))
    p1 = p_norm(pred[nc, :2] - ref[nc], P)
    J = kern.mpc_cost_grad(x0, u, ref, pack_params(cfg, p0, 0.0, x_bounds, 0.0), False)[0]
    sol = MpcSolution(u, pred, float(J), p1 <= bound, p0, p1, iters, rounds, restored)
    if strict and not sol.contraction_ok:
        raise InfeasibleMpcError(
            f"contraction not met at t={t:.3f}: {p1:.3g} > {cfg.alpha}*{p0:.3g}", sol
        )
    return sol


# ---------------------------------------------------------------------------
# simulation loop


@dataclass(frozen=True)
class ObstacleEvent:
    time: float
    remove: tuple[int, ...] = ()
    add: tuple[int, ...] = ()

    def to_dict(self, grid: GridWorld | None = None) -> dict[str, Any]:
        if grid is None:
            return {"time": self.time, "remove": list(self.remove), "add": list(self.add)}
        return {
            "time": self.time,
            "remove": [list(grid.rc(c)) for c in self.remove],
            "add": [list(grid.rc(c)) for c in self.add],
        }


def parse_events(data: Any, grid: GridWorld) -> list[ObstacleEvent]:
    """Events from JSON: a list (or ``{"events": [...]}``) of time/remove/add records."""
    if isinstance(data, dict):
        data = data.get("events", [])
    out = []
    for item in data:
        out.append(
            ObstacleEvent(
                float(item["time"]),
                tuple(expand_cells(item.get("remove", []), grid.rows, grid.cols)),
                tuple(expand_cells(item.get("add", []), grid.rows, grid.cols)),
            )
        )
    return sorted(out, key=lambda e: e.time)


def load_events(path, grid: GridWorld) -> list[ObstacleEvent]:
    with open(path) as fh:
        return parse_events(json.load(fh), grid)


@dataclass(frozen=True)
class ReplanEvent:
    time: float
    reason: str
    replan_index: int
    changed: tuple[int, ...] = ()
    total_cost: Any = 0
    practically_feasible: bool = True


@dataclass(frozen=True)
class EpochRecord:
    robot: int
    epoch: int
    time: float
    p_start: float
    p_end: float
    contraction_ok: bool
    cost: float
    replan_index: int


LOG_COLUMNS = ("t", "robot", "px", "py", "theta", "v", "omega", "ref_x", "ref_y", "ex", "ey", "p_norm", "replan")


@dataclass
class SimulationLog:
    """Everything recorded by :func:`run_mpc_ot`.

    ``rows`` holds one tuple per robot per dt in ``LOG_COLUMNS`` order; the
    control in a row is the one applied over the step ending at that time.
    """

    dt: float
    grid: GridWorld
    targets: list[int | None]
    rows: list[tuple] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    events: list[ReplanEvent] = field(default_factory=list)
    obstacle_events: list[tuple[float, ObstacleEvent, tuple[int, ...]]] = field(default_factory=list)
    references: dict[int, list[ReferenceTrajectory]] = field(default_factory=dict)
    final_states: list[RobotState] = field(default_factory=list)
    finished: bool = False
    end_time: float = 0.0
    plan_time: float = 0.0
    wall_time: float = 0.0

    @property
    def violations(self) -> list[EpochRecord]:
        return [e for e in self.epochs if not e.contraction_ok]

    @property
    def replan_count(self) -> int:
        return sum(1 for e in self.events if e.reason != "initial")

    def table(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(LOG_COLUMNS))

    def robot_table(self, robot: int) -> np.ndarray:
        tab = self.table()
        return tab[tab[:, 1] == robot]

    def final_errors(self) -> np.ndarray:
        """Distance of each robot to its target center, in cell widths (nan if unassigned)."""
        out = []
        for st, tgt in zip(self.final_states, self.targets):
            if tgt is None:
                out.append(math.nan)
            else:
                c = self.grid.cell_center(tgt)
                out.append(math.hypot(st.px - c[0], st.py - c[1]) / self.grid.cell_size)
        return np.array(out)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([f"{row[0]:.6f}", row[1]] + [f"{x:.9g}" for x in row[2:12]] + [row[12]])

    def write_epochs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["robot", "epoch", "t", "p_start", "p_end", "contraction_ok", "cost", "replan"])
            for e in self.epochs:
                w.writerow([e.robot, e.epoch, f"{e.time:.6f}", f"{e.p_start:.9g}", f"{e.p_end:.9g}",
                            int(e.contraction_ok), f"{e.cost:.9g}", e.replan_index])

    def events_record(self) -> dict[str, Any]:
        return {
            "replans": [
                {
                    "time": e.time,
                    "reason": e.reason,
                    "replan_index": e.replan_index,
                    "changed_robots": list(e.changed),
                    "total_cost": e.total_cost,
                    "practically_feasible": e.practically_feasible,
                }
                for e in self.events
            ],
            "obstacle_updates": [
                {**ev.to_dict(self.grid), "applied_at": t, "ignored": [list(self.grid.rc(c)) for c in ign]}
                for t, ev, ign in self.obstacle_events
            ],
            "contraction_violations": [
                {"robot": e.robot, "epoch": e.epoch, "time": e.time, "p_start": e.p_start, "p_end": e.p_end}
                for e in self.violations
            ],
        }

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.events_record(), fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


class _Planner:
    """Replanning state of the loop: current chains, references and obstacles."""

    def __init__(self, scenario: ScenarioSpec, backend: str):
        self.scenario = scenario
        self.params = scenario.cost_params
        self.cfg = scenario.mpc_params
        self.backend = backend
        self.obstacles = set(scenario.grid.obstacles)
        self.grid = scenario.grid
        N = scenario.N
        self.chains: list[tuple[int, ...] | None] = [None] * N
        self.targets: list[int | None] = [None] * N
        self.trajs: list[ReferenceTrajectory | None] = [None] * N
        self.r = 0

    def current_cells(self, positions: np.ndarray) -> list[int]:
        """Cell each robot is treated as occupying when replanning.

        A robot near its own chain is snapped to the closest chain cell, so
        the small lateral excursions of tracking do not look like
        deviations; otherwise the cell containing it.  Clashes with another
        robot, target or obstacle fall back to the nearest free cell.
        """
        g = self.grid
        h = g.cell_size
        claimed: set[int] = set()
        foreign_targets = set(self.scenario.targets)
        out = []
        for n, pos in enumerate(positions):
            cell = None
            chain = self.chains[n]
            if chain:
                centers = np.array([g.cell_center(c) for c in chain])
                d = np.hypot(centers[:, 0] - pos[0], centers[:, 1] - pos[1])
                for k in np.argsort(d, kind="stable"):
                    c = chain[int(k)]
                    if d[k] <= h and c not in self.obstacles and c not in claimed:
                        cell = c
                        break
            if cell is None:
                try:
                    cell = g.locate(pos)
                except Exception:
                    cell = None
                own = self.targets[n]
                if (
                    cell is None
                    or cell in self.obstacles
                    or cell in claimed
                    or (cell in foreign_targets and cell != own)
                ):
                    cell = self._nearest_open(pos, claimed | (foreign_targets - {own}))
            claimed.add(cell)
            out.append(cell)
        return out

    def _nearest_open(self, pos, blocked: set[int]) -> int:
        g = self.grid
        best, best_d = None, math.inf
        for c in range(g.K):
            if c in self.obstacles or c in blocked:
                continue
            x, y = g.cell_center(c)
            d = (x - pos[0]) ** 2 + (y - pos[1]) ** 2
            if d < best_d:
                best, best_d = c, d
        if best is None:
            raise RuntimeError("no free cell left for a robot")
        return best

    def replan(self, t: float, positions: np.ndarray, reason: str, force_new: bool = False):
        """Re-solve from the current cells; returns a ReplanEvent or None if the plan stands."""
        sc = self.scenario
        cur = self.current_cells(positions)
        parked = [n for n in range(sc.N) if self.targets[n] is not None and cur[n] == self.targets[n]]
        parked_cells = {cur[n] for n in parked}
        active = [n for n in range(sc.N) if n not in parked]
        free_targets = [c for c in sc.targets if c not in parked_cells]
        grid = self.grid.with_obstacles(self.obstacles | parked_cells)
        sub = sc.replace(
            grid=grid,
            robots=tuple(cur[n] for n in active),
            targets=tuple(free_targets),
        )
        plan = solve(sub, backend=self.backend)
        system = extract_chains(plan, sub)

        if not force_new and self.r > 0:
            suffix_cost = 0
            valid = True
            for n in active:
                chain = self.chains[n]
                if chain is None:
                    continue
                if cur[n] not in chain:
                    valid = False
                    break
                tail = chain[chain.index(cur[n]):]
                if any(c in grid.obstacles for c in tail[1:]) or tail[-1] not in free_targets:
                    valid = False
                    break
                suffix_cost += sum(step_cost(self.params, grid, a, b) for a, b in zip(tail[:-1], tail[1:]))
            routed = sum(1 for n in active if self.chains[n] is not None)
            if valid and routed == len(system.chains) and suffix_cost == plan.total_cost:
                return None

        self.r += 1
        new_chain = {active[ch.robot]: ch for ch in system.chains}
        changed = []
        for n in range(sc.N):
            if n in parked:
                continue
            ch = new_chain.get(n)
            old = self.chains[n]
            old_tail = old[old.index(cur[n]):] if old is not None and cur[n] in old else None
            if ch is None:
                self.chains[n] = None
                self.targets[n] = None
                if old is not None or self.trajs[n] is None:
                    self.trajs[n] = from_points([positions[n]], robot=n, replan_index=self.r, t0=t)
                    changed.append(n)
                continue
            self.targets[n] = free_targets[ch.target]
            if old_tail == ch.cells and self.trajs[n] is not None:
                self.chains[n] = ch.cells
                continue
            self.chains[n] = ch.cells
            self.trajs[n] = self._reference(n, ch.cells, positions[n], t)
            changed.append(n)
        return ReplanEvent(t, reason, self.r, tuple(changed), plan.total_cost, system.practically_feasible)

    def _reference(self, n: int, cells, position, t: float) -> ReferenceTrajectory:
        g = self.grid
        pts = [g.cell_center(c) for c in cells]
        if self.r > 1 or t > 0:
            # start from where the robot is
            if math.hypot(position[0] - pts[0][0], position[1] - pts[0][1]) > 1e-9:
                pts = [tuple(position)] + pts
        return from_points(pts, self.cfg.transition_time, t, n, self.r, cells)


def run_mpc_ot(
    scenario: ScenarioSpec,
    events: Iterable[ObstacleEvent] = (),
    backend: str = "flow",
    kernel: str | None = None,
    max_time: float | None = None,
) -> SimulationLog:
    """Plan, track for one control horizon, replan, and repeat.

    Each epoch every robot solves its own MPC problem against its current
    reference and applies the first ``Tc`` seconds of controls.  At epoch
    boundaries the transport problem is re-solved from the robots' current
    cells (robots sitting on their targets are frozen in place); the old
    references are kept whenever they remain optimal.  Obstacle events are
    applied at the first boundary at or after their time and always trigger
    a replan.  The run stops once every assigned robot has finished its
    reference within ``arrival_tolerance`` cell widths of its target, or at
    ``max_time``.
    """
    wall0 = time.perf_counter()
    cfg = scenario.mpc_params
    grid = scenario.grid
    kern = _backend.get(kernel)
    dt, nc = cfg.dt, cfg.control_steps
    max_time = cfg.max_time if max_time is None else max_time
    x_bounds = cfg.x_bounds or grid.extent
    tol = cfg.arrival_tolerance * grid.cell_size
    P = np.asarray(cfg.P)
    pending = sorted(events, key=lambda e: e.time)

    planner = _Planner(scenario, backend)
    positions = np.array([grid.cell_center(c) for c in scenario.robots], dtype=float).reshape(-1, 2)
    t_plan = time.perf_counter()
    first = planner.replan(0.0, positions, "initial", force_new=True)
    plan_time = time.perf_counter() - t_plan
    log = SimulationLog(dt, grid, list(planner.targets))
    log.events.append(first)

    states = []
    for n in range(scenario.N):
        chain = planner.chains[n]
        th = 0.0
        if chain is not None and len(chain) > 1:
            a, b = grid.cell_center(chain[0]), grid.cell_center(chain[1])
            th = math.atan2(b[1] - a[1], b[0] - a[0])
        states.append(np.array([positions[n, 0], positions[n, 1], th]))
    for n in range(scenario.N):
        log.references[n] = [planner.trajs[n]]
        ref = planner.trajs[n].sample(0.0)[0]
        e = states[n][:2] - ref
        log.rows.append((0.0, n, *states[n], 0.0, 0.0, ref[0], ref[1], e[0], e[1], p_norm(e, P), planner.r))

    warm: list[np.ndarray | None] = [None] * scenario.N
    epoch = 0
    t = 0.0
    while True:
        forced = False
        while pending and pending[0].time <= t + 1e-9:
            ev = pending.pop(0)
            occupied = set(planner.current_cells(np.array([s[:2] for s in states]))) | set(scenario.targets)
            ignored = tuple(c for c in ev.add if c in occupied)
            planner.obstacles -= set(ev.remove)
            planner.obstacles |= set(ev.add) - set(ignored)
            log.obstacle_events.append((t, ev, ignored))
            forced = True
        if epoch > 0 and (forced or epoch % cfg.replan_every == 0):
            t_plan = time.perf_counter()
            pos = np.array([s[:2] for s in states])
            rec = planner.replan(t, pos, "obstacle-update" if forced else "periodic")
            plan_time += time.perf_counter() - t_plan
            if forced and rec is None:
                rec = ReplanEvent(t, "obstacle-update", planner.r, ())
            if rec is not None:
                log.events.append(rec)
                for n in rec.changed:
                    log.references[n].append(planner.trajs[n])
                    warm[n] = None
                log.targets = list(planner.targets)

        done = True
        for n in range(scenario.N):
            tgt = planner.targets[n]
            if tgt is None:
                continue
            c = grid.cell_center(tgt)
            tr = planner.trajs[n]
            if t < tr.end_time - 1e-9 or math.hypot(states[n][0] - c[0], states[n][1] - c[1]) > tol:
                done = False
                break
        if done or t >= max_time - 1e-9:
            log.finished = done
            break

        for n in range(scenario.N):
            tr = planner.trajs[n]
            sol = solve_mpc(RobotState(*states[n]), tr, t, cfg, warm=warm[n], x_bounds=x_bounds, kernel=kernel)
            warm[n] = sol.controls
            u = sol.controls[:nc]
            traj_states = np.asarray(kern.unicycle_rollout(states[n], u, dt))
            ts = t + dt * np.arange(1, nc + 1)
            refs, _ = sample_many(tr, ts)
            for k in range(nc):
                x = traj_states[k + 1]
                e = x[:2] - refs[k]
                log.rows.append(
                    (float(ts[k]), n, x[0], x[1], wrap_angle(x[2]), u[k, 0], u[k, 1],
                     refs[k, 0], refs[k, 1], e[0], e[1], p_norm(e, P), tr.replan_index)
                )
            p_end = p_norm(traj_states[nc, :2] - refs[-1], P)
            log.epochs.append(
                EpochRecord(n, epoch, t, sol.p_start, p_end,
                            p_end <= cfg.alpha * sol.p_start + CONTRACTION_SLACK, sol.cost, tr.replan_index)
            )
            x = traj_states[nc]
            states[n] = np.array([x[0], x[1], wrap_angle(x[2])])
        epoch += 1
        t = epoch * cfg.Tc

    log.end_time = t
    log.final_states = [RobotState(*s) for s in states]
    log.plan_time = plan_time
    log.wall_time = time.perf_counter() - wall0
    return log
