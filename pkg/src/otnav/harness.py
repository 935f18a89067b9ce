"""Scenario generation, exhaustive oracle, SVG rendering, metrics and timing."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import _backend
from .config import CostParams, MpcConfig
from .errors import ImbalanceError, InfeasibleError, TooLargeError
from .grid import GridWorld, ScenarioSpec
from .otcore import BALANCED, UNBALANCED, TransportPlan, build_marginals, cost_matrix, solve, step_neighbors
from .plans import PathSystem
from .trajectory import sample_many


def _largest_component(grid: GridWorld, params: CostParams) -> list[int]:
    seen = np.zeros(grid.K, dtype=bool)
    best: list[int] = []
    for start in grid.free_cells:
        start = int(start)
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for v in step_neighbors(params, grid, u):
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    stack.append(v)
        if len(comp) > len(best):
            best = comp
    return sorted(best)


def random_scenario(
    rows: int,
    cols: int,
    n_robots: int,
    n_targets: int | None = None,
    obstacle_count: int = 0,
    max_obstacle_size: int = 3,
    seed: int = 0,
    cell_size: float = 1.0,
    clearance: int = 0,
    spacing: int = 1,
    cost_params: CostParams | None = None,
    mpc_params: MpcConfig | None = None,
) -> ScenarioSpec:
    """Seeded scenario with rectangular obstacles.

    Robots and targets are drawn from the largest connected free region.
    ``clearance`` keeps them that many cells (Chebyshev) away from any
    obstacle and ``spacing`` is the minimum Chebyshev gap between any two
    of them.
    """
    n_targets = n_robots if n_targets is None else n_targets
    cost_params = cost_params or CostParams()
    rng = np.random.default_rng(seed)
    obstacles: set[int] = set()
    for _ in range(obstacle_count):
        h = int(rng.integers(1, max_obstacle_size + 1))
        w = int(rng.integers(1, max_obstacle_size + 1))
        r0 = int(rng.integers(0, max(rows - h, 0) + 1))
        c0 = int(rng.integers(0, max(cols - w, 0) + 1))
        for r in range(r0, min(r0 + h, rows)):
            for c in range(c0, min(c0 + w, cols)):
                obstacles.add(r * cols + c)
    grid = GridWorld(rows, cols, cell_size, frozenset(obstacles))
    pool = _largest_component(grid, cost_params)
    if clearance > 0 and obstacles:
        obs = np.zeros((rows, cols), dtype=bool)
        for k in obstacles:
            obs[k // cols, k % cols] = True
        keep = []
        for k in pool:
            r, c = divmod(k, cols)
            win = obs[max(r - clearance, 0):r + clearance + 1, max(c - clearance, 0):c + clearance + 1]
            if not win.any():
                keep.append(k)
        pool = keep
    order = [pool[i] for i in rng.permutation(len(pool))]
    chosen: list[int] = []
    need = n_robots + n_targets
    for k in order:
        if len(chosen) == need:
            break
        r, c = divmod(k, cols)
        if all(max(abs(r - q // cols), abs(c - q % cols)) >= spacing for q in chosen):
            chosen.append(k)
    if len(chosen) < need:
        raise ValueError(f"could only place {len(chosen)} of {need} robots and targets")
    return ScenarioSpec(
        grid,
        tuple(chosen[:n_robots]),
        tuple(chosen[n_robots:]),
        cost_params,
        mpc_params or MpcConfig(),
        seed,
    )


@dataclass(frozen=True)
class OracleResult:
    optimal_cost: Any
    optimal_plans: tuple[TransportPlan, ...]
    explored: int
    mode: str

    def move_sets(self) -> list[tuple[tuple[int, int], ...]]:
        return [tuple((i, j) for i, j, _ in p.moves) for p in self.optimal_plans]


def brute_force_oracle(
    scenario: ScenarioSpec,
    unbalanced: bool | None = None,
    params: CostParams | None = None,
    max_free: int = 9,
) -> OracleResult:
    """Enumerate every 0/1 plan of the right mass and keep the cheapest.

    Rows are the cells with unit source mass, columns the cells with unit
    target mass; a plan is a partial bijection between them using only
    finite-cost pairs of the dense cost view.  Branches whose partial cost
    already exceeds the best complete cost are cut, equal ones are kept,
    so every optimum is listed.
    """
    grid = scenario.grid
    params = params or scenario.cost_params
    n_free = int(grid.free_mask.sum())
    if n_free > max_free:
        raise TooLargeError(f"{n_free} free cells exceed the enumeration bound {max_free}")
    marg = build_marginals(scenario)
    if unbalanced is None:
        unbalanced = scenario.N != scenario.M
    rows = [int(k) for k in np.flatnonzero(marg.mu)]
    cols = [int(k) for k in np.flatnonzero(marg.nu)]
    m = min(len(rows), len(cols))
    if not unbalanced and len(rows) != len(cols):
        raise ImbalanceError("balanced enumeration needs equal marginal sums")
    C = [
        [int(c) if isinstance(c, float) and c.is_integer() else c for c in row]
        for row in cost_matrix(params, grid, scenario.robots, scenario.targets).tolist()
    ]
    options = []
    for i in rows:
        opts = [(C[i][j], j) for j in cols if C[i][j] != math.inf]
        opts.sort()
        options.append(opts)
    skips_allowed = len(rows) - m

    best = [math.inf]
    found: list[tuple[tuple[int, int], ...]] = []
    explored = [0]
    used: set[int] = set()
    current: list[tuple[int, int]] = []

    def dfs(idx: int, partial, skips: int):
        explored[0] += 1
        if partial > best[0]:
            return
        if idx == len(rows):
            if partial < best[0]:
                best[0] = partial
                found.clear()
            found.append(tuple(current))
            return
        i = rows[idx]
        for c, j in options[idx]:
            if partial + c > best[0]:
                break
            if j in used:
                continue
            used.add(j)
            current.append((i, j))
            dfs(idx + 1, partial + c, skips)
            current.pop()
            used.discard(j)
        if skips > 0:
            dfs(idx + 1, partial, skips - 1)

    dfs(0, 0, skips_allowed)
    mode = UNBALANCED if unbalanced else BALANCED
    plans = []
    for assignment in found:
        moves = tuple(sorted((i, j, 1) for i, j in assignment if i != j))
        fixed = tuple(sorted(i for i, j in assignment if i == j))
        plans.append(
            TransportPlan(grid, params, mode, moves, fixed, best[0], len(assignment), backend="oracle")
        )
    if not plans:
        raise InfeasibleError("no finite-cost plan exists")
    plans.sort(key=lambda p: p.moves)
    return OracleResult(best[0], tuple(plans), explored[0], mode)


# ---------------------------------------------------------------------------
# rendering

_STYLE = {
    "cell": 'fill="#ffffff" stroke="#d0d0d0" stroke-width="0.02"',
    "obstacle": 'fill="#555555" stroke="#333333" stroke-width="0.02"',
    "moved": 'fill="#f28e2b" stroke="#b35806" stroke-width="0.02"',
    "cleared": 'fill="none" stroke="#555555" stroke-width="0.04" stroke-dasharray="0.1,0.1"',
    "chain": 'fill="none" stroke="#1f77b4" stroke-width="0.08" stroke-linejoin="round"',
    "reference": 'fill="none" stroke="#f28e2b" stroke-width="0.06"',
    "tracked": 'fill="none" stroke="#2ca02c" stroke-width="0.04"',
    "robot": 'fill="#1f77b4" stroke="#0b3c5d" stroke-width="0.02"',
    "target": 'fill="none" stroke="#d62728" stroke-width="0.06"',
}


def _fmt(x: float) -> str:
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(
    grid: GridWorld,
    item: PathSystem | Any | None = None,
    out=None,
    scenario: ScenarioSpec | None = None,
    scale: float | None = None,
) -> str:
    """SVG drawing of the grid and a path system or simulation log.

    Robots are triangles, targets circles, obstacles shaded; chains are
    polylines through cell centres, a log adds one reference curve and one
    tracked curve per robot.  Output is a deterministic function of the
    inputs; it is returned and, when ``out`` is given, written there.
    """
    from .mpc import SimulationLog

    (x0, x1), (y0, y1) = grid.extent
    if scale is None:
        scale = max(4.0, min(60.0, 1000.0 / max(x1 - x0, y1 - y0)))
    width, height = (x1 - x0) * scale, (y1 - y0) * scale
    h = grid.cell_size

    def tx(x):
        return x - x0

    def ty(y):
        return y1 - y  # world y grows upward

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(x1 - x0)} {_fmt(y1 - y0)}">',
    ]
    obstacles = set(grid.obstacles)
    added: set[int] = set()
    removed: set[int] = set()
    if isinstance(item, SimulationLog):
        for _, ev, ignored in item.obstacle_events:
            removed |= set(ev.remove) & (obstacles | added)
            added -= set(ev.remove)
            added |= set(ev.add) - set(ignored)
    parts.append('<g class="cells">')
    for k in range(grid.K):
        cx, cy = grid.cell_center(k)
        kind = "moved" if k in added else "obstacle" if k in obstacles and k not in removed else "cell"
        parts.append(
            f'<rect class="{kind}" x="{_fmt(tx(cx - h / 2))}" y="{_fmt(ty(cy + h / 2))}" '
            f'width="{_fmt(h)}" height="{_fmt(h)}" {_STYLE[kind]}/>'
        )
    for k in sorted(removed):
        cx, cy = grid.cell_center(k)
        parts.append(
            f'<rect class="cleared" x="{_fmt(tx(cx - h / 2))}" y="{_fmt(ty(cy + h / 2))}" '
            f'width="{_fmt(h)}" height="{_fmt(h)}" {_STYLE["cleared"]}/>'
        )
    parts.append("</g>")

    def polyline(cls, pts):
        coords = " ".join(f"{_fmt(tx(x))},{_fmt(ty(y))}" for x, y in pts)
        return f'<polyline class="{cls}" points="{coords}" {_STYLE[cls]}/>'

    robots: Sequence[int] = scenario.robots if scenario is not None else ()
    targets: Sequence[int] = scenario.targets if scenario is not None else ()
    headings: dict[int, float] = {}
    if isinstance(item, PathSystem):
        parts.append('<g class="chains">')
        for ch in item.chains:
            parts.append(polyline("chain", [grid.cell_center(c) for c in ch.cells]))
            if len(ch.cells) > 1:
                a, b = grid.cell_center(ch.cells[0]), grid.cell_center(ch.cells[1])
                headings[ch.cells[0]] = math.atan2(b[1] - a[1], b[0] - a[0])
        parts.append("</g>")
    elif isinstance(item, SimulationLog):
        tab = item.table()
        parts.append('<g class="references">')
        for n in sorted(item.references):
            parts.append(polyline("reference", _reference_curve(item, n)))
        parts.append("</g>")
        parts.append('<g class="tracked">')
        for n in sorted(item.references):
            rows = tab[tab[:, 1] == n]
            parts.append(polyline("tracked", rows[:, 2:4].tolist()))
        parts.append("</g>")
        if tab.size:
            start = tab[tab[:, 0] == 0.0]
            for row in start:
                headings[grid.locate(row[2:4])] = float(row[4])

    parts.append('<g class="targets">')
    for c in targets:
        cx, cy = grid.cell_center(c)
        parts.append(
            f'<circle class="target" cx="{_fmt(tx(cx))}" cy="{_fmt(ty(cy))}" r="{_fmt(0.3 * h)}" {_STYLE["target"]}/>'
        )
    parts.append("</g>")
    parts.append('<g class="robots">')
    for c in robots:
        cx, cy = grid.cell_center(c)
        th = headings.get(c, 0.0)
        pts = []
        for ang, rad in ((0.0, 0.38), (2.5, 0.3), (-2.5, 0.3)):
            pts.append((cx + rad * h * math.cos(th + ang), cy + rad * h * math.sin(th + ang)))
        coords = " ".join(f"{_fmt(tx(x))},{_fmt(ty(y))}" for x, y in pts)
        parts.append(f'<polygon class="robot" points="{coords}" {_STYLE["robot"]}/>')
    parts.append("</g>")
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return svg


def _reference_curve(log, robot: int, step: float = 0.1) -> list[tuple[float, float]]:
    """The reference actually in force over time, stitched across replans."""
    refs = log.references[robot]
    pts: list[tuple[float, float]] = []
    for k, tr in enumerate(refs):
        start = tr.t0
        stop = refs[k + 1].t0 if k + 1 < len(refs) else max(tr.end_time, log.end_time)
        if stop <= start and k + 1 < len(refs):
            continue
        count = max(int(round((stop - start) / step)), 0) + 1
        ts = start + np.arange(count) * step
        pos, _ = sample_many(tr, ts)
        pts.extend((float(x), float(y)) for x, y in pos)
    return pts


# ---------------------------------------------------------------------------
# metrics and timing


def metrics(item, transition_time: float = 1.0) -> dict[str, Any]:
    """Summary numbers of a path system, a list of replan waves, a plan or a log."""
    from .mpc import SimulationLog

    out: dict[str, Any] = {
        "path_cost": 0,
        "makespan": 0.0,
        "max_final_p_norm": 0.0,
        "mean_final_p_norm": 0.0,
        "replans": 0,
        "solve_time": 0.0,
    }
    if isinstance(item, TransportPlan):
        out["path_cost"] = item.total_cost
        out["solve_time"] = item.solve_time
    elif isinstance(item, PathSystem):
        out["path_cost"] = item.total_cost
        hops = [len(ch.cells) - 1 for ch in item.chains]
        out["makespan"] = max(hops, default=0) * transition_time
    elif isinstance(item, (list, tuple)):
        out["path_cost"] = sum((w.total_cost for w in item), start=0)
        out["makespan"] = sum(max((len(ch.cells) - 1 for ch in w.chains), default=0) for w in item) * transition_time
        out["replans"] = max(len(item) - 1, 0)
    elif isinstance(item, SimulationLog):
        final = {}
        for row in item.rows:
            final[int(row[1])] = row[11]
        vals = np.array(list(final.values()), dtype=float)
        out["makespan"] = item.end_time
        out["max_final_p_norm"] = float(vals.max()) if vals.size else 0.0
        out["mean_final_p_norm"] = float(vals.mean()) if vals.size else 0.0
        out["replans"] = item.replan_count
        out["solve_time"] = item.plan_time
        out["wall_time"] = item.wall_time
        out["contraction_rate"] = (
            sum(e.contraction_ok for e in item.epochs) / len(item.epochs) if item.epochs else 1.0
        )
        first = [ev for ev in item.events if ev.reason == "initial"]
        out["path_cost"] = first[0].total_cost if first else 0
        errs = item.final_errors()
        errs = errs[~np.isnan(errs)]
        out["max_final_distance"] = float(errs.max()) if errs.size else 0.0
    else:
        raise TypeError(f"no metrics for {type(item).__name__}")
    return out


def _timed(fn, repeat: int) -> float:
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes: Sequence[tuple[int, int]] = ((10, 15), (20, 30), (50, 75)), robots: int = 10,
          repeat: int = 3, seed: int = 0, mpc_solves: int = 5) -> dict[str, Any]:
    """Best-of-``repeat`` timings of the flow and MPC kernels on each backend."""
    backends = ["python"] + (["compiled"] if _backend.compiled_kernels is not None else [])
    result: dict[str, Any] = {"backends": backends, "flow": [], "mpc": {}}
    for rows, cols in sizes:
        sc = random_scenario(rows, cols, robots, obstacle_count=(rows * cols) // 40, seed=seed)
        entry = {"rows": rows, "cols": cols, "K": rows * cols}
        costs = set()
        for b in backends:
            entry[b] = _timed(lambda b=b: costs.add(solve(sc, kernel=b).total_cost), repeat)
        entry["agree"] = len(costs) == 1
        result["flow"].append(entry)

    from .mpc import RobotState, solve_mpc
    from .trajectory import from_points

    cfg = MpcConfig()
    traj = from_points([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 1.0)])
    for b in backends:
        result["mpc"][b] = _timed(
            lambda b=b: [solve_mpc(RobotState(-0.5, 0.2, 0.3), traj, 0.0, cfg, kernel=b) for _ in range(mpc_solves)],
            repeat,
        ) / mpc_solves
    if "compiled" in backends:
        result["speedup"] = {
            "flow": [e["python"] / e["compiled"] for e in result["flow"]],
            "mpc": result["mpc"]["python"] / result["mpc"]["compiled"],
        }
    return result
