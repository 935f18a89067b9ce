"""Marginals, transition costs and exact solvers for the grid transport problem.

Every free cell carries one unit of source mass unless it holds a target and
one unit of target mass unless it holds a robot.  Because the marginals are
0/1 and staying put is free, an optimal plan is the identity everywhere
except along vertex-disjoint chains that carry each robot to a target.  The
default ``flow`` backend exploits that: it solves a unit-capacity min-cost
flow on a node-split graph with successive shortest paths.  The ``dense``
backend solves the full linear program over all admissible cell pairs and is
meant as a cross-check on small grids.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import _backend
from .config import CostParams
from .errors import ImbalanceError, InfeasibleError, RangeError
from .grid import OFFSETS_4, OFFSETS_8, GridWorld, ScenarioSpec

BALANCED = "balanced"
UNBALANCED = "unbalanced"


@dataclass(frozen=True)
class Marginals:
    """Source (``mu``) and target (``nu``) 0/1 mass vectors over all K cells.

    Obstacle cells carry no mass in either vector.
    """

    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.int8)
        nu = np.asarray(self.nu, dtype=np.int8)
        if mu.shape != nu.shape or mu.ndim != 1:
            raise ValueError("mu and nu must be vectors of equal length")
        if not (np.isin(mu, (0, 1)).all() and np.isin(nu, (0, 1)).all()):
            raise ValueError("marginals must be 0/1 vectors")
        mu.flags.writeable = False
        nu.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    @property
    def robots(self) -> np.ndarray:
        return np.flatnonzero((self.mu == 1) & (self.nu == 0))

    @property
    def targets(self) -> np.ndarray:
        return np.flatnonzero((self.mu == 0) & (self.nu == 1))

    @property
    def passable(self) -> np.ndarray:
        return np.flatnonzero((self.mu == 1) & (self.nu == 1))

    @property
    def mass(self) -> int:
        """Least mass any feasible plan must move: ``min(|mu|_1, |nu|_1)``."""
        return int(min(self.mu.sum(), self.nu.sum()))


def marginals_for(grid: GridWorld, robots: Iterable[int], targets: Iterable[int]) -> Marginals:
    mu = grid.free_mask.astype(np.int8)
    nu = mu.copy()
    mu[list(targets)] = 0
    nu[list(robots)] = 0
    return Marginals(mu, nu)


def build_marginals(scenario: ScenarioSpec) -> Marginals:
    return marginals_for(scenario.grid, scenario.robots, scenario.targets)


def jump_cost(params: CostParams, manhattan: int):
    if not params.jumps_enabled:
        return math.inf
    value = params.jump_base**manhattan
    if params.jump_cap is not None and value > params.jump_cap:
        value = params.jump_cap
    return value


def is_step(params: CostParams, grid: GridWorld, i: int, j: int) -> bool:
    """Whether ``i -> j`` is a one-cell move under the connectivity rules."""
    if not grid.adjacent(i, j, params.connectivity):
        return False
    if params.corner_cutting:
        return True
    (ri, ci), (rj, cj) = grid.rc(i), grid.rc(j)
    if ri == rj or ci == cj:
        return True
    return grid.is_free(grid.index(ri, cj)) and grid.is_free(grid.index(rj, ci))


def step_neighbors(params: CostParams, grid: GridWorld, cell: int) -> list[int]:
    """Free cells reachable from ``cell`` in one step, ascending."""
    return [j for j in grid.neighbors(cell, params.connectivity) if is_step(params, grid, cell, j)]


def cost(params: CostParams, grid: GridWorld, i: int, j: int):
    """Transition cost between two cells under the closed-form rule.

    Obstacles are ignored here; see :func:`cost_matrix` for the dense view.
    """
    i, j = grid.check(i), grid.check(j)
    if i == j:
        return params.stay_cost
    if is_step(params, grid, i, j):
        return params.adjacent_cost
    return jump_cost(params, grid.manhattan(i, j))


def arc_allowed(
    params: CostParams, grid: GridWorld, i: int, j: int, robots=(), targets=()
) -> bool:
    """Whether the move ``i -> j`` is part of the configured arc set."""
    if i == j or is_step(params, grid, i, j):
        return True
    if not params.jumps_enabled:
        return False
    if params.jump_scope == "dense":
        return True
    if i in robots and j in targets:
        return True
    return grid.chebyshev(i, j) <= params.jump_radius


def cost_matrix(params: CostParams, grid: GridWorld, robots=(), targets=()) -> np.ndarray:
    """Dense K x K view of the cost.

    Moves into obstacles cost ``obstacle_cost``; moves outside the configured
    arc set are ``inf``.  Intended for small grids and inspection.
    """
    K = grid.K
    robots, targets = set(robots), set(targets)
    rows = []
    for i in range(K):
        row = []
        for j in range(K):
            if i != j and not grid.free_mask[j]:
                row.append(params.obstacle_cost)
            elif arc_allowed(params, grid, i, j, robots, targets):
                row.append(cost(params, grid, i, j))
            else:
                row.append(math.inf)
        rows.append(row)
    flat = [c for row in rows for c in row]
    if any(isinstance(c, float) for c in flat):
        return np.array(rows, dtype=float)
    if max(flat, default=0) < 2**63:
        return np.array(rows, dtype=np.int64)
    return np.array(rows, dtype=object)


@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal plan: non-identity moves plus the identity (fixed) cells."""

    grid: GridWorld
    params: CostParams
    mode: str
    moves: tuple[tuple[int, int, Any], ...]
    fixed: tuple[int, ...]
    total_cost: Any
    moved_mass: Any
    backend: str = "flow"
    solve_time: float = field(default=0.0, compare=False)

    @property
    def K(self) -> int:
        return self.grid.K

    def move_cost(self, i: int, j: int):
        return cost(self.params, self.grid, i, j)

    def successor(self) -> dict[int, int]:
        return {i: j for i, j, m in self.moves if m}

    def dense(self) -> np.ndarray:
        pi = np.zeros((self.K, self.K), dtype=float)
        for k in self.fixed:
            pi[k, k] = 1.0
        for i, j, m in self.moves:
            pi[i, j] += m
        return pi

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.K, dtype=float)
        for k in self.fixed:
            out[k] += 1
        for i, _, m in self.moves:
            out[i] += m
        return out

    def col_sums(self) -> np.ndarray:
        out = np.zeros(self.K, dtype=float)
        for k in self.fixed:
            out[k] += 1
        for _, j, m in self.moves:
            out[j] += m
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "backend": self.backend,
            "K": self.K,
            "total_cost": _jsonable(self.total_cost),
            "moved_mass": _jsonable(self.moved_mass),
            "moves": [[i, j] for i, j, m in self.moves if m == 1],
        }


def _jsonable(x):
    if isinstance(x, float) and x.is_integer():
        return int(x)
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class _Network:
    indptr: np.ndarray
    heads: np.ndarray
    costs: np.ndarray
    caps: np.ndarray
    rev: np.ndarray
    move_src: np.ndarray  # per residual arc: source cell of a move arc, else -1
    move_dst: np.ndarray
    source: int
    sink: int
    n_nodes: int
    int64_ok: bool


def _move_arcs(grid: GridWorld, marginals: Marginals, params: CostParams):
    """Candidate move arcs (u, v, cost) with ``mu[u] = nu[v] = 1`` and ``u != v``."""
    rows, cols = grid.rows, grid.cols
    src_ok = marginals.mu.astype(bool)
    dst_ok = marginals.nu.astype(bool)
    K = grid.K
    rr, cc = np.divmod(np.arange(K), cols)
    us, vs, cs = [], [], []

    free = grid.free_mask

    def add_offsets(offsets, cost_for, corner_cost=None):
        for dr, dc in offsets:
            ok = (rr + dr >= 0) & (rr + dr < rows) & (cc + dc >= 0) & (cc + dc < cols) & src_ok
            u = np.flatnonzero(ok)
            v = u + dr * cols + dc
            keep = dst_ok[v]
            u, v = u[keep], v[keep]
            c = np.full(u.size, 0, dtype=object)
            c[:] = cost_for(dr, dc)
            if corner_cost is not None and dr and dc:
                # diagonal squeezing past an obstacle corner
                blocked = ~(free[u + dc] & free[u + dr * cols])
                if corner_cost is math.inf:
                    u, v, c = u[~blocked], v[~blocked], c[~blocked]
                else:
                    c[blocked] = corner_cost
            if u.size:
                us.append(u)
                vs.append(v)
                cs.append(list(c))

    adj = OFFSETS_8 if params.connectivity == 8 else OFFSETS_4
    adj_set = set(adj)
    corner = None if params.corner_cutting else jump_cost(params, 2)
    add_offsets(adj, lambda dr, dc: params.adjacent_cost, corner)
    if params.jumps_enabled and params.jump_scope == "dense":
        u_all = np.flatnonzero(src_ok)
        v_all = np.flatnonzero(dst_ok)
        uu, vv = np.meshgrid(u_all, v_all, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        dr = np.abs(rr[uu] - rr[vv])
        dc = np.abs(cc[uu] - cc[vv])
        if params.connectivity == 8:
            far = np.maximum(dr, dc) > 1
        else:
            far = (dr + dc) > 1
        uu, vv = uu[far], vv[far]
        man = (dr + dc)[far]
        us.append(uu)
        vs.append(vv)
        table = {int(d): jump_cost(params, int(d)) for d in np.unique(man)}
        cs.append([table[int(d)] for d in man])
    elif params.jumps_enabled:
        R = params.jump_radius
        local = [
            (dr, dc)
            for dr in range(-R, R + 1)
            for dc in range(-R, R + 1)
            if (dr, dc) != (0, 0) and (dr, dc) not in adj_set
        ]
        add_offsets(local, lambda dr, dc: jump_cost(params, abs(dr) + abs(dc)))
        robots, targets = marginals.robots, marginals.targets
        if robots.size and targets.size:
            uu, vv = np.meshgrid(robots, targets, indexing="ij")
            uu, vv = uu.ravel(), vv.ravel()
            dr = np.abs(rr[uu] - rr[vv])
            dc = np.abs(cc[uu] - cc[vv])
            far = np.maximum(dr, dc) > R
            uu, vv = uu[far], vv[far]
            man = (dr + dc)[far]
            us.append(uu)
            vs.append(vv)
            table = {int(d): jump_cost(params, int(d)) for d in np.unique(man)}
            cs.append([table[int(d)] for d in man])
    if not us:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), []
    u = np.concatenate(us).astype(np.int64)
    v = np.concatenate(vs).astype(np.int64)
    c = [x for chunk in cs for x in chunk]
    return u, v, c


def _build_network(grid: GridWorld, marginals: Marginals, params: CostParams) -> _Network:
    K = grid.K
    S, T = 0, 1
    n_nodes = 2 + 2 * K
    robots, targets, passable = marginals.robots, marginals.targets, marginals.passable
    mu_, mv_, mc_ = _move_arcs(grid, marginals, params)

    def node_in(k):
        return 2 + 2 * k

    def node_out(k):
        return 3 + 2 * k

    tails = np.concatenate(
        [np.full(robots.size, S), node_in(targets), node_in(passable), node_out(mu_)]
    ).astype(np.int64)
    heads = np.concatenate(
        [node_out(robots), np.full(targets.size, T), node_out(passable), node_in(mv_)]
    ).astype(np.int64)
    n_plain = robots.size + targets.size + passable.size
    cost_list = [0] * n_plain + list(mc_)
    msrc = np.concatenate([np.full(n_plain, -1), mu_]).astype(np.int64)
    mdst = np.concatenate([np.full(n_plain, -1), mv_]).astype(np.int64)

    integral = all(
        isinstance(c, (int, np.integer)) or (isinstance(c, float) and c.is_integer())
        for c in cost_list
    )
    biggest = max((abs(c) for c in cost_list), default=0)
    int64_ok = integral and biggest * 4 * (n_nodes + 1) < _backend.INT64_SAFE
    if int64_ok:
        fwd_cost = np.array([int(c) for c in cost_list], dtype=np.int64)
    else:
        fwd_cost = np.array(cost_list, dtype=object)

    m = tails.size
    all_t = np.concatenate([tails, heads])
    all_h = np.concatenate([heads, tails])
    is_rev = np.concatenate([np.zeros(m, np.int64), np.ones(m, np.int64)])
    order = np.lexsort((is_rev, all_h, all_t))
    pos = np.empty(2 * m, dtype=np.int64)
    pos[order] = np.arange(2 * m)
    pair = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    rev = pos[pair][order]
    heads_s = all_h[order]
    caps = np.concatenate([np.ones(m, np.int64), np.zeros(m, np.int64)])[order]
    if int64_ok:
        costs = np.concatenate([fwd_cost, -fwd_cost])[order]
    else:
        costs = np.empty(2 * m, dtype=object)
        costs[:m] = fwd_cost
        costs[m:] = [-c for c in fwd_cost]
        costs = costs[order]
    msrc_s = np.concatenate([msrc, np.full(m, -1)])[order]
    mdst_s = np.concatenate([mdst, np.full(m, -1)])[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, all_t[order] + 1, 1)
    indptr = np.cumsum(indptr)
    return _Network(indptr, heads_s, costs, caps, rev, msrc_s, mdst_s, S, T, n_nodes, int64_ok)


def _flow_plan(grid, marginals, params, demand, mode, kernel=None) -> TransportPlan:
    t0 = time.perf_counter()
    net = _build_network(grid, marginals, params)
    if kernel is None:
        kmod = _backend.kernels if net.int64_ok else _backend.python_kernels
    else:
        kmod = _backend.get(kernel)
        if kmod is _backend.compiled_kernels and not net.int64_ok:
            raise ValueError("costs do not fit the compiled int64 kernel")
    sent, caps = kmod.ssp_flow(
        net.indptr, net.heads, net.costs, net.caps, net.rev, net.source, net.sink, demand
    )
    if sent < demand:
        raise InfeasibleError(
            f"only {sent} of {demand} robots can be routed with the configured arc set"
        )
    used = (net.move_src >= 0) & (net.caps == 1) & (caps == 0)
    idx = np.flatnonzero(used)
    moves = sorted((int(net.move_src[e]), int(net.move_dst[e])) for e in idx)
    touched = {i for i, _ in moves} | {j for _, j in moves}
    fixed = tuple(int(k) for k in marginals.passable if int(k) not in touched)
    total = sum((cost(params, grid, i, j) for i, j in moves), start=0)
    moved = len(fixed) + len(moves)
    plan = TransportPlan(
        grid=grid,
        params=params,
        mode=mode,
        moves=tuple((i, j, 1) for i, j in moves),
        fixed=fixed,
        total_cost=total,
        moved_mass=moved,
        backend="flow",
        solve_time=time.perf_counter() - t0,
    )
    assert moved == marginals.mass, (moved, marginals.mass)
    return plan


def _dense_plan(grid, marginals, params, mode) -> TransportPlan:
    """Full LP over every admissible (i, j) pair, solved with HiGHS."""
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    t0 = time.perf_counter()
    rows = np.flatnonzero(marginals.mu)
    cols = np.flatnonzero(marginals.nu)
    robots, targets = set(marginals.robots.tolist()), set(marginals.targets.tolist())
    pairs, costs = [], []
    for i in rows.tolist():
        for j in cols.tolist():
            if arc_allowed(params, grid, i, j, robots, targets):
                pairs.append((i, j))
                costs.append(cost(params, grid, i, j))
    n = len(pairs)
    if n == 0:
        if marginals.mass:
            raise InfeasibleError("no admissible transitions")
        return TransportPlan(grid, params, mode, (), (), 0, 0, backend="dense")
    ri = {c: k for k, c in enumerate(rows.tolist())}
    ci = {c: k for k, c in enumerate(cols.tolist())}
    var = np.arange(n)
    a_row = coo_matrix((np.ones(n), ([ri[i] for i, _ in pairs], var)), shape=(len(rows), n))
    a_col = coo_matrix((np.ones(n), ([ci[j] for _, j in pairs], var)), shape=(len(cols), n))
    c = np.array([float(x) for x in costs])
    from scipy.sparse import vstack

    if mode == BALANCED:
        res = linprog(
            c,
            A_eq=vstack([a_row, a_col]).tocsr(),
            b_eq=np.ones(len(rows) + len(cols)),
            bounds=(0, 1),
            method="highs-ds",
        )
    else:
        res = linprog(
            c,
            A_ub=vstack([a_row, a_col]).tocsr(),
            b_ub=np.ones(len(rows) + len(cols)),
            A_eq=np.ones((1, n)),
            b_eq=[marginals.mass],
            bounds=(0, 1),
            method="highs-ds",
        )
    if res.status == 2:
        raise InfeasibleError("transport LP is infeasible")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = res.x
    if np.max(np.abs(x - np.round(x))) > 1e-6:
        raise RuntimeError("LP returned a fractional vertex")
    chosen = [pairs[k] for k in np.flatnonzero(np.round(x) == 1)]
    moves = sorted((i, j) for i, j in chosen if i != j)
    fixed = tuple(sorted(i for i, j in chosen if i == j))
    total = sum((cost(params, grid, i, j) for i, j in moves), start=0)
    return TransportPlan(
        grid=grid,
        params=params,
        mode=mode,
        moves=tuple((i, j, 1) for i, j in moves),
        fixed=fixed,
        total_cost=total,
        moved_mass=len(chosen),
        backend="dense",
        solve_time=time.perf_counter() - t0,
    )


def solve_balanced(
    grid: GridWorld,
    marginals: Marginals,
    params: CostParams | None = None,
    backend: str = "flow",
    kernel: str | None = None,
) -> TransportPlan:
    """Minimum-cost plan with exact marginals (requires as many robots as targets)."""
    params = params or CostParams()
    if int(marginals.mu.sum()) != int(marginals.nu.sum()):
        raise ImbalanceError(
            f"|mu|_1 = {int(marginals.mu.sum())} differs from |nu|_1 = {int(marginals.nu.sum())}"
        )
    _check_len(grid, marginals)
    if backend == "dense":
        return _dense_plan(grid, marginals, params, BALANCED)
    return _flow_plan(grid, marginals, params, len(marginals.robots), BALANCED, kernel)


def solve_unbalanced(
    grid: GridWorld,
    marginals: Marginals,
    params: CostParams | None = None,
    backend: str = "flow",
    kernel: str | None = None,
) -> TransportPlan:
    """Minimum-cost plan with inequality marginals moving exactly ``marginals.mass``."""
    params = params or CostParams()
    _check_len(grid, marginals)
    if backend == "dense":
        return _dense_plan(grid, marginals, params, UNBALANCED)
    demand = min(len(marginals.robots), len(marginals.targets))
    return _flow_plan(grid, marginals, params, demand, UNBALANCED, kernel)


def _check_len(grid: GridWorld, marginals: Marginals) -> None:
    if marginals.mu.size != grid.K:
        raise RangeError(f"marginals have {marginals.mu.size} entries for {grid.K} cells")


def solve(
    scenario: ScenarioSpec,
    unbalanced: bool | None = None,
    backend: str = "flow",
    params: CostParams | None = None,
    kernel: str | None = None,
) -> TransportPlan:
    """Solve a scenario; the unbalanced form is used when ``N != M`` unless forced."""
    params = params or scenario.cost_params
    marg = build_marginals(scenario)
    if unbalanced is None:
        unbalanced = scenario.N != scenario.M
    fn = solve_unbalanced if unbalanced else solve_balanced
    return fn(scenario.grid, marg, params, backend=backend, kernel=kernel)


def plan_cells(plan: TransportPlan) -> Sequence[int]:
    """Cells that appear in a non-identity move."""
    return sorted({i for i, _, _ in plan.moves} | {j for _, j, _ in plan.moves})
