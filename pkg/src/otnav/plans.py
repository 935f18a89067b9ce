"""Robot chains from transport plans, their guarantees, and replanning."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import CostParams
from .errors import InfeasibleError, MalformedPlanError, StallError
from .grid import Refinement, ScenarioSpec, refine_scenario
from .otcore import TransportPlan, cost, solve, step_neighbors


@dataclass(frozen=True)
class Chain:
    """Discrete path of one robot: its cell sequence from start to target."""

    robot: int
    target: int
    cells: tuple[int, ...]
    cost: Any

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.cells[:-1], self.cells[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"robot": self.robot, "target": self.target, "cells": list(self.cells), "cost": self.cost}


@dataclass(frozen=True)
class PathSystem:
    chains: tuple[Chain, ...]
    practically_feasible: bool
    total_cost: Any

    def __len__(self):
        return len(self.chains)

    def by_robot(self) -> dict[int, Chain]:
        return {ch.robot: ch for ch in self.chains}

    def cells(self) -> list[int]:
        return [c for ch in self.chains for c in ch.cells]

    def to_dict(self) -> dict[str, Any]:
        return {
            "practically_feasible": self.practically_feasible,
            "total_cost": self.total_cost,
            "chains": [ch.to_dict() for ch in self.chains],
        }


def extract_chains(plan: TransportPlan, scenario: ScenarioSpec) -> PathSystem:
    """Follow the successor map of the non-identity moves from every robot cell."""
    succ: dict[int, int] = {}
    for i, j, m in plan.moves:
        if m != 1:
            raise MalformedPlanError(f"move {i}->{j} carries non-unit mass {m}")
        if i in succ:
            raise MalformedPlanError(f"cell {i} sends mass twice")
        succ[i] = j
    target_id = {c: k for k, c in enumerate(scenario.targets)}
    used: set[int] = set()
    visited: set[int] = set()
    chains = []
    feasible = True
    for rid, start in enumerate(scenario.robots):
        if start not in succ:
            continue
        cells = [start]
        visited.add(start)
        cur = start
        total = 0
        while cur not in target_id:
            if cur not in succ:
                raise MalformedPlanError(f"chain from robot {rid} stops at non-target cell {cur}")
            nxt = succ[cur]
            used.add(cur)
            if nxt in visited:
                raise MalformedPlanError(f"chain from robot {rid} revisits cell {nxt}")
            c = plan.move_cost(cur, nxt)
            if c > plan.params.adjacent_cost:
                feasible = False
            total += c
            visited.add(nxt)
            cells.append(nxt)
            cur = nxt
        chains.append(Chain(rid, target_id[cur], tuple(cells), total))
    orphans = sorted(set(succ) - used)
    if orphans:
        raise MalformedPlanError(f"moves from cells {orphans} belong to no robot chain")
    return PathSystem(tuple(chains), feasible, sum((ch.cost for ch in chains), start=0))


def check_practical_feasibility(
    plan: TransportPlan, params: CostParams | None = None
) -> tuple[bool, list[tuple[int, int, Any]]]:
    """True when every move is at most a one-cell step; otherwise the jump moves."""
    params = params or plan.params
    bad = []
    for i, j, m in plan.moves:
        if m:
            c = cost(params, plan.grid, i, j)
            if c > params.adjacent_cost:
                bad.append((i, j, c))
    return not bad, bad


@dataclass(frozen=True)
class GuaranteeReport:
    integral: bool
    disjoint: bool
    coverage: bool
    fractional_moves: tuple = ()
    overlap_cells: tuple = ()
    routed: int = 0
    expected: int = 0
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.integral and self.disjoint and self.coverage


def check_plan_guarantees(plan: TransportPlan, scenario: ScenarioSpec) -> GuaranteeReport:
    """Check integrality, cell-disjointness and target coverage of a plan.

    Works on arbitrary (even broken) plans and never raises; failures carry
    the offending moves or cells.
    """
    fractional = tuple((i, j, m) for i, j, m in plan.moves if m not in (0, 1))
    out_count: Counter = Counter()
    in_count: Counter = Counter()
    for k in plan.fixed:
        out_count[k] += 1
        in_count[k] += 1
    for i, j, m in plan.moves:
        if m:
            out_count[i] += 1
            in_count[j] += 1
    overlap = tuple(sorted({k for k, n in in_count.items() if n > 1} | {k for k, n in out_count.items() if n > 1}))

    succ: dict[int, list[int]] = {}
    for i, j, m in plan.moves:
        if m:
            succ.setdefault(i, []).append(j)
    targets = set(scenario.targets)
    reached: list[int] = []
    for start in scenario.robots:
        cur, seen = start, {start}
        while cur in succ and cur not in targets:
            cur = succ[cur][0]
            if cur in seen:
                break
            seen.add(cur)
        if cur in targets and cur != start:
            reached.append(cur)
    distinct = len(set(reached)) == len(reached)
    expected = scenario.L
    coverage = distinct and len(reached) == expected
    if scenario.N == scenario.M:
        coverage = coverage and len(reached) == scenario.N
    detail = []
    if fractional:
        detail.append(f"fractional masses on {len(fractional)} moves")
    if overlap:
        detail.append(f"cells used by more than one path: {list(overlap)}")
    if not coverage:
        detail.append(f"{len(set(reached))} distinct targets reached, expected {expected}")
    return GuaranteeReport(
        integral=not fractional,
        disjoint=not overlap,
        coverage=coverage,
        fractional_moves=fractional,
        overlap_cells=overlap,
        routed=len(reached),
        expected=expected,
        detail="; ".join(detail),
    )


def hop_distances(scenario: ScenarioSpec, source: int) -> dict[int, int]:
    """Breadth-first hop counts from ``source`` through free cells, ignoring robots and targets."""
    grid = scenario.grid
    params = scenario.cost_params
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in step_neighbors(params, grid, u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def simple_replan(
    scenario: ScenarioSpec, backend: str = "flow", max_waves: int | None = None
) -> list[PathSystem]:
    """Execute shortest unit-step chains first, then re-solve for the rest.

    Each wave holds the unit-step chains whose cost equals the robot's
    unobstructed hop distance to its target; if no chain qualifies, the
    cheapest unit-step chains form the wave.  Finished robots and their
    targets leave the problem and their cells become free space.  Chain
    ``robot``/``target`` ids refer to the original scenario.
    """
    params = scenario.cost_params
    robots = list(range(scenario.N))
    targets = list(range(scenario.M))
    waves: list[PathSystem] = []
    limit = max_waves if max_waves is not None else scenario.L + 1
    while robots and targets:
        if len(waves) >= limit:
            raise StallError(f"no convergence after {len(waves)} waves")
        sub = scenario.replace(
            robots=tuple(scenario.robots[r] for r in robots),
            targets=tuple(scenario.targets[t] for t in targets),
        )
        plan = solve(sub, backend=backend)
        system = extract_chains(plan, sub)
        unit = [
            ch
            for ch in system.chains
            if all(cost(params, sub.grid, a, b) <= params.adjacent_cost for a, b in ch.steps)
        ]
        if not unit:
            raise StallError("no practically feasible chain in this replan; refine the grid")
        shortest = []
        for ch in unit:
            hops = hop_distances(sub, ch.cells[0]).get(ch.cells[-1])
            if hops is not None and ch.cost == hops * params.adjacent_cost:
                shortest.append(ch)
        if not shortest:
            best = min(ch.cost for ch in unit)
            shortest = [ch for ch in unit if ch.cost == best]
        wave = [
            Chain(robots[ch.robot], targets[ch.target], ch.cells, ch.cost) for ch in shortest
        ]
        waves.append(PathSystem(tuple(sorted(wave, key=lambda c: c.robot)), True, sum((c.cost for c in wave), start=0)))
        done_r = {ch.robot for ch in wave}
        done_t = {ch.target for ch in wave}
        robots = [r for r in robots if r not in done_r]
        targets = [t for t in targets if t not in done_t]
        if len(waves) and sum(len(w) for w in waves) >= scenario.L:
            break
    return waves


@dataclass(frozen=True)
class RefinedPaths:
    scenario: ScenarioSpec
    refinement: Refinement
    plan: TransportPlan
    paths: PathSystem
    projected: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def s(self) -> int:
        return self.refinement.s

    @property
    def world_cost(self) -> float:
        """Path cost measured in coarse-cell units (fine step costs scaled by 1/s)."""
        return float(self.paths.total_cost) / self.s


def refine_replan(scenario: ScenarioSpec, s: int, backend: str = "flow") -> RefinedPaths:
    """Solve on an ``s x s`` refinement and project the fine chains back."""
    fine, ref = refine_scenario(scenario, s)
    plan = solve(fine, backend=backend)
    paths = extract_chains(plan, fine)
    projected = tuple(tuple(ref.project(ch.cells)) for ch in paths.chains)
    return RefinedPaths(fine, ref, plan, paths, projected)


def refine_until_feasible(
    scenario: ScenarioSpec, factors=(2, 3, 4), backend: str = "flow"
) -> RefinedPaths:
    """Try increasing subdivision factors until the fine plan uses one-cell steps only."""
    last_error = None
    for s in factors:
        try:
            result = refine_replan(scenario, s, backend=backend)
        except InfeasibleError as exc:
            last_error = exc
            continue
        if result.paths.practically_feasible:
            return result
    raise InfeasibleError(
        f"no practically feasible refinement up to s={max(factors)}"
        + (f" ({last_error})" if last_error else "")
    )


def chain_edges(system: PathSystem) -> Counter:
    return Counter(step for ch in system.chains for step in ch.steps)


def plan_edges(plan: TransportPlan) -> Counter:
    return Counter((i, j) for i, j, m in plan.moves if m)


def robot_hops(system: PathSystem) -> np.ndarray:
    return np.array([len(ch.cells) - 1 for ch in system.chains], dtype=int)
