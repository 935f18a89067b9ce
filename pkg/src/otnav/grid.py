"""Grid discretization of the workspace, scenarios and refinement.

Cells are numbered row-major: ``cell = row * cols + col``.  World
coordinates put ``x`` along columns and ``y`` along rows, so the centre of
cell ``(r, c)`` is ``origin + (c, r) * cell_size``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .config import CostParams, MpcConfig
from .errors import OverlapError, RangeError

OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


@dataclass(frozen=True)
class GridWorld:
    """Uniform square-cell lattice with a set of obstacle cells."""

    rows: int
    cols: int
    cell_size: float = 1.0
    obstacles: frozenset = frozenset()
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        obstacles = frozenset(int(c) for c in self.obstacles)
        for c in obstacles:
            if not 0 <= c < self.rows * self.cols:
                raise RangeError(f"obstacle cell {c} outside grid of {self.rows * self.cols} cells")
        object.__setattr__(self, "obstacles", obstacles)
        if self.origin is None:
            half = self.cell_size / 2.0
            object.__setattr__(self, "origin", (half, half))
        else:
            object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def K(self) -> int:
        return self.rows * self.cols

    @cached_property
    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.K, dtype=bool)
        if self.obstacles:
            mask[np.fromiter(self.obstacles, dtype=np.int64)] = False
        mask.flags.writeable = False
        return mask

    @cached_property
    def free_cells(self) -> np.ndarray:
        cells = np.flatnonzero(self.free_mask)
        cells.flags.writeable = False
        return cells

    def check(self, cell: int) -> int:
        cell = int(cell)
        if not 0 <= cell < self.K:
            raise RangeError(f"cell {cell} outside grid of {self.K} cells")
        return cell

    def is_free(self, cell: int) -> bool:
        return bool(self.free_mask[self.check(cell)])

    def rc(self, cell: int) -> tuple[int, int]:
        return divmod(self.check(cell), self.cols)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise RangeError(f"(row={row}, col={col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def chebyshev(self, i: int, j: int) -> int:
        (ri, ci), (rj, cj) = self.rc(i), self.rc(j)
        return max(abs(ri - rj), abs(ci - cj))

    def manhattan(self, i: int, j: int) -> int:
        (ri, ci), (rj, cj) = self.rc(i), self.rc(j)
        return abs(ri - rj) + abs(ci - cj)

    def adjacent(self, i: int, j: int, connectivity: int = 8) -> bool:
        if connectivity == 8:
            return self.chebyshev(i, j) == 1
        return self.manhattan(i, j) == 1

    def neighbors(self, cell: int, connectivity: int = 8) -> list[int]:
        return neighbors(self, cell, connectivity)

    def cell_center(self, cell: int) -> tuple[float, float]:
        return cell_center(self, cell)

    def locate(self, point: Sequence[float]) -> int:
        return locate(self, point)

    @property
    def extent(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """World-space bounding box ``((x_min, x_max), (y_min, y_max))``."""
        h = self.cell_size
        x0 = self.origin[0] - h / 2
        y0 = self.origin[1] - h / 2
        return (x0, x0 + self.cols * h), (y0, y0 + self.rows * h)

    def with_obstacles(self, obstacles: Iterable[int]) -> "GridWorld":
        return GridWorld(self.rows, self.cols, self.cell_size, frozenset(obstacles), self.origin)


def neighbors(grid: GridWorld, cell: int, connectivity: int = 8) -> list[int]:
    """Free cells adjacent to ``cell``, ascending.  Obstacles are never neighbours."""
    r, c = grid.rc(cell)
    offsets = OFFSETS_8 if connectivity == 8 else OFFSETS_4
    out = []
    for dr, dc in offsets:
        rr, cc = r + dr, c + dc
        if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
            k = rr * grid.cols + cc
            if grid.free_mask[k]:
                out.append(k)
    out.sort()
    return out


def cell_center(grid: GridWorld, cell: int) -> tuple[float, float]:
    r, c = grid.rc(cell)
    return (grid.origin[0] + c * grid.cell_size, grid.origin[1] + r * grid.cell_size)


def locate(grid: GridWorld, point: Sequence[float]) -> int:
    """Cell containing a world point.  Points on a shared edge go to the higher index."""
    x, y = float(point[0]), float(point[1])
    c = math.floor((x - grid.origin[0]) / grid.cell_size + 0.5)
    r = math.floor((y - grid.origin[1]) / grid.cell_size + 0.5)
    if not (0 <= r < grid.rows and 0 <= c < grid.cols):
        raise RangeError(f"point ({x}, {y}) lies outside the grid")
    return r * grid.cols + c


@dataclass(frozen=True)
class ScenarioSpec:
    """Robots and targets placed on a grid, plus planner and controller settings."""

    grid: GridWorld
    robots: tuple[int, ...]
    targets: tuple[int, ...]
    cost_params: CostParams = field(default_factory=CostParams)
    mpc_params: MpcConfig = field(default_factory=MpcConfig)
    seed: int | None = None

    def __post_init__(self):
        robots = tuple(int(c) for c in self.robots)
        targets = tuple(int(c) for c in self.targets)
        object.__setattr__(self, "robots", robots)
        object.__setattr__(self, "targets", targets)
        _check_placement(self.grid, robots, targets)

    @property
    def N(self) -> int:
        return len(self.robots)

    @property
    def M(self) -> int:
        return len(self.targets)

    @property
    def L(self) -> int:
        return min(self.N, self.M)

    @property
    def balanced(self) -> bool:
        return self.N == self.M

    def replace(self, **changes) -> "ScenarioSpec":
        data = {
            "grid": self.grid,
            "robots": self.robots,
            "targets": self.targets,
            "cost_params": self.cost_params,
            "mpc_params": self.mpc_params,
            "seed": self.seed,
        }
        data.update(changes)
        return ScenarioSpec(**data)

    def to_dict(self) -> dict[str, Any]:
        g = self.grid
        return {
            "rows": g.rows,
            "cols": g.cols,
            "cell_size": g.cell_size,
            "origin": list(g.origin),
            "obstacles": [list(g.rc(c)) for c in sorted(g.obstacles)],
            "robots": [list(g.rc(c)) for c in self.robots],
            "targets": [list(g.rc(c)) for c in self.targets],
            "cost": self.cost_params.to_dict(),
            "mpc": self.mpc_params.to_dict(),
            "seed": self.seed,
        }


def _check_placement(grid: GridWorld, robots: Sequence[int], targets: Sequence[int]) -> None:
    seen: dict[int, str] = {c: "obstacle" for c in grid.obstacles}
    for kind, cells in (("robot", robots), ("target", targets)):
        for c in cells:
            grid.check(c)
            if c in seen:
                raise OverlapError(f"{kind} at cell {c} overlaps a {seen[c]}")
            seen[c] = kind


def expand_cells(items: Iterable[Any], rows: int, cols: int) -> list[int]:
    """Normalize ``[r, c]`` pairs and ``{r0, c0, r1, c1}`` rectangles to cell indices.

    Rectangles are inclusive on both corners.  Plain integers are taken as
    cell indices.
    """
    out: list[int] = []
    for item in items or ():
        if isinstance(item, dict):
            r0, c0, r1, c1 = (int(item[k]) for k in ("r0", "c0", "r1", "c1"))
            if r0 > r1:
                r0, r1 = r1, r0
            if c0 > c1:
                c0, c1 = c1, c0
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    out.append(_rc_index(r, c, rows, cols))
        elif isinstance(item, (int, np.integer)):
            k = int(item)
            if not 0 <= k < rows * cols:
                raise RangeError(f"cell {k} outside grid of {rows * cols} cells")
            out.append(k)
        else:
            r, c = item
            out.append(_rc_index(int(r), int(c), rows, cols))
    return out


def _rc_index(r: int, c: int, rows: int, cols: int) -> int:
    if not (0 <= r < rows and 0 <= c < cols):
        raise RangeError(f"(row={r}, col={c}) outside {rows}x{cols} grid")
    return r * cols + c


def build_grid(desc: dict[str, Any]) -> GridWorld:
    """Validated ``GridWorld`` from a scenario description.

    Robot and target placements in ``desc`` are checked against the
    obstacles and each other even though the grid itself only keeps the
    obstacle set.
    """
    rows, cols = int(desc["rows"]), int(desc["cols"])
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    grid = GridWorld(
        rows,
        cols,
        float(desc.get("cell_size", 1.0)),
        frozenset(expand_cells(desc.get("obstacles", ()), rows, cols)),
        tuple(desc["origin"]) if desc.get("origin") is not None else None,
    )
    robots = expand_cells(desc.get("robots", ()), rows, cols)
    targets = expand_cells(desc.get("targets", ()), rows, cols)
    for kind, cells in (("robot", robots), ("target", targets)):
        if len(set(cells)) != len(cells):
            raise OverlapError(f"two {kind}s share a cell")
    _check_placement(grid, robots, targets)
    return grid


def build_scenario(desc: dict[str, Any]) -> ScenarioSpec:
    """Scenario from a JSON-style description.

    A ``random`` block (see :func:`otnav.harness.random_scenario`) replaces
    the robot, target and obstacle lists with seeded random draws.
    """
    if desc.get("random"):
        from .harness import random_scenario

        spec = dict(desc["random"])
        return random_scenario(
            rows=int(desc["rows"]),
            cols=int(desc["cols"]),
            cell_size=float(desc.get("cell_size", 1.0)),
            cost_params=CostParams.from_dict(desc.get("cost")),
            mpc_params=MpcConfig.from_dict(desc.get("mpc")),
            **spec,
        )
    grid = build_grid(desc)
    return ScenarioSpec(
        grid=grid,
        robots=tuple(expand_cells(desc.get("robots", ()), grid.rows, grid.cols)),
        targets=tuple(expand_cells(desc.get("targets", ()), grid.rows, grid.cols)),
        cost_params=CostParams.from_dict(desc.get("cost")),
        mpc_params=MpcConfig.from_dict(desc.get("mpc")),
        seed=desc.get("seed"),
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return build_scenario(json.load(fh))


def save_scenario(scenario: ScenarioSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class Refinement:
    """A fine grid together with the fine-to-coarse projection."""

    grid: GridWorld
    coarse: GridWorld
    s: int
    fine_to_coarse: np.ndarray

    def project(self, fine_cells: Iterable[int]) -> list[int]:
        """Coarse cell sequence with consecutive duplicates collapsed."""
        out: list[int] = []
        for f in fine_cells:
            c = int(self.fine_to_coarse[f])
            if not out or out[-1] != c:
                out.append(c)
        return out

    def subcells(self, coarse_cell: int) -> list[int]:
        r, c = self.coarse.rc(coarse_cell)
        s, fc = self.s, self.grid.cols
        return sorted((r * s + i) * fc + (c * s + j) for i in range(s) for j in range(s))

    def center_subcell(self, coarse_cell: int) -> int:
        """Subcell containing the coarse cell centre (lower-right of the middle for even ``s``)."""
        r, c = self.coarse.rc(coarse_cell)
        return (r * self.s + self.s // 2) * self.grid.cols + c * self.s + self.s // 2


def refine(grid: GridWorld, s: int) -> Refinement:
    """Split every cell into ``s x s`` subcells; obstacles cover all their subcells."""
    if int(s) != s or s < 1:
        raise ValueError("subdivision factor must be a positive integer")
    s = int(s)
    rows, cols = grid.rows * s, grid.cols * s
    fr, fc = np.divmod(np.arange(rows * cols), cols)
    fine_to_coarse = (fr // s) * grid.cols + (fc // s)
    fine_to_coarse.flags.writeable = False
    obstacles = frozenset(int(k) for k in np.flatnonzero(~grid.free_mask[fine_to_coarse]))
    h = grid.cell_size / s
    origin = (grid.origin[0] - grid.cell_size / 2 + h / 2, grid.origin[1] - grid.cell_size / 2 + h / 2)
    fine = GridWorld(rows, cols, h, obstacles, origin)
    return Refinement(fine, grid, s, fine_to_coarse)


def refine_scenario(scenario: ScenarioSpec, s: int) -> tuple[ScenarioSpec, Refinement]:
    """Refined scenario; robots and targets snap to their coarse-centre subcells."""
    ref = refine(scenario.grid, s)
    fine = scenario.replace(
        grid=ref.grid,
        robots=tuple(ref.center_subcell(c) for c in scenario.robots),
        targets=tuple(ref.center_subcell(c) for c in scenario.targets),
    )
    return fine, ref
