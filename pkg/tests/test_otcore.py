import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otnav.config import CostParams
from otnav.errors import ImbalanceError, InfeasibleError
from otnav.grid import GridWorld, ScenarioSpec
from otnav.harness import brute_force_oracle
from otnav.otcore import (
    BALANCED, UNBALANCED, build_marginals, cost, cost_matrix, marginals_for, solve, solve_balanced,
    solve_unbalanced,
)
from otnav.plans import refine_replan

from scenarios import corridor, two_by_three, tiny_random

TWO_BY_THREE_COSTS = [
    [0, 1, 100, 1, 1, 1000],
    [1, 0, 1, 1, 1, 1],
    [100, 1, 0, 1000, 1, 1],
    [1, 1, 1000, 0, 1, 100],
    [1, 1, 1, 1, 0, 1],
    [1000, 1, 1, 100, 1, 0],
]


def test_two_by_three_marginals():
    m = build_marginals(two_by_three())
    assert m.mu.tolist() == [1, 1, 1, 1, 1, 0]
    assert m.nu.tolist() == [0, 1, 1, 1, 1, 1]


def test_extra_robot_marginals():
    m = build_marginals(two_by_three(extra_robot=True))
    assert m.nu.tolist() == [0, 0, 1, 1, 1, 1]


def test_empty_scenario_identity():
    sc = ScenarioSpec(GridWorld(2, 2), (), ())
    m = build_marginals(sc)
    assert m.mu.tolist() == m.nu.tolist() == [1, 1, 1, 1]
    plan = solve(sc)
    assert plan.moves == () and plan.total_cost == 0
    assert plan.fixed == (0, 1, 2, 3)


def test_obstacles_carry_no_mass():
    m = marginals_for(GridWorld(2, 2, obstacles=frozenset({3})), [0], [1])
    assert m.mu.tolist() == [1, 0, 1, 0]
    assert m.nu.tolist() == [0, 1, 1, 0]


def test_two_by_three_cost_entries():
    p, g = CostParams(), GridWorld(2, 3)
    assert cost(p, g, 0, 4) == 1
    assert cost(p, g, 0, 2) == 100
    assert cost(p, g, 0, 5) == 1000
    assert cost(p, g, 2, 3) == 1000
    assert all(cost(p, g, k, k) == 0 for k in range(6))


def test_two_by_three_full_matrix():
    C = cost_matrix(CostParams(jump_scope="dense"), GridWorld(2, 3))
    assert C.tolist() == TWO_BY_THREE_COSTS


def test_dense_view_prices_obstacles():
    C = cost_matrix(CostParams(jump_scope="dense"), GridWorld(2, 3, obstacles=frozenset({4})))
    assert C[0, 4] == 10**6
    assert C[4, 4] == 0


def test_cost_symmetric_on_4x4():
    p, g = CostParams(), GridWorld(4, 4)
    for i in range(16):
        for j in range(16):
            assert cost(p, g, i, j) == cost(p, g, j, i)


def test_jump_disabled_is_infinite():
    p = CostParams(jump_rule="disabled")
    assert cost(p, GridWorld(2, 3), 0, 2) == math.inf


def test_jump_cap_and_exact_mode():
    g = GridWorld(1, 20)
    assert cost(CostParams(), g, 0, 19) == 10**12
    assert cost(CostParams(jump_cap=None), g, 0, 19) == 10**19


def test_corner_cutting_toggle():
    g = GridWorld(2, 2, obstacles=frozenset({1}))
    assert cost(CostParams(), g, 0, 3) == 1
    assert cost(CostParams(corner_cutting=False), g, 0, 3) == 100


@pytest.mark.parametrize("backend", ["flow", "dense"])
def test_two_by_three_balanced(backend):
    plan = solve(two_by_three(), backend=backend)
    assert plan.mode == BALANCED
    assert plan.total_cost == 2
    moves = [(i, j) for i, j, _ in plan.moves]
    assert moves in ([(0, 4), (4, 5)], [(0, 1), (1, 5)])
    assert plan.moved_mass == 5


@pytest.mark.parametrize("backend", ["flow", "dense"])
def test_two_by_three_unbalanced(backend):
    plan = solve(two_by_three(extra_robot=True), backend=backend)
    assert plan.mode == UNBALANCED
    assert plan.total_cost == 1
    assert [(i, j) for i, j, _ in plan.moves] == [(1, 5)]
    assert plan.moved_mass == 4


def test_unbalanced_matches_balanced_when_even():
    sc = corridor()
    a = solve_balanced(sc.grid, build_marginals(sc), sc.cost_params)
    b = solve_unbalanced(sc.grid, build_marginals(sc), sc.cost_params)
    assert a.total_cost == b.total_cost


def test_twelve_robots_fourteen_targets():
    from otnav.harness import random_scenario

    sc = random_scenario(12, 16, 12, 14, obstacle_count=6, seed=4)
    plan = solve(sc)
    routed_targets = {j for _, j, _ in plan.moves if j in sc.targets}
    assert len(routed_targets) == 12
    assert len(set(sc.targets) - routed_targets) == 2


def test_imbalance_rejected():
    sc = two_by_three(extra_robot=True)
    with pytest.raises(ImbalanceError):
        solve_balanced(sc.grid, build_marginals(sc), sc.cost_params)


def test_corridor_without_jumps_is_infeasible():
    with pytest.raises(InfeasibleError):
        solve(corridor(jump_rule="disabled"))


def test_big_integer_costs_use_exact_path():
    g = GridWorld(1, 30, obstacles=frozenset(range(1, 29)))
    sc = ScenarioSpec(g, (0,), (29,), CostParams(jump_cap=None))
    plan = solve(sc)
    assert plan.total_cost == 10**29
    assert plan.moves == ((0, 29, 1),)


def test_row_and_column_sums():
    sc = two_by_three(extra_robot=True)
    plan = solve(sc)
    m = build_marginals(sc)
    assert np.all(plan.row_sums() <= m.mu)
    assert np.all(plan.col_sums() <= m.nu)
    assert plan.dense().sum() == 4


# (rows, cols, obstacles, robots, targets, jumps) -> optimum and number of optimal plans,
# as enumerated by the exhaustive oracle
FROZEN_OPTIMA = [
    ((3, 3, [2, 5], [3, 0, 7], [4], "on"), 1, 3),
    ((3, 3, [1, 8], [5, 2], [6, 4, 0], "off"), 3, 1),
    ((3, 3, [7], [3, 5], [6, 1], "dense"), 2, 1),
    ((3, 3, [], [5, 3, 8], [7, 4, 6], "on"), 3, 2),
    ((3, 3, [4], [7], [5, 3], "off"), 1, 2),
    ((3, 3, [], [0, 5, 8], [6, 1, 7], "dense"), 4, 4),
    ((3, 3, [], [0, 3, 6], [1, 5], "on"), 3, 7),
    ((3, 3, [3], [4, 5], [7], "off"), 1, 2),
    ((3, 3, [], [0, 7], [1, 4], "dense"), 2, 1),
    ((3, 3, [], [1], [7], "on"), 2, 3),
    ((3, 3, [1], [4, 5], [0, 2, 8], "off"), 2, 4),
    ((3, 3, [], [5], [7, 3], "dense"), 1, 1),
]


def _frozen(desc):
    rows, cols, obs, robots, targets, jumps = desc
    return ScenarioSpec(GridWorld(rows, cols, obstacles=frozenset(obs)), robots, targets, CostParams.from_jumps(jumps))


@pytest.mark.parametrize("desc,optimum,count", FROZEN_OPTIMA)
def test_frozen_optima(desc, optimum, count):
    sc = _frozen(desc)
    plan = solve(sc)
    assert plan.total_cost == optimum
    oracle = brute_force_oracle(sc)
    assert oracle.optimal_cost == optimum
    assert len(oracle.optimal_plans) == count
    assert plan.moves in {p.moves for p in oracle.optimal_plans}
    assert solve(sc, backend="dense").total_cost == optimum


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solver_matches_oracle(seed):
    sc = tiny_random(np.random.default_rng(seed))
    try:
        oracle = brute_force_oracle(sc)
    except InfeasibleError:
        with pytest.raises(InfeasibleError):
            solve(sc)
        return
    plan = solve(sc)
    assert plan.total_cost == oracle.optimal_cost
    assert plan.moves in {p.moves for p in oracle.optimal_plans}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_invariants(seed):
    rng = np.random.default_rng(seed)
    rows, cols = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    K = rows * cols
    perm = [int(x) for x in rng.permutation(K)]
    n_obs = int(rng.integers(0, K // 4 + 1))
    free = perm[n_obs:]
    n = int(rng.integers(0, min(5, len(free) // 2) + 1))
    m = int(rng.integers(0, min(5, len(free) - n) + 1))
    sc = ScenarioSpec(GridWorld(rows, cols, obstacles=frozenset(perm[:n_obs])), free[:n], free[n:n + m])
    plan = solve(sc)
    marg = build_marginals(sc)
    assert all(mass == 1 for _, _, mass in plan.moves)
    rs, cs = plan.row_sums(), plan.col_sums()
    if sc.balanced:
        assert np.array_equal(rs, marg.mu) and np.array_equal(cs, marg.nu)
    else:
        assert np.all(rs <= marg.mu) and np.all(cs <= marg.nu)
        assert rs.sum() == min(marg.mu.sum(), marg.nu.sum())
    # same input, same bytes
    assert solve(sc).to_dict() == plan.to_dict()
    if K <= 64:
        assert solve(sc, backend="dense").total_cost == plan.total_cost


def test_refinement_never_costs_more_in_world_units():
    sc = corridor()
    coarse_unit = solve(sc.replace(robots=(0,), targets=(4,))).total_cost
    fine = refine_replan(sc.replace(robots=(0,), targets=(4,)), 2)
    assert fine.world_cost <= coarse_unit
    assert refine_replan(sc, 2).world_cost <= solve(sc).total_cost


def test_solve_is_deterministic_across_calls():
    from otnav.harness import random_scenario

    sc = random_scenario(20, 30, 8, obstacle_count=10, seed=11)
    plans = [solve(sc).to_dict() for _ in range(3)]
    assert plans[0] == plans[1] == plans[2]
