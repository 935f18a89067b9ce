from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otnav.errors import InfeasibleError, MalformedPlanError, StallError
from otnav.grid import GridWorld, ScenarioSpec
from otnav.otcore import solve
from otnav.plans import (
    chain_edges, check_practical_feasibility, extract_chains, hop_distances, plan_edges,
    refine_replan, refine_until_feasible, robot_hops, simple_replan, check_plan_guarantees,
)

from scenarios import corridor, detour, feasible_random, two_by_three


def test_two_by_three_single_chain():
    sc = two_by_three()
    system = extract_chains(solve(sc), sc)
    assert len(system) == 1
    ch = system.chains[0]
    assert ch.cells in ((0, 4, 5), (0, 1, 5))
    assert ch.cost == 2 and system.practically_feasible


def test_unbalanced_two_by_three_routes_one_robot():
    sc = two_by_three(extra_robot=True)
    system = extract_chains(solve(sc), sc)
    assert [(ch.robot, ch.cells) for ch in system.chains] == [(1, (1, 5))]


def test_detour_chains():
    sc = detour()
    system = extract_chains(solve(sc), sc)
    chains = system.by_robot()
    assert chains[1].cells == (11, 12, 13)
    assert chains[1].cost == 2
    assert len(chains[0].cells) == 7
    assert system.total_cost == 8
    assert system.practically_feasible


def test_corridor_needs_jump_but_keeps_guarantees():
    sc = corridor()
    plan = solve(sc)
    ok, bad = check_practical_feasibility(plan)
    assert not ok
    assert [c for _, _, c in bad] == [100]
    assert check_plan_guarantees(plan, sc).ok
    assert not extract_chains(plan, sc).practically_feasible


def test_chain_edges_partition_plan():
    sc = detour()
    plan = solve(sc)
    system = extract_chains(plan, sc)
    assert chain_edges(system) == plan_edges(plan)
    assert robot_hops(system).tolist() == [6, 2]


def test_cells_disjoint_across_chains():
    sc = detour()
    cells = extract_chains(solve(sc), sc).cells()
    assert len(cells) == len(set(cells))


def test_malformed_non_unit_mass():
    sc = two_by_three()
    plan = solve(sc)
    broken = replace(plan, moves=((0, 4, 2), (4, 5, 1)))
    with pytest.raises(MalformedPlanError):
        extract_chains(broken, sc)
    report = check_plan_guarantees(broken, sc)
    assert not report.integral and report.fractional_moves == ((0, 4, 2),)


def test_malformed_double_send():
    sc = two_by_three()
    broken = replace(solve(sc), moves=((0, 4, 1), (0, 1, 1)))
    with pytest.raises(MalformedPlanError):
        extract_chains(broken, sc)
    assert not check_plan_guarantees(broken, sc).disjoint


def test_malformed_dead_end():
    sc = two_by_three()
    broken = replace(solve(sc), moves=((0, 4, 1),))
    with pytest.raises(MalformedPlanError):
        extract_chains(broken, sc)
    report = check_plan_guarantees(broken, sc)
    assert not report.coverage and report.routed == 0


def test_malformed_orphan_move():
    sc = two_by_three()
    broken = replace(solve(sc), moves=((0, 1, 1), (1, 5, 1), (3, 4, 1)))
    with pytest.raises(MalformedPlanError):
        extract_chains(broken, sc)


def test_overlap_reported():
    sc = ScenarioSpec(GridWorld(1, 5), (0, 4), (2, 3))
    broken = replace(solve(sc), moves=((0, 1, 1), (1, 2, 1), (4, 3, 1)), fixed=(1, 2, 3))
    report = check_plan_guarantees(broken, sc)
    assert not report.disjoint
    assert 1 in report.overlap_cells


def test_hop_distances_respect_walls():
    # robots do not block, walls do
    d = hop_distances(detour(), 10)
    assert d[13] == 3 and d[14] == 4
    assert 6 not in d
    from otnav.config import CostParams

    g = GridWorld(2, 2, obstacles=frozenset({1}))
    assert hop_distances(ScenarioSpec(g, (0,), (3,)), 0)[3] == 1
    assert hop_distances(ScenarioSpec(g, (0,), (3,), CostParams(corner_cutting=False)), 0)[3] == 2


def test_simple_replan_detour_waves():
    waves = simple_replan(detour())
    assert [[ch.robot for ch in w.chains] for w in waves] == [[1], [0]]
    assert waves[0].chains[0].cost == 2
    assert waves[1].chains[0].cost == 4
    assert waves[1].chains[0].cells[-1] == 14


def test_simple_replan_corridor():
    waves = simple_replan(corridor())
    done = sorted((ch.robot, ch.target) for w in waves for ch in w.chains)
    assert [r for r, _ in done] == [0, 1]
    assert sorted(t for _, t in done) == [0, 1]
    assert all(w.practically_feasible for w in waves)


def test_simple_replan_stalls_without_unit_chain():
    g = GridWorld(1, 5, obstacles=frozenset({2}))
    with pytest.raises((StallError, InfeasibleError)):
        simple_replan(ScenarioSpec(g, (0,), (4,)))


def test_simple_replan_empty():
    assert simple_replan(ScenarioSpec(GridWorld(2, 2), (), ())) == []


def test_refinement_fixes_corridor():
    res = refine_until_feasible(corridor())
    assert res.s == 2
    assert res.paths.practically_feasible
    assert res.world_cost == 8.0
    for proj, start, goal in zip(res.projected, (0, 10), (4, 14)):
        assert proj[0] == start and proj[-1] == goal


def test_refinement_gives_up():
    g = GridWorld(1, 5, obstacles=frozenset({2}))
    with pytest.raises(InfeasibleError):
        refine_until_feasible(ScenarioSpec(g, (0,), (4,)), factors=(2,))


def test_refined_projection_walks_adjacent_cells():
    sc = detour()
    res = refine_replan(sc, 3)
    for proj in res.projected:
        for a, b in zip(proj[:-1], proj[1:]):
            ra, ca = sc.grid.rc(a)
            rb, cb = sc.grid.rc(b)
            assert max(abs(ra - rb), abs(ca - cb)) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chains_from_random_plans(seed):
    sc = feasible_random(np.random.default_rng(seed))
    plan = solve(sc)
    report = check_plan_guarantees(plan, sc)
    assert report.ok, report.detail
    system = extract_chains(plan, sc)
    assert len(system) == sc.L
    assert chain_edges(system) == plan_edges(plan)
    cells = system.cells()
    assert len(cells) == len(set(cells))
    assert system.total_cost == plan.total_cost
    assert system.practically_feasible == check_practical_feasibility(plan)[0]
    for ch in system.chains:
        assert ch.cells[0] == sc.robots[ch.robot]
        assert ch.cells[-1] == sc.targets[ch.target]
