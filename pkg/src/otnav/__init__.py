"""Optimal-transport multi-robot planning with contractive MPC tracking."""

from ._backend import BACKEND
from .config import CostParams, MpcConfig
from .errors import (
    DegenerateError, ImbalanceError, InfeasibleError, InfeasibleMpcError, MalformedPlanError,
    OtnavError, OverlapError, RangeError, StallError, TooLargeError,
)
from .grid import (
    GridWorld, Refinement, ScenarioSpec, build_grid, build_scenario, cell_center, load_scenario,
    locate, neighbors, refine, refine_scenario, save_scenario,
)
from .otcore import (
    Marginals, TransportPlan, build_marginals, cost, cost_matrix, solve, solve_balanced,
    solve_unbalanced,
)
from .plans import (
    Chain, PathSystem, check_practical_feasibility, extract_chains, refine_replan,
    refine_until_feasible, simple_replan, check_plan_guarantees,
)
from .trajectory import ReferenceTrajectory, interpolate, sample, sample_many
from .mpc import (
    ControlInput, MpcSolution, ObstacleEvent, RobotState, SimulationLog, TrackingError,
    run_mpc_ot, solve_mpc, step_dynamics,
)
from .harness import OracleResult, bench, brute_force_oracle, metrics, random_scenario, render_svg

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CostParams",
    "MpcConfig",
    "DegenerateError",
    "ImbalanceError",
    "InfeasibleError",
    "InfeasibleMpcError",
    "MalformedPlanError",
    "OtnavError",
    "OverlapError",
    "RangeError",
    "StallError",
    "TooLargeError",
    "GridWorld",
    "Refinement",
    "ScenarioSpec",
    "build_grid",
    "build_scenario",
    "cell_center",
    "load_scenario",
    "locate",
    "neighbors",
    "refine",
    "refine_scenario",
    "save_scenario",
    "Marginals",
    "TransportPlan",
    "build_marginals",
    "cost",
    "cost_matrix",
    "solve",
    "solve_balanced",
    "solve_unbalanced",
    "Chain",
    "PathSystem",
    "check_practical_feasibility",
    "extract_chains",
    "refine_replan",
    "refine_until_feasible",
    "simple_replan",
    "check_plan_guarantees",
    "ReferenceTrajectory",
    "interpolate",
    "sample",
    "sample_many",
    "ControlInput",
    "MpcSolution",
    "ObstacleEvent",
    "RobotState",
    "SimulationLog",
    "TrackingError",
    "run_mpc_ot",
    "solve_mpc",
    "step_dynamics",
    "OracleResult",
    "bench",
    "brute_force_oracle",
    "metrics",
    "random_scenario",
    "render_svg",
]
