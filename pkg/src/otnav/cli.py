"""Command line entry point: ``otnav <command> ...``.

Results go to stdout as JSON.  On failure the process exits nonzero and
writes one JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import _backend
from .errors import (
    ImbalanceError, InfeasibleError, InfeasibleMpcError, MalformedPlanError, OtnavError,
    OverlapError, RangeError, StallError, TooLargeError,
)
from .grid import ScenarioSpec, load_scenario

EXIT_CODES = {
    "usage": 2,
    "input": 3,
    "infeasible": 4,
    "internal": 5,
    "io": 6,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, (InfeasibleError, StallError, InfeasibleMpcError)):
        return "infeasible"
    if isinstance(exc, MalformedPlanError):
        return "internal"
    if isinstance(exc, (RangeError, OverlapError, ImbalanceError, TooLargeError, ValueError, KeyError, TypeError)):
        return "input"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _emit(obj: Any, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _scenario(args) -> ScenarioSpec:
    sc = load_scenario(args.scenario)
    if getattr(args, "jumps", None):
        sc = sc.replace(cost_params=sc.cost_params.with_jumps(args.jumps))
    return sc


def cmd_plan(args) -> dict:
    from .otcore import solve

    sc = _scenario(args)
    plan = solve(sc, unbalanced=True if args.unbalanced else None, backend=args.backend)
    out = plan.to_dict()
    out["solve_time"] = plan.solve_time
    return out


def cmd_paths(args) -> dict:
    from .otcore import solve
    from .plans import check_practical_feasibility, extract_chains, check_plan_guarantees

    sc = _scenario(args)
    plan = solve(sc, backend=args.backend)
    system = extract_chains(plan, sc)
    ok, bad = check_practical_feasibility(plan)
    report = check_plan_guarantees(plan, sc)
    out = system.to_dict()
    out["jump_moves"] = [[i, j, c] for i, j, c in bad]
    out["guarantees"] = {
        "integral": report.integral,
        "disjoint": report.disjoint,
        "coverage": report.coverage,
        "detail": report.detail,
    }
    return out


def cmd_replan(args) -> dict:
    from .plans import refine_replan, refine_until_feasible, simple_replan

    sc = _scenario(args)
    if args.mode == "simple":
        waves = simple_replan(sc, backend=args.backend)
        return {"mode": "simple", "waves": [w.to_dict() for w in waves]}
    res = refine_replan(sc, args.s, backend=args.backend) if args.s else refine_until_feasible(sc, backend=args.backend)
    return {
        "mode": "refine",
        "s": res.s,
        "fine_grid": {"rows": res.scenario.grid.rows, "cols": res.scenario.grid.cols},
        "fine_paths": res.paths.to_dict(),
        "coarse_projection": [list(p) for p in res.projected],
        "world_cost": res.world_cost,
    }


def cmd_simulate(args) -> dict:
    from .harness import metrics, render_svg
    from .mpc import load_events, run_mpc_ot

    sc = _scenario(args)
    events = load_events(args.events, sc.grid) if args.events else []
    log = run_mpc_ot(sc, events, backend=args.backend, max_time=args.max_time)
    summary = metrics(log, sc.mpc_params.transition_time)
    summary["finished"] = log.finished
    summary["final_distance_cells"] = [None if np.isnan(v) else float(v) for v in log.final_errors()]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        log.write_csv(out / "log.csv")
        log.write_epochs_csv(out / "epochs.csv")
        log.write_events(out / "events.json")
        render_svg(sc.grid, log, out / "simulation.svg", scenario=sc)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
        summary["out"] = str(out)
    if args.strict and not log.finished:
        raise InfeasibleError("simulation ended before every robot reached its target")
    return summary


def cmd_oracle(args) -> dict:
    from .harness import brute_force_oracle

    sc = _scenario(args)
    res = brute_force_oracle(sc, unbalanced=True if args.unbalanced else None, max_free=args.max_free)
    return {
        "mode": res.mode,
        "optimal_cost": res.optimal_cost,
        "explored": res.explored,
        "optimal_plans": [[[i, j] for i, j, _ in p.moves] for p in res.optimal_plans],
    }


def cmd_render(args) -> dict:
    from .harness import render_svg
    from .otcore import solve
    from .plans import extract_chains

    if not args.out:
        raise ValueError("render needs --out")
    sc = _scenario(args)
    if args.simulate or args.events:
        from .mpc import load_events, run_mpc_ot

        events = load_events(args.events, sc.grid) if args.events else []
        item = run_mpc_ot(sc, events, backend=args.backend)
    else:
        item = extract_chains(solve(sc, backend=args.backend), sc)
    svg = render_svg(sc.grid, item, args.out, scenario=sc)
    return {"out": args.out, "bytes": len(svg.encode())}


def cmd_bench(args) -> dict:
    from .harness import bench

    sizes = [tuple(int(x) for x in s.lower().split("x")) for s in args.sizes]
    res = bench(sizes=sizes, robots=args.robots, repeat=args.repeat, seed=args.seed)
    res["default_backend"] = _backend.BACKEND
    return res


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="otnav", description="Transport-based multi-robot planning and tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, help_text, fn, backend=True, jumps=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("scenario", help="scenario JSON file")
        if jumps:
            sp.add_argument("--jumps", help="on | off | dense | radius=R")
        if backend:
            sp.add_argument("--backend", choices=("flow", "dense"), default="flow")
        sp.add_argument("--out", help="also write the result here")
        sp.set_defaults(func=fn)
        return sp

    sp = scenario_cmd("plan", "solve the transport problem", cmd_plan)
    sp.add_argument("--unbalanced", action="store_true", help="force the unbalanced form")

    scenario_cmd("paths", "extract robot chains and check them", cmd_paths)

    sp = scenario_cmd("replan", "simple replan waves or refinement", cmd_replan)
    sp.add_argument("--mode", choices=("simple", "refine"), default="simple")
    sp.add_argument("--s", type=int, default=None, help="subdivision factor (default: escalate 2, 3, 4)")

    sp = scenario_cmd("simulate", "run the plan/track loop", cmd_simulate)
    sp.add_argument("--events", help="obstacle events JSON file")
    sp.add_argument("--max-time", type=float, default=None)
    sp.add_argument("--strict", action="store_true", help="fail unless every robot arrives")
    sp.set_defaults(out_is_dir=True)

    sp = scenario_cmd("oracle", "exhaustive optimum for tiny scenarios", cmd_oracle, backend=False)
    sp.add_argument("--unbalanced", action="store_true")
    sp.add_argument("--max-free", type=int, default=9)

    sp = scenario_cmd("render", "draw the scenario and its paths as SVG", cmd_render)
    sp.add_argument("--simulate", action="store_true", help="draw a simulation run instead of chains")
    sp.add_argument("--events", help="obstacle events JSON file (implies --simulate)")

    sp = sub.add_parser("bench", help="time compiled against pure-Python kernels")
    sp.add_argument("--sizes", nargs="+", default=["10x15", "20x30", "50x75"], help="ROWSxCOLS grids")
    sp.add_argument("--robots", type=int, default=10)
    sp.add_argument("--repeat", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def _fail(kind: str, exc: BaseException, command: str | None) -> int:
    record = {"error": type(exc).__name__, "category": kind, "message": str(exc), "command": command}
    print(json.dumps(record), file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, None)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except (OtnavError, ValueError, KeyError, TypeError, OSError) as exc:
        return _fail(_category(exc), exc, args.command)
    if isinstance(result, dict):
        result.setdefault("elapsed", time.perf_counter() - t0)
    out = None if getattr(args, "out_is_dir", False) or args.command == "render" else getattr(args, "out", None)
    _emit(result, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
