"""Compiled against pure-Python kernels: flow solves and MPC solves.

Usage: python3 benchmarks/bench_kernels.py [--sizes 10x15 20x30 50x75] [--robots 10] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json

from otnav import _backend
from otnav.harness import bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", default=["10x15", "20x30", "50x75"])
    ap.add_argument("--robots", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print the raw result instead of a table")
    args = ap.parse_args()

    sizes = [tuple(int(x) for x in s.lower().split("x")) for s in args.sizes]
    res = bench(sizes=sizes, robots=args.robots, repeat=args.repeat, seed=args.seed)
    if args.json:
        print(json.dumps(res, indent=2))
        return

    print(f"default backend: {_backend.BACKEND}")
    compiled = "compiled" in res["backends"]
    print(f"{'grid':>10} {'K':>6} {'python ms':>10} {'compiled ms':>12} {'speedup':>8} agree")
    for e in res["flow"]:
        grid = f"{e['rows']}x{e['cols']}"
        c = f"{e['compiled'] * 1e3:12.2f}" if compiled else f"{'-':>12}"
        s = f"{e['python'] / e['compiled']:8.1f}" if compiled else f"{'-':>8}"
        print(f"{grid:>10} {e['K']:>6} {e['python'] * 1e3:10.2f} {c} {s} {e['agree']}")
    mpc = res["mpc"]
    line = f"mpc solve: python {mpc['python'] * 1e3:.2f} ms"
    if compiled:
        line += f", compiled {mpc['compiled'] * 1e3:.2f} ms, speedup {res['speedup']['mpc']:.1f}x"
    print(line)


if __name__ == "__main__":
    main()
