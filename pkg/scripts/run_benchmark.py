"""Compare stopping policies on a directory of instances.

Prints the per-policy mean (std) table and writes per-instance rows.  Pass
``--checkpoint`` to include a trained HYGRO network.
"""
import argparse
import json
from pathlib import Path

from cutstop.bench import run_benchmark
from cutstop.policies import parse_policy
from cutstop.tree import SolveConfig

BASELINES = ["default", "nocuts", "immediate", "fcn:k=200", "fcr:t=100", "random1", "random2"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dir")
    ap.add_argument("--checkpoint")
    ap.add_argument("--time-limit", type=float, default=60.0)
    ap.add_argument("--clock", choices=("wall", "logical"), default="wall")
    ap.add_argument("--depth-limit", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="bench.csv")
    args = ap.parse_args()

    specs = list(BASELINES)
    if args.checkpoint:
        specs.append(f"hygro:checkpoint={args.checkpoint}")
    policies = {s: parse_policy(s, seed=0) for s in specs}
    config = SolveConfig(time_limit=args.time_limit, clock=args.clock, depth_limit=args.depth_limit)
    res = run_benchmark(args.dir, policies, config, "default", workers=args.workers)
    print(res.table())
    res.write_csv(args.out)
    Path(args.out).with_suffix(".summary.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
