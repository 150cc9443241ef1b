"""Root-only fixed-round sweep: one performance curve per instance.

Reports where each curve bottoms out, which shows how much the best number
of root rounds varies between instances and families.
"""
import argparse

import numpy as np

from cutstop.bench import load_instances, sweep_rounds, write_sweep
from cutstop.tree import SolveConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dir")
    ap.add_argument("--max-rounds", type=int, default=100)
    ap.add_argument("--metric", choices=("time", "pdi", "logical_rounds"), default="pdi")
    ap.add_argument("--clock", choices=("wall", "logical"), default="logical")
    ap.add_argument("--out", default="sweep.csv")
    ap.add_argument("--normalize", action="store_true")
    args = ap.parse_args()

    curves = sweep_rounds(load_instances(args.dir), args.max_rounds, SolveConfig(clock=args.clock), metric=args.metric)
    best = np.array([cv.argmin for cv in curves])
    for cv in curves:
        print(f"{cv.instance}\targmin={cv.argmin}\tmin={cv.values.min():.6g}\tmax={cv.values.max():.6g}")
    print(f"best round cap: median {np.median(best):.0f}, range {best.min()}..{best.max()}")
    write_sweep(curves, args.out, normalize=args.normalize)


if __name__ == "__main__":
    main()
