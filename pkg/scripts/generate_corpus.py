"""Write train/test corpora for the three instance families."""
import argparse
from pathlib import Path

from cutstop.bench import split_train_test
from cutstop.generators import FAMILIES, PRESETS, generate_many
from cutstop.milp import write_instance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data")
    ap.add_argument("--count", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--preset", choices=sorted(PRESETS["mis"]), default="desk")
    ap.add_argument("--families", default=",".join(FAMILIES))
    args = ap.parse_args()

    for k, family in enumerate(args.families.split(",")):
        instances = generate_many(family, args.count, args.seed + k, preset=args.preset)
        train, test = split_train_test(instances)
        for part, items in (("train", train), ("test", test)):
            d = Path(args.out) / args.preset / family / part
            d.mkdir(parents=True, exist_ok=True)
            for inst in items:
                write_instance(inst, d / f"{inst.name}.json")
        print(f"{family}: {len(train)} train, {len(test)} test")


if __name__ == "__main__":
    main()
