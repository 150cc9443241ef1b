"""Command-line entry point: ``cutstop <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import bench
from .generators import FAMILIES, PRESETS, generate_many
from .hygro import HygroConfig, HygroParams, save_checkpoint
from .milp import read_instance, write_instance
from .policies import parse_policy
from .tree import SolveConfig, solve


def _solve_config(args) -> SolveConfig:
    return SolveConfig(
        time_limit=args.time_limit,
        node_limit=args.node_limit,
        depth_limit=args.depth_limit,
        seed=args.seed,
        clock=args.clock,
    )


def _add_solve_args(p):
    p.add_argument("--time-limit", type=float, default=300.0)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--depth-limit", type=int, default=0, help="deepest node governed by the chosen policy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clock", choices=("wall", "logical"), default="wall")


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for inst in generate_many(args.family, args.count, args.seed, preset=args.preset):
        write_instance(inst, out / f"{inst.name}.json")
    print(f"wrote {args.count} {args.family} instances to {out}")
    return 0


def cmd_solve(args) -> int:
    inst = read_instance(args.file)
    policy = parse_policy(args.policy, seed=args.seed)
    config = _solve_config(args)
    if args.trace:
        with open(args.trace, "w") as fh:
            config.trace = fh
            stats = solve(inst, policy, config)
    else:
        stats = solve(inst, policy, config)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    if args.reference not in names:
        names.insert(0, args.reference)
    policies = {n: parse_policy(n, seed=args.seed) for n in names}
    res = bench.run_benchmark(args.dir, policies, _solve_config(args), args.reference, workers=args.workers)
    print(res.table())
    if args.out:
        res.write_csv(args.out)
        Path(args.out).with_suffix(".summary.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    if res.failures:
        print(f"{res.failures} (instance, policy) pairs failed", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    instances = bench.load_instances(args.dir)
    curves = bench.sweep_rounds(instances, args.max_rounds, _solve_config(args), metric=args.metric)
    for cv in curves:
        print(f"{cv.instance}\targmin={cv.argmin}\tbest={cv.values.min():.6g}")
    if args.out:
        bench.write_sweep(curves, args.out, normalize=args.normalize)
    return 0


def cmd_train(args) -> int:
    from .es import EsConfig, SolveEvaluator, train

    cfg = json.loads(Path(args.config).read_text())
    es_keys = {f.name for f in fields(EsConfig)}
    es_cfg = EsConfig(**{k: v for k, v in cfg.items() if k in es_keys})
    solve_cfg = SolveConfig(clock="logical" if es_cfg.metric == "logical_rounds" else "wall", **cfg.get("solve", {}))
    hygro_cfg = HygroConfig(**cfg.get("hygro", {}))
    instances = bench.load_instances(cfg["instance_dir"])
    train_set, _ = bench.split_train_test(instances)
    init = HygroParams.random(hygro_cfg, seed=cfg.get("init_seed", es_cfg.seed))
    log_path = cfg.get("log")
    log_fh = open(log_path, "w") if log_path else None

    def log(entry):
        line = "\t".join(f"{k}={entry[k]!r}" for k in sorted(entry))
        print(line)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()

    try:
        evaluator = SolveEvaluator(hygro_cfg, solve_cfg, es_cfg.metric, es_cfg.penalty)
        res = train(es_cfg, train_set, init.theta, evaluator, log=log)
    finally:
        if log_fh:
            log_fh.close()
    save_checkpoint(HygroParams(hygro_cfg, res.theta), cfg["output"])
    print(f"initial {res.initial_score:.6g} best {res.best_score:.6g}; checkpoint {cfg['output']}")
    return 0


def cmd_scatter(args) -> int:
    hygro_vals = bench.read_values(args.hygro, column=args.column)
    curves = bench.read_sweep(args.sweep)
    thresholds = [int(t) for t in args.thresholds.split(",")]
    records = bench.export_scatter(hygro_vals, curves, thresholds)
    if args.out:
        bench.write_records(records, args.out)
    else:
        for r in records:
            print(f"{r['instance']}\t{r['threshold']}\t{r['p_hygro']:.6g}\t{r['p_best']:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutstop", description="Branch and cut with learned cut-loop stopping.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic instances as JSON")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(PRESETS["set_cover"]), default="desk")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve one instance (JSON or MPS)")
    p.add_argument("file")
    p.add_argument("--policy", default="default", help="kind[:k=v,...], e.g. fcr:t=10 or hygro:checkpoint=m.bin")
    p.add_argument("--trace", help="write per-node trace rows to this file")
    _add_solve_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="compare policies on a directory of instances")
    p.add_argument("dir")
    p.add_argument("--policies", required=True, help="comma-separated policy specs")
    p.add_argument("--reference", default="default")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    _add_solve_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="root-only fixed-round sweep")
    p.add_argument("dir")
    p.add_argument("--max-rounds", type=int, default=100)
    p.add_argument("--metric", choices=bench.METRICS, default="time")
    p.add_argument("--normalize", action="store_true", help="min-max normalize each curve in the output file")
    p.add_argument("--out")
    _add_solve_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train HYGRO with evolution strategies")
    p.add_argument("--config", required=True, help="JSON file with trainer fields, instance_dir and output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("scatter", help="pair HYGRO results with best swept values")
    p.add_argument("--hygro", required=True, help="CSV with instance and value columns")
    p.add_argument("--column", default="value")
    p.add_argument("--sweep", required=True, help="CSV written by the sweep command")
    p.add_argument("--thresholds", default="25,50,75,100")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scatter)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
