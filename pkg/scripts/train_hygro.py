"""Train HYGRO with evolution strategies, then score it on the held-out split.

Config keys: every EsConfig field, ``instance_dir``, ``output``, optional
``log``, ``test_dir`` (otherwise ``instance_dir`` is split 75/25), ``solve`` (SolveConfig fields) and ``hygro`` (HygroConfig fields).
"""
import argparse
import json
from dataclasses import fields
from pathlib import Path

from cutstop.bench import load_instances, split_train_test
from cutstop.es import EsConfig, SolveEvaluator, evaluate_candidate, train
from cutstop.hygro import HygroConfig, HygroParams, save_checkpoint
from cutstop.tree import SolveConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config")
    args = ap.parse_args()
    cfg = json.loads(Path(args.config).read_text())

    es_cfg = EsConfig(**{k: v for k, v in cfg.items() if k in {f.name for f in fields(EsConfig)}})
    solve_cfg = SolveConfig(clock="logical" if es_cfg.metric == "logical_rounds" else "wall", **cfg.get("solve", {}))
    hygro_cfg = HygroConfig(**cfg.get("hygro", {}))
    if cfg.get("test_dir"):
        train_set, test_set = load_instances(cfg["instance_dir"]), load_instances(cfg["test_dir"])
    else:
        train_set, test_set = split_train_test(load_instances(cfg["instance_dir"]))
    init = HygroParams.random(hygro_cfg, seed=cfg.get("init_seed", es_cfg.seed))

    log_fh = open(cfg["log"], "w") if cfg.get("log") else None

    def log(entry):
        line = "\t".join(f"{k}={entry[k]!r}" for k in sorted(entry))
        print(line, flush=True)
        if log_fh:
            log_fh.write(line + "\n")

    evaluator = SolveEvaluator(hygro_cfg, solve_cfg, es_cfg.metric, es_cfg.penalty)
    res = train(es_cfg, train_set, init.theta, evaluator, log=log)
    if log_fh:
        log_fh.close()
    best = HygroParams(hygro_cfg, res.theta)
    save_checkpoint(best, cfg["output"])
    print(f"train: initial {res.initial_score:.4g}, selected {res.best_score:.4g}")
    if test_set:
        before = evaluate_candidate(init, test_set, solve_cfg, es_cfg.metric, es_cfg.penalty)
        after = evaluate_candidate(best, test_set, solve_cfg, es_cfg.metric, es_cfg.penalty)
        print(f"test:  initial {before:.4g}, selected {after:.4g}")


if __name__ == "__main__":
    main()
