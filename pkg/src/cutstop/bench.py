"""Benchmark harness: policy comparison, round sweeps and scatter export."""
from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .milp import MilpInstance, read_instance
from .policies import FcrPolicy, parse_policy
from .tree import SolveConfig, solve

METRICS = ("time", "pdi", "logical_rounds")
SCATTER_THRESHOLDS = (25, 50, 75, 100)


def improvement(reference: float, value: float) -> float:
    """Percent reduction of ``value`` relative to ``reference``."""
    if reference == 0:
        return 0.0 if value == 0 else -math.inf
    return (reference - value) / reference * 100.0


def metric_of(stats, metric: str) -> float:
    if metric == "time":
        return float(stats.wall_time)
    if metric == "pdi":
        return float(stats.pdi)
    if metric == "logical_rounds":
        return float(stats.lp_solves)
    raise ValueError(f"unknown metric {metric!r}")


def load_instances(directory) -> list[MilpInstance]:
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".json", ".mps"))
    return [read_instance(p) for p in paths]


def name_hash(name: str) -> str:
    return hashlib.sha256(name.encode()).hexdigest()


def split_train_test(instances: Sequence[MilpInstance], train_fraction: float = 0.75):
    """Deterministic split: sort by a hash of the instance name, cut at 75%."""
    ordered = sorted(instances, key=lambda inst: (name_hash(inst.name), inst.name))
    cut = int(round(train_fraction * len(ordered)))
    return ordered[:cut], ordered[cut:]


# --------------------------------------------------------------------------
# policy comparison


@dataclass
class BenchRow:
    instance: str
    policy: str
    status: str
    time: float = math.nan
    pdi: float = math.nan
    lp_solves: float = math.nan
    nodes: float = math.nan
    objective: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class PolicySummary:
    policy: str
    n: int
    failures: int
    mean: dict
    std: dict
    improvement: dict


@dataclass
class BenchResult:
    rows: list
    summaries: dict
    reference: str
    metrics: tuple = ("time", "pdi")
    failures: int = 0

    def table(self) -> str:
        """Per-policy ``mean (std)`` and improvement over the reference."""
        head = ["policy"] + [f"{m} mean (std)" for m in self.metrics] + [f"{m} imprv %" for m in self.metrics] + ["failures"]
        lines = ["\t".join(head)]
        for name, s in self.summaries.items():
            cells = [name]
            cells += [f"{s.mean[m]:.4g} ({s.std[m]:.4g})" for m in self.metrics]
            cells += [f"{s.improvement[m]:.2f}" for m in self.metrics]
            cells.append(str(s.failures))
            lines.append("\t".join(cells))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        fields = ["instance", "policy", "status", "time", "pdi", "lp_solves", "nodes", "objective", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for r in self.rows:
                w.writerow([getattr(r, f) for f in fields])

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "failures": self.failures,
            "policies": {
                name: {"n": s.n, "failures": s.failures, "mean": s.mean, "std": s.std, "improvement": s.improvement}
                for name, s in self.summaries.items()
            },
        }


def _row_metric(row: BenchRow, metric: str) -> float:
    return {"time": row.time, "pdi": row.pdi, "logical_rounds": row.lp_solves}[metric]


def summarize(rows: Sequence[BenchRow], reference: str, metrics=("time", "pdi")) -> dict:
    """Aggregate rows per policy; improvements compare means."""
    names = list(dict.fromkeys(r.policy for r in rows))
    if reference not in names:
        raise ValueError(f"reference policy {reference!r} not among {names}")
    out = {}
    for name in names:
        mine = [r for r in rows if r.policy == name]
        good = [r for r in mine if r.ok]
        mean, std = {}, {}
        for m in metrics:
            vals = np.array([_row_metric(r, m) for r in good], dtype=float)
            mean[m] = float(vals.mean()) if vals.size else math.nan
            std[m] = float(vals.std()) if vals.size else math.nan
        out[name] = PolicySummary(name, len(mine), len(mine) - len(good), mean, std, {})
    ref = out[reference]
    for s in out.values():
        s.improvement = {m: improvement(ref.mean[m], s.mean[m]) for m in metrics}
    return out


def _bench_job(args):
    solve_fn, inst, label, policy, config = args
    try:
        st = solve_fn(inst, policy, config)
    except Exception as exc:  # recorded, not fatal
        return BenchRow(inst.name, label, "error", error=f"{type(exc).__name__}: {exc}")
    return BenchRow(
        inst.name, label, st.status, float(st.wall_time), float(st.pdi), float(st.lp_solves),
        float(st.nodes_processed), float(st.best_objective),
    )


def run_benchmark(
    instances,
    policies,
    solve_config: SolveConfig | None = None,
    reference: str = "default",
    *,
    metrics=("time", "pdi"),
    solve_fn: Callable = solve,
    workers: int = 1,
) -> BenchResult:
    """Solve every (instance, policy) pair and summarize.

    ``instances`` is a directory or a list of instances; ``policies`` maps
    labels to :class:`Policy` objects (or is a list of ``kind:k=v`` strings,
    labelled by the string).  ``solve_fn(instance, policy, config)`` must
    return an object with ``status``, ``wall_time``, ``pdi``,
    ``lp_solves``, ``nodes_processed`` and ``best_objective``.
    """
    if isinstance(instances, (str, Path)):
        instances = load_instances(instances)
    if not isinstance(policies, dict):
        policies = {p: parse_policy(p) if isinstance(p, str) else p for p in policies}
    if reference not in policies:
        raise ValueError(f"reference policy {reference!r} not in {list(policies)}")
    config = solve_config or SolveConfig()
    jobs = [(solve_fn, inst, label, pol, config) for inst in instances for label, pol in policies.items()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_bench_job, jobs))
    else:
        rows = [_bench_job(j) for j in jobs]
    summaries = summarize(rows, reference, metrics)
    return BenchResult(rows, summaries, reference, tuple(metrics), sum(not r.ok for r in rows))


# --------------------------------------------------------------------------
# round sweep and scatter export


@dataclass
class SweepCurve:
    instance: str
    values: np.ndarray  # values[j - 1] is the run with at most j root rounds
    reused: int = 0  # points copied from an identical earlier run

    @property
    def argmin(self) -> int:
        """Round cap (1-based) with the best value; first on ties."""
        return int(np.argmin(self.values)) + 1

    def normalized(self) -> np.ndarray:
        lo, hi = self.values.min(), self.values.max()
        if hi == lo:
            return np.zeros_like(self.values)
        return (self.values - lo) / (hi - lo)


def sweep_rounds(
    instances: Sequence[MilpInstance],
    max_rounds: int = 100,
    solve_config: SolveConfig | None = None,
    metric: str = "time",
    *,
    reuse: bool = True,
    solve_fn: Callable = solve,
) -> list[SweepCurve]:
    """Solve each instance with root-only FCR(t=j) for ``j = 1..max_rounds``.

    With ``reuse`` on, once the root loop stops before using its round
    allowance the remaining runs would be identical, so their measurement is
    repeated instead of re-solving.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    base = replace(solve_config or SolveConfig(), depth_limit=0, deep_cuts=False)
    curves = []
    for inst in instances:
        vals = np.empty(max_rounds)
        reused = 0
        j = 1
        while j <= max_rounds:
            st = solve_fn(inst, FcrPolicy(t=j), base)
            vals[j - 1] = metric_of(st, metric)
            if reuse and getattr(st, "root_rounds", j) < j:
                vals[j:] = vals[j - 1]
                reused = max_rounds - j
                break
            j += 1
        curves.append(SweepCurve(inst.name, vals, reused))
    return curves


def write_sweep(curves: Sequence[SweepCurve], path, normalize: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "rounds", "value"])
        for cv in curves:
            vals = cv.normalized() if normalize else cv.values
            for j, v in enumerate(vals, start=1):
                w.writerow([cv.instance, j, repr(float(v))])


def read_sweep(path) -> dict[str, np.ndarray]:
    rows: dict[str, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["instance"], {})[int(rec["rounds"])] = float(rec["value"])
    return {name: np.array([pts[j] for j in sorted(pts)]) for name, pts in rows.items()}


def export_scatter(hygro_values: dict, sweep_curves, thresholds=SCATTER_THRESHOLDS) -> list[dict]:
    """One record per (instance, threshold R): the HYGRO value and the best
    swept value over round caps ``1..R``."""
    if not isinstance(sweep_curves, dict):
        sweep_curves = {cv.instance: cv.values for cv in sweep_curves}
    thresholds = sorted(int(t) for t in thresholds)
    records = []
    for name, p_h in hygro_values.items():
        if name not in sweep_curves:
            raise KeyError(f"no sweep curve for instance {name!r}")
        curve = np.asarray(sweep_curves[name], dtype=float)
        if len(curve) < thresholds[-1]:
            raise ValueError(f"curve for {name!r} has {len(curve)} points, need {thresholds[-1]}")
        for i, r in enumerate(thresholds, start=1):
            records.append({"instance": name, "set": i, "threshold": r, "p_hygro": float(p_h), "p_best": float(curve[:r].min())})
    return records


def write_records(records: Sequence[dict], path) -> None:
    if not records:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]))
        w.writeheader()
        w.writerows(records)


def read_values(path, column: str = "value") -> dict[str, float]:
    """``instance,<column>`` table, e.g. a HYGRO result file for scatter export."""
    with open(path, newline="") as fh:
        return {rec["instance"]: float(rec[column]) for rec in csv.DictReader(fh)}
