"""Best-first branch-and-cut driver."""
from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, TextIO

import numpy as np

from .cuts import CutLoopResult, NodeLP, StallState, run_cut_loop
from .milp import DEFAULT_TOLERANCES, MilpInstance, SolverTolerances
from .policies import NodeContext, Policy, SrdPolicy
from .simplex import LpStatus, WarmStart

INF = math.inf


class SolveError(RuntimeError):
    pass


@dataclass
class SolveConfig:
    time_limit: float = 300.0
    node_limit: int | None = None
    lp_limit: int | None = None  # stop once this many LPs have been solved
    depth_limit: int = 0
    seed: int = 0
    tol: SolverTolerances = DEFAULT_TOLERANCES
    clock: str = "wall"  # or "logical": one tick per LP solve
    deep_cuts: bool = True  # below depth_limit, cut with SRD(s=1); False = no cuts
    max_per_round: int = 10
    hard_round_cap: int = 200
    audit: bool = False
    trace: TextIO | None = None

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.clock not in ("wall", "logical"):
            raise ValueError("clock must be 'wall' or 'logical'")
        if self.depth_limit < 0:
            raise ValueError("depth_limit must be >= 0")


FALLBACK_POLICY = SrdPolicy(s=1)


@dataclass(eq=False)
class Node:
    node_lp: NodeLP
    depth: int = 0
    bound: float = -INF
    id: int = -1
    parent: int | None = None
    stall_state: StallState | None = None
    warm: WarmStart | None = None


@dataclass
class SolveStats:
    status: str = "running"
    best_objective: float = INF
    best_x: np.ndarray | None = None
    dual_bound: float = -INF
    nodes_processed: int = 0
    cut_rounds: int = 0
    cuts_added: int = 0
    wall_time: float = 0.0
    lp_solves: int = 0
    pdi: float = 0.0
    event_log: list = field(default_factory=list)
    bound_warnings: int = 0
    monotone_violations: int = 0
    decisions: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    root_rounds: int = 0
    root_stop_reason: str | None = None

    @property
    def primal_bound(self) -> float:
        return self.best_objective

    def to_dict(self, include_audit: bool = False) -> dict:
        out = {
            "status": self.status,
            "best_objective": _jnum(self.best_objective),
            "best_x": None if self.best_x is None else [float(v) for v in self.best_x],
            "dual_bound": _jnum(self.dual_bound),
            "nodes_processed": self.nodes_processed,
            "cut_rounds": self.cut_rounds,
            "cuts_added": self.cuts_added,
            "wall_time": self.wall_time,
            "lp_solves": self.lp_solves,
            "pdi": self.pdi,
            "bound_warnings": self.bound_warnings,
            "monotone_violations": self.monotone_violations,
            "decisions": self.decisions,
            "root_rounds": self.root_rounds,
            "root_stop_reason": self.root_stop_reason,
            "event_log": [[t, _jnum(p), _jnum(d)] for t, p, d in self.event_log],
        }
        if include_audit:
            out["audit"] = self.audit
        return out

    def to_json(self, deterministic: bool = False) -> str:
        d = self.to_dict()
        if deterministic:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


def _jnum(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def record_bounds(stats: SolveStats, now: float, primal: float, dual: float) -> None:
    """Append a bound event, clipping regressions so both bounds stay monotone."""
    if stats.event_log:
        last_t, last_p, last_d = stats.event_log[-1]
        if now < last_t:
            raise ValueError(f"event time went backwards: {now} < {last_t}")
        if primal > last_p:
            if primal - last_p > 1e-9:
                stats.bound_warnings += 1
            primal = last_p
        if dual < last_d:
            if last_d - dual > 1e-9:
                stats.bound_warnings += 1
            dual = last_d
    stats.event_log.append((now, primal, dual))


def primal_dual_gap(primal: float, dual: float) -> float:
    if not (math.isfinite(primal) and math.isfinite(dual)):
        return 1.0
    if primal * dual < 0:
        return 1.0
    gap = abs(primal - dual) / max(abs(primal), abs(dual), 1e-10)
    return min(max(gap, 0.0), 1.0)


def compute_pdi(event_log, end_time: float) -> float:
    """Integral of the primal-dual gap over the piecewise-constant event log."""
    if not event_log:
        raise ValueError("empty event log")
    if end_time < event_log[-1][0]:
        raise ValueError("end_time precedes the last event")
    total = 0.0
    for (t0, p, d), nxt in zip(event_log, list(event_log[1:]) + [(end_time, None, None)]):
        total += primal_dual_gap(p, d) * (nxt[0] - t0)
    return total


def branching_variable(x, integer_mask, tol: SolverTolerances = DEFAULT_TOLERANCES) -> int:
    x = np.asarray(x, dtype=float)
    frac = np.where(integer_mask, np.abs(x - np.round(x)), 0.0)
    j = int(np.argmax(frac))  # first maximum = lowest index
    if frac[j] <= tol.integrality:
        raise ValueError("cannot branch on an integral solution")
    return j


def branch(node: Node, lp, tol: SolverTolerances = DEFAULT_TOLERANCES) -> tuple[Node, Node]:
    """Most-fractional branching; children inherit the node's local cuts."""
    j = branching_variable(lp.x, node.node_lp.integer_mask, tol)
    v = lp.x[j]
    bound = lp.objective_value
    warm = WarmStart.from_solution(lp, node.node_lp.n_rows)
    low = Node(node.node_lp.with_bounds(j, upper=math.floor(v)), node.depth + 1, bound, parent=node.id)
    high = Node(node.node_lp.with_bounds(j, lower=math.ceil(v)), node.depth + 1, bound, parent=node.id)
    low.warm = high.warm = warm
    return low, high


class _Clock:
    def __init__(self, mode: str):
        self.mode = mode
        self.start = time.perf_counter()
        self.ticks = 0

    def tick(self):
        self.ticks += 1

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def now(self) -> float:
        return float(self.ticks) if self.mode == "logical" else self.elapsed()


def solve(instance: MilpInstance, policy: Policy, config: SolveConfig | None = None) -> SolveStats:
    """Branch and cut.

    The stopping ``policy`` governs nodes up to ``config.depth_limit``;
    deeper nodes use SRD with ``s=1`` (or no cutting if
    ``config.deep_cuts`` is off).  Incumbents only come from integral LP
    solutions.
    """
    config = config or SolveConfig()
    tol = config.tol
    clock = _Clock(config.clock)
    rng = np.random.default_rng(config.seed)
    stats = SolveStats()
    integral_obj = instance.objective_is_integral()
    counter = itertools.count()
    ids = itertools.count()

    def prunable(bound: float) -> bool:
        if not math.isfinite(stats.best_objective):
            return False
        if integral_obj:
            return bound > stats.best_objective - 1.0 + 1e-6
        return bound >= stats.best_objective - 1e-9 * max(1.0, abs(stats.best_objective))

    def global_dual() -> float:
        open_min = heap[0][0] if heap else INF
        return min(open_min, stats.best_objective)

    def log_bounds():
        record_bounds(stats, clock.now(), stats.best_objective, global_dual())

    def prune(node, bound, why):
        if config.audit:
            stats.pruned.append(
                {"id": node.id, "lower": node.node_lp.lower.copy(), "upper": node.node_lp.upper.copy(), "bound": bound, "why": why}
            )

    def update_incumbent(x):
        x = np.array(x, dtype=float)
        imask = instance.integer_mask
        x[imask] = np.round(x[imask])
        value = float(instance.objective @ x)
        if value < stats.best_objective:
            stats.best_objective = value
            stats.best_x = x

    root = Node(NodeLP.from_instance(instance), depth=0, bound=-INF, id=next(ids))
    heap = [(root.bound, next(counter), root)]
    record_bounds(stats, clock.now(), INF, -INF)
    status = None

    while heap:
        if clock.elapsed() >= config.time_limit:
            status = "time_limit"
            break
        if config.node_limit is not None and stats.nodes_processed >= config.node_limit:
            status = "node_limit"
            break
        if config.lp_limit is not None and stats.lp_solves >= config.lp_limit:
            status = "lp_limit"
            break
        bound, _, node = heapq.heappop(heap)
        if prunable(bound):
            prune(node, bound, "bound")
            continue
        stats.nodes_processed += 1
        lp = node.node_lp.solve(tol, warm=node.warm)
        node.warm = None
        stats.lp_solves += 1
        clock.tick()
        if lp.status == LpStatus.INFEASIBLE:
            prune(node, INF, "infeasible")
            log_bounds()
            continue
        if lp.status != LpStatus.OPTIMAL:
            raise SolveError(f"node {node.id}: LP {lp.status.value}")

        node_lp = node.node_lp
        rounds = 0
        action = None
        if prunable(lp.objective_value):
            prune(node, lp.objective_value, "bound")
            log_bounds()
            continue
        if len(node_lp.fractional(lp.x, tol)):
            if node.depth <= config.depth_limit:
                active = policy
            elif config.deep_cuts:
                active = FALLBACK_POLICY
            else:
                active = None
            if active is not None:
                ctx = NodeContext(
                    depth=node.depth,
                    node_id=node.id,
                    instance=instance,
                    node_lp=node_lp,
                    lp=lp,
                    primal_bound=stats.best_objective,
                    dual_bound=global_dual() if heap else lp.objective_value,
                    hard_round_cap=config.hard_round_cap,
                    rng=rng,
                )
                budget = active.on_node_enter(ctx)
                action = budget.max_stall_rounds
                if node.depth <= config.depth_limit:
                    stats.decisions.append(None if math.isinf(action) else int(action))
                res = run_cut_loop(
                    node_lp,
                    lp,
                    active,
                    budget,
                    tol,
                    depth=node.depth,
                    rng=rng,
                    max_per_round=config.max_per_round,
                    hard_round_cap=config.hard_round_cap,
                    clock=clock.tick,
                )
                stats.lp_solves += res.lp_solves
                stats.cut_rounds += res.rounds_executed
                stats.cuts_added += res.cuts_added_total
                stats.monotone_violations += res.monotone_violations
                rounds = res.rounds_executed
                if node.depth == 0:
                    stats.root_rounds, stats.root_stop_reason = rounds, res.stop_reason
                node.stall_state = StallState(res.objectives[-1], res.stall_counters[-1], budget.stall_eps)
                if config.audit:
                    stats.audit.append(_audit_record(node, res))
                lp = res.final_lp
                node_lp = res.node_lp
        if config.trace is not None:
            bound_out = lp.objective_value if lp.status == LpStatus.OPTIMAL else INF
            config.trace.write(f"{node.id}\t{node.depth}\t{bound_out!r}\t{rounds}\t{action}\n")

        if lp.status == LpStatus.INFEASIBLE:
            prune(node, INF, "infeasible")
        elif prunable(lp.objective_value):
            prune(node, lp.objective_value, "bound")
        elif len(node_lp.fractional(lp.x, tol)) == 0:
            update_incumbent(lp.x)
        else:
            node.node_lp = node_lp
            for child in branch(node, lp, tol):
                child.id = next(ids)
                heapq.heappush(heap, (child.bound, next(counter), child))
        log_bounds()

    if status is None:
        status = "optimal" if math.isfinite(stats.best_objective) else "infeasible"
    stats.status = status
    stats.dual_bound = global_dual() if status not in ("optimal", "infeasible") else stats.best_objective
    if status in ("optimal", "infeasible"):
        record_bounds(stats, clock.now(), stats.best_objective, stats.dual_bound)
    else:
        stats.dual_bound = stats.event_log[-1][2]
    stats.wall_time = clock.elapsed()
    stats.pdi = compute_pdi(stats.event_log, clock.now())
    return stats


def _audit_record(node: Node, res: CutLoopResult) -> dict[str, Any]:
    return {
        "node": node.id,
        "depth": node.depth,
        "lower": node.node_lp.lower.copy(),
        "upper": node.node_lp.upper.copy(),
        "cuts": res.cuts,
        "objectives": list(res.objectives),
        "rounds": res.rounds_executed,
        "cuts_added": res.cuts_added_total,
        "budget": asdict(res.budget),
        "max_continue_stall": res.max_continue_stall,
        "stop_reason": res.stop_reason,
    }
