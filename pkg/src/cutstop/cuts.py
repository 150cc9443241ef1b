"""Gomory mixed-integer cuts and the per-node cutting loop."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .milp import DEFAULT_TOLERANCES, MilpInstance, SolverTolerances
from .policies import NodeBudget, Policy, RoundContext
from .simplex import AT_UPPER, AT_ZERO, BASIC, LpSolution, LpStatus, WarmStart, lp_solve

TAU_SEP = 1e-4
MIN_FRACTIONALITY = 1e-3
MAX_DYNAMISM = 1e6


class CutLoopError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Cut:
    """``coeffs @ x <= rhs`` over the original variables."""

    coeffs: np.ndarray
    rhs: float
    origin_row: int = -1
    round: int = 0
    norm: float = field(default=0.0)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", coeffs)
        norm = float(np.linalg.norm(coeffs))
        if not norm > 0:
            raise ValueError("cut has zero norm")
        if not (np.all(np.isfinite(coeffs)) and math.isfinite(self.rhs)):
            raise ValueError("cut has non-finite data")
        object.__setattr__(self, "norm", norm)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coeffs)

    def key(self) -> bytes:
        """Hash of the norm-scaled row, used for duplicate detection."""
        vals = np.round(np.append(self.coeffs, self.rhs) / self.norm, 9) + 0.0
        return hashlib.blake2b(vals.tobytes(), digest_size=16).digest()


def cut_efficacy(cut: Cut, x) -> float:
    return float((cut.coeffs @ np.asarray(x, dtype=float) - cut.rhs) / cut.norm)


# --------------------------------------------------------------------------
# node-local LP


@dataclass(frozen=True, eq=False)
class NodeLP:
    """Rows and bounds of one node's LP relaxation.

    Rows are the instance rows followed by local cuts.  ``row_integral``
    marks rows whose slack is integer on every integer-feasible point, which
    lets the separator treat that slack as an integer variable.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer_mask: np.ndarray
    is_cut: np.ndarray
    row_integral: np.ndarray

    @classmethod
    def from_instance(cls, inst: MilpInstance) -> "NodeLP":
        A = np.array(inst.dense)
        b = np.array(inst.rhs)
        imask = inst.integer_mask
        nz = A != 0
        row_integral = (
            np.all((A == np.round(A)) | ~nz, axis=1)
            & np.all(imask[None, :] | ~nz, axis=1)
            & (b == np.round(b))
        )
        return cls(
            c=np.array(inst.objective),
            A=A,
            b=b,
            lower=np.array(inst.lower),
            upper=np.array(inst.upper),
            integer_mask=imask,
            is_cut=np.zeros(len(b), dtype=bool),
            row_integral=row_integral,
        )

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cuts(self) -> int:
        return int(self.is_cut.sum())

    def solve(self, tol: SolverTolerances = DEFAULT_TOLERANCES, warm=None) -> LpSolution:
        """Solve the relaxation, optionally warm-started from an earlier solution."""
        if isinstance(warm, LpSolution):
            warm = WarmStart.from_solution(warm, self.n_rows)
        return lp_solve(self.c, self.A, self.b, self.lower, self.upper, tol, warm_basis=warm)

    def add_cuts(self, cuts: Sequence[Cut]) -> "NodeLP":
        if not cuts:
            return self
        rows = np.vstack([cut.coeffs for cut in cuts])
        rhs = np.array([cut.rhs for cut in cuts])
        k = len(cuts)
        return replace(
            self,
            A=np.vstack([self.A, rows]),
            b=np.concatenate([self.b, rhs]),
            is_cut=np.concatenate([self.is_cut, np.ones(k, dtype=bool)]),
            row_integral=np.concatenate([self.row_integral, np.zeros(k, dtype=bool)]),
        )

    def with_bounds(self, j: int, lower: float | None = None, upper: float | None = None) -> "NodeLP":
        lo = self.lower.copy()
        hi = self.upper.copy()
        if lower is not None:
            lo[j] = max(lo[j], lower)
        if upper is not None:
            hi[j] = min(hi[j], upper)
        return replace(self, lower=lo, upper=hi)

    def fractional(self, x, tol: SolverTolerances = DEFAULT_TOLERANCES) -> np.ndarray:
        """Indices of integer variables whose value is not integral."""
        x = np.asarray(x)
        frac = np.abs(x - np.round(x))
        return np.flatnonzero(self.integer_mask & (frac > tol.integrality))


# --------------------------------------------------------------------------
# separation


def separate_gmi(
    lp: LpSolution,
    node_lp: NodeLP,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    round_index: int = 0,
    tau_sep: float = TAU_SEP,
    min_frac: float = MIN_FRACTIONALITY,
    max_dynamism: float = MAX_DYNAMISM,
) -> list[Cut]:
    """One GMI cut per fractional basic integer row of the optimal tableau.

    Rows too close to integrality (``min_frac``) and cuts whose coefficient
    range exceeds ``max_dynamism`` are skipped for numerical safety, as are
    cuts whose efficacy at the LP point is not above ``tau_sep``.
    """
    if lp.status != LpStatus.OPTIMAL:
        raise ValueError("separation needs an optimal LP solution")
    m = node_lp.A.shape[1]
    n = node_lp.n_rows
    T = lp.tableau
    pos = lp.position
    lo = lp.col_lower
    hi = lp.col_upper
    ncols = T.shape[1]

    col_int = np.zeros(ncols, dtype=bool)
    col_int[:m] = node_lp.integer_mask
    col_int[m:m + n] = node_lp.row_integral
    nonbasic = pos != BASIC
    at_upper = pos == AT_UPPER
    free = pos == AT_ZERO
    active = nonbasic & (hi - lo > 0) & ~free

    cuts = []
    x_lp = lp.x
    for r, j in enumerate(lp.basis):
        if j >= m or not node_lp.integer_mask[j]:
            continue
        beta = lp.values[j]
        f0 = beta - math.floor(beta)
        if min(f0, 1.0 - f0) <= max(tol.integrality, min_frac):
            continue
        if np.any(np.abs(T[r][free]) > 1e-12):
            continue
        row = np.where(active, T[r], 0.0)
        a = np.where(at_upper, -row, row)
        g = np.zeros(ncols)
        fj = a - np.floor(a)
        ints = active & col_int
        g[ints] = np.where(fj[ints] <= f0, fj[ints] / f0, (1.0 - fj[ints]) / (1.0 - f0))
        conts = active & ~col_int
        g[conts] = np.where(a[conts] >= 0, a[conts] / f0, -a[conts] / (1.0 - f0))
        # sum g_j y_j >= 1, y_j = x_j - l_j (at lower) or u_j - x_j (at upper)
        gs = g[:m]
        up = at_upper[:m] & active[:m]
        low = ~at_upper[:m] & active[:m]
        pi = np.where(up, -gs, gs)
        const = float(gs[up] @ hi[:m][up] - gs[low] @ lo[:m][low])
        g_slack = g[m:m + n]
        pi = pi - g_slack @ node_lp.A
        const += float(g_slack @ node_lp.b)
        # pi x >= 1 - const  ->  -pi x <= const - 1
        coeffs = -pi
        rhs = const - 1.0
        cut = _clean(coeffs, rhs, node_lp.lower, node_lp.upper, max_dynamism)
        if cut is None:
            continue
        coeffs, rhs = cut
        candidate = Cut(coeffs, rhs, origin_row=r, round=round_index)
        if cut_efficacy(candidate, x_lp) > tau_sep:
            cuts.append(candidate)
    return cuts


def _clean(coeffs, rhs, lower, upper, max_dynamism):
    """Scale to unit max-coefficient and relax tiny coefficients away."""
    big = np.abs(coeffs).max(initial=0.0)
    if not big > 1e-12 or not np.all(np.isfinite(coeffs)) or not math.isfinite(rhs):
        return None
    coeffs = coeffs / big
    rhs = rhs / big
    tiny = (coeffs != 0) & (np.abs(coeffs) < 1e-9)
    for j in np.flatnonzero(tiny):
        a = coeffs[j]
        bound = lower[j] if a > 0 else upper[j]
        if not math.isfinite(bound):
            return None
        # a x_j >= a * bound on the node's domain
        rhs -= a * bound
        coeffs[j] = 0.0
    nz = np.abs(coeffs[coeffs != 0])
    if len(nz) == 0 or nz.max() / nz.min() > max_dynamism:
        return None
    return coeffs + 0.0, float(rhs)


@dataclass
class CutPool:
    candidates: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    seen: set = field(default_factory=set)


def select_cuts(pool: CutPool | Iterable[Cut], x_lp, max_per_round: int = 10, tau_sep: float = TAU_SEP) -> list[Cut]:
    """Top cuts by efficacy (ties by origin row), skipping duplicates."""
    if max_per_round < 0:
        raise ValueError("max_per_round must be >= 0")
    if not isinstance(pool, CutPool):
        pool = CutPool(candidates=list(pool))
    scored = [(cut_efficacy(c, x_lp), c) for c in pool.candidates]
    scored = [sc for sc in scored if sc[0] > tau_sep]
    scored.sort(key=lambda sc: (-sc[0], sc[1].origin_row))
    chosen = []
    for _, cut in scored:
        if len(chosen) >= max_per_round:
            break
        key = cut.key()
        if key in pool.seen:
            continue
        pool.seen.add(key)
        chosen.append(cut)
    pool.selected = chosen
    return chosen


# --------------------------------------------------------------------------
# stagnation


ZERO_OBJECTIVE = 1e-10
# relative slack on eps so that changes equal to eps in exact arithmetic
# (e.g. 100 -> 99.99 with eps 1e-4) still count as stagnant after rounding
EPS_SLACK = 1e-9


@dataclass(frozen=True)
class StallState:
    prev_objective: float
    counter: int = 0
    eps: float = 1e-5


def is_stagnant(prev: float, new: float, eps: float) -> bool:
    change = abs(prev - new)
    limit = eps * (1.0 + EPS_SLACK)
    if abs(prev) < ZERO_OBJECTIVE:
        return change <= limit
    return change / abs(prev) <= limit


def stagnation_update(state: StallState, new_objective: float) -> StallState:
    if math.isnan(new_objective) or math.isnan(state.prev_objective):
        raise ValueError("NaN objective in stagnation update")
    counter = state.counter + 1 if is_stagnant(state.prev_objective, new_objective, state.eps) else 0
    return StallState(prev_objective=new_objective, counter=counter, eps=state.eps)


# --------------------------------------------------------------------------
# the loop


@dataclass
class LoopControl:
    """Bookkeeping shared by the real loop and scripted replays."""

    policy: Policy
    budget: NodeBudget
    depth: int = 0
    hard_round_cap: int = 200
    rng: np.random.Generator | None = None
    rounds: int = 0
    cuts_added: int = 0
    stall: StallState = None
    max_continue_stall: int = 0
    objectives: list = field(default_factory=list)
    stall_history: list = field(default_factory=list)

    def start(self, objective: float):
        self.stall = StallState(prev_objective=objective, counter=0, eps=self.budget.stall_eps)
        self.objectives = [objective]
        self.stall_history = [0]

    def cut_allowance(self, max_per_round: int) -> int:
        left = self.budget.max_cuts - self.cuts_added
        return int(min(max_per_round, left))

    def stop_reason(self) -> str | None:
        if self.budget.max_rounds == 0:
            return "round_cap"
        ctx = RoundContext(
            depth=self.depth,
            round=self.rounds,
            cuts_added_total=self.cuts_added,
            stall_counter=self.stall.counter,
            budget=self.budget,
            objective_before=self.objectives[-2] if len(self.objectives) > 1 else math.nan,
            objective_after=self.objectives[-1],
            rounds_since_improvement=self.stall.counter,
            rng=self.rng,
        )
        reason = self.policy.stop_reason(ctx)
        if reason is None and self.rounds >= self.hard_round_cap:
            reason = "hard_cap"
        if reason is None:
            self.max_continue_stall = max(self.max_continue_stall, self.stall.counter)
        return reason

    def record_round(self, objective: float, n_cuts: int):
        self.rounds += 1
        self.cuts_added += n_cuts
        self.objectives.append(objective)
        if math.isfinite(objective):
            self.stall = stagnation_update(self.stall, objective)
        self.stall_history.append(self.stall.counter)


@dataclass
class CutLoopResult:
    rounds_executed: int
    cuts_added_total: int
    final_lp: LpSolution
    node_lp: NodeLP
    stop_reason: str
    objectives: list
    stall_counters: list
    lp_solves: int
    budget: NodeBudget
    max_continue_stall: int = 0
    cuts: list = field(default_factory=list)
    monotone_violations: int = 0


def run_cut_loop(
    node_lp: NodeLP,
    lp: LpSolution,
    policy: Policy,
    budget: NodeBudget,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    *,
    depth: int = 0,
    rng: np.random.Generator | None = None,
    max_per_round: int = 10,
    hard_round_cap: int = 200,
    tau_sep: float = TAU_SEP,
    trace=None,
    clock: Callable[[], None] | None = None,
) -> CutLoopResult:
    """Separate, select, add and re-solve until something says stop.

    ``clock`` is called once per LP solve.  ``trace`` may be a writable text
    stream receiving one tab-separated line per round.
    """
    if lp.status != LpStatus.OPTIMAL:
        raise ValueError("cut loop needs an optimal node LP")
    ctl = LoopControl(policy, budget, depth=depth, hard_round_cap=hard_round_cap, rng=rng)
    ctl.start(lp.objective_value)
    pool = CutPool()
    added: list[Cut] = []
    solves = 0
    violations = 0
    writer = csv.writer(trace, delimiter="\t", lineterminator="\n") if trace is not None else None
    n_cand = n_sel = 0

    while True:
        if len(node_lp.fractional(lp.x, tol)) == 0:
            reason = "integral"
            break
        reason = ctl.stop_reason()
        if reason is not None:
            break
        pool.candidates = separate_gmi(lp, node_lp, tol, round_index=ctl.rounds + 1, tau_sep=tau_sep)
        allowance = ctl.cut_allowance(max_per_round)
        chosen = select_cuts(pool, lp.x, allowance, tau_sep) if allowance > 0 else []
        n_cand, n_sel = len(pool.candidates), len(chosen)
        if not chosen:
            reason = "no_cuts"
            break
        node_lp = node_lp.add_cuts(chosen)
        added.extend(chosen)
        prev = lp.objective_value
        lp = node_lp.solve(tol, warm=lp)
        solves += 1
        if clock is not None:
            clock()
        if lp.status == LpStatus.INFEASIBLE:
            ctl.record_round(math.inf, n_sel)
            reason = "infeasible"
            break
        if lp.status != LpStatus.OPTIMAL:
            raise CutLoopError(f"LP {lp.status.value} after cut round {ctl.rounds + 1}")
        if lp.objective_value < prev - 1e-7:
            violations += 1
        ctl.record_round(lp.objective_value, n_sel)
        if writer is not None:
            writer.writerow([ctl.rounds, n_cand, n_sel, repr(lp.objective_value), ctl.stall.counter, 0])

    if writer is not None:
        writer.writerow([ctl.rounds, n_cand, n_sel, repr(lp.objective_value), ctl.stall.counter, reason])
    return CutLoopResult(
        rounds_executed=ctl.rounds,
        cuts_added_total=ctl.cuts_added,
        final_lp=lp,
        node_lp=node_lp,
        stop_reason=reason,
        objectives=ctl.objectives,
        stall_counters=ctl.stall_history,
        lp_solves=solves,
        budget=budget,
        max_continue_stall=ctl.max_continue_stall,
        cuts=added,
        monotone_violations=violations,
    )


def replay_objectives(
    policy: Policy,
    budget: NodeBudget,
    objectives: Sequence[float],
    *,
    depth: int = 0,
    rng: np.random.Generator | None = None,
    cuts_per_round: int = 1,
    hard_round_cap: int = 200,
) -> tuple[int, str, list[int]]:
    """Drive the loop controller with a scripted objective sequence.

    ``objectives[0]`` is the pre-cutting LP value, ``objectives[t]`` the value
    after round ``t``.  Returns ``(rounds_executed, stop_reason,
    stall_counters)``; ``"exhausted"`` means the script ran out first.
    """
    ctl = LoopControl(policy, budget, depth=depth, hard_round_cap=hard_round_cap, rng=rng)
    ctl.start(objectives[0])
    for obj in objectives[1:]:
        reason = ctl.stop_reason()
        if reason is not None:
            return ctl.rounds, reason, ctl.stall_history
        n = min(cuts_per_round, ctl.cut_allowance(cuts_per_round))
        ctl.record_round(obj, n)
    reason = ctl.stop_reason()
    return ctl.rounds, reason or "exhausted", ctl.stall_history
