"""Cut-loop stopping policies.

Every policy answers two questions: at node entry, which budget applies to
this node (:meth:`Policy.on_node_enter`); and before each cutting round,
whether to keep going (:meth:`Policy.continue_cutting`).  Per-round
predicates and per-node stall budgets therefore share one interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class NodeBudget:
    max_stall_rounds: float = INF
    max_rounds: float = INF
    max_cuts: float = INF
    stall_eps: float = 1e-5


@dataclass
class NodeContext:
    """What a policy may look at when a node is entered."""

    depth: int
    node_id: int = 0
    instance: Any = None
    node_lp: Any = None
    lp: Any = None
    primal_bound: float = INF
    dual_bound: float = -INF
    rounds_done: int = 0
    stall_counter: int = 0
    hard_round_cap: int = 200
    rng: np.random.Generator | None = None


@dataclass
class RoundContext:
    """Loop state handed to :meth:`Policy.continue_cutting`.

    ``round`` is the number of rounds completed at this node (0 before the
    first round).
    """

    depth: int
    round: int
    cuts_added_total: int
    stall_counter: int
    budget: NodeBudget
    objective_before: float = math.nan
    objective_after: float = math.nan
    rounds_since_improvement: int = 0
    rng: np.random.Generator | None = None


def budget_stop_reason(budget: NodeBudget, ctx: RoundContext) -> str | None:
    if ctx.stall_counter > budget.max_stall_rounds:
        return "stall"
    if ctx.round >= budget.max_rounds:
        return "round_cap"
    if ctx.cuts_added_total >= budget.max_cuts:
        return "cut_cap"
    return None


class Policy:
    kind = "base"

    def on_node_enter(self, node: NodeContext) -> NodeBudget:
        raise NotImplementedError

    def stop_reason(self, ctx: RoundContext) -> str | None:
        return budget_stop_reason(ctx.budget, ctx)

    def continue_cutting(self, ctx: RoundContext) -> bool:
        return self.stop_reason(ctx) is None

    def describe(self) -> str:
        return self.kind

    def __repr__(self):
        return f"<{type(self).__name__} {self.describe()}>"


class SrdPolicy(Policy):
    """Stagnation round detection: stop once the stall counter exceeds ``s``."""

    kind = "srd"

    def __init__(self, s: int = 5, s_deep: int | None = None, eps: float = 1e-5):
        if s < 0 or (s_deep is not None and s_deep < 0):
            raise ValueError("stall threshold must be >= 0")
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.s = s
        self.s_deep = s if s_deep is None else s_deep
        self.eps = eps

    def on_node_enter(self, node):
        s = self.s if node.depth == 0 else self.s_deep
        return NodeBudget(max_stall_rounds=s, stall_eps=self.eps)

    def describe(self):
        return f"{self.kind}:s={self.s},s_deep={self.s_deep},eps={self.eps:g}"


class DefaultPolicy(SrdPolicy):
    kind = "default"

    def __init__(self, s: int = 5, s_deep: int = 1, eps: float = 1e-5):
        super().__init__(s=s, s_deep=s_deep, eps=eps)


class ImmediatePolicy(SrdPolicy):
    kind = "immediate"

    def __init__(self, eps: float = 1e-5):
        super().__init__(s=0, s_deep=0, eps=eps)

    def describe(self):
        return f"{self.kind}:eps={self.eps:g}"


class NoCutsPolicy(Policy):
    kind = "nocuts"

    def on_node_enter(self, node):
        return NodeBudget(max_rounds=0)


class AlwaysPolicy(Policy):
    """Never stops on its own; only engine conditions end the loop."""

    kind = "always"

    def on_node_enter(self, node):
        return NodeBudget()


class FcnPolicy(Policy):
    kind = "fcn"

    def __init__(self, k: int = 200):
        if k < 0:
            raise ValueError("k must be >= 0")
        self.k = k

    def on_node_enter(self, node):
        return NodeBudget(max_cuts=self.k)

    def describe(self):
        return f"{self.kind}:k={self.k}"


class FcrPolicy(Policy):
    kind = "fcr"

    def __init__(self, t: int = 100):
        if t < 0:
            raise ValueError("t must be >= 0")
        self.t = t

    def on_node_enter(self, node):
        return NodeBudget(max_rounds=self.t)

    def describe(self):
        return f"{self.kind}:t={self.t}"


class RandomIPolicy(Policy):
    """Stops before each round with probability ``p``.

    Exactly one uniform is drawn per call, even when a budget cap already
    decides, so the draw stream stays aligned across configurations.
    """

    kind = "random1"

    def __init__(self, p: float = 0.005):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.p = p

    def on_node_enter(self, node):
        return NodeBudget()

    def stop_reason(self, ctx):
        u = ctx.rng.random()
        reason = budget_stop_reason(ctx.budget, ctx)
        if reason is None and u < self.p:
            return "random"
        return reason

    def describe(self):
        return f"{self.kind}:p={self.p:g}"


class RandomIIPolicy(Policy):
    """Stall threshold drawn uniformly from ``[low, high)`` once per node."""

    kind = "random2"

    def __init__(self, low: int = 0, high: int = 30, eps: float = 1e-5):
        if not 0 <= low < high:
            raise ValueError("need 0 <= low < high")
        self.low = low
        self.high = high
        self.eps = eps

    def on_node_enter(self, node):
        s = int(node.rng.integers(self.low, self.high))
        return NodeBudget(max_stall_rounds=s, stall_eps=self.eps)

    def describe(self):
        return f"{self.kind}:low={self.low},high={self.high}"


_KINDS = {
    "default": DefaultPolicy,
    "srd": SrdPolicy,
    "nocuts": NoCutsPolicy,
    "always": AlwaysPolicy,
    "fcn": FcnPolicy,
    "fcr": FcrPolicy,
    "immediate": ImmediatePolicy,
    "random1": RandomIPolicy,
    "random2": RandomIIPolicy,
}
_ALIASES = {"no_cuts": "nocuts", "randomi": "random1", "randomii": "random2", "random_i": "random1", "random_ii": "random2"}


def make_policy(kind: str, params: dict | None = None, seed: int | None = None) -> Policy:
    """Build a policy by name.

    ``hygro`` accepts ``checkpoint=PATH`` or, without one, a randomly
    initialised network drawn from ``seed``.
    """
    kind = kind.lower()
    kind = _ALIASES.get(kind, kind)
    params = dict(params or {})
    if kind == "hygro":
        from .hygro import HygroPolicy

        return HygroPolicy.from_params(params, seed=seed)
    if kind not in _KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    try:
        return _KINDS[kind](**params)
    except TypeError as exc:
        raise ValueError(f"invalid parameters for {kind}: {params}") from exc


def _coerce(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def parse_policy(text: str, seed: int | None = None) -> Policy:
    """Parse ``kind[:param=value,...]``, e.g. ``fcr:t=100``."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"malformed policy parameter {item!r}")
        params[key.strip()] = _coerce(val.strip())
    return make_policy(kind.strip(), params, seed=seed)
