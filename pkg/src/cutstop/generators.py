"""Synthetic instance families: set cover, multiple knapsack, independent set."""
from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .milp import MilpInstance, build_instance


@dataclass(frozen=True)
class GeneratorConfig:
    family: str
    size: tuple = ()
    count: int = 1
    seed: int = 0
    density: float = 0.2
    affinity: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if any(s < 1 for s in self.size):
            raise ValueError("sizes must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.count < 0:
            raise ValueError("count must be >= 0")


def gen_set_cover(n_rows: int, n_cols: int, density: float, seed: int) -> MilpInstance:
    """Minimum-cost cover of ``n_rows`` elements by ``n_cols`` subsets.

    Every row gets ``round(density * n_cols)`` (at least 2) covering columns
    and every column covers at least one row.  Costs are uniform integers in
    ``[1, 100]``.
    """
    per_row = int(round(density * n_cols))
    if per_row < 2:
        raise ValueError(f"density {density} too low: each row needs >= 2 of {n_cols} columns")
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    rng = np.random.default_rng(seed)
    incidence = np.zeros((n_rows, n_cols), dtype=bool)
    # first pass makes sure each column appears somewhere
    cols = rng.permutation(n_cols)
    for k, j in enumerate(cols):
        incidence[k % n_rows, j] = True
    for i in range(n_rows):
        have = int(incidence[i].sum())
        if have < per_row:
            free = np.flatnonzero(~incidence[i])
            extra = rng.choice(free, size=per_row - have, replace=False)
            incidence[i, extra] = True
    costs = rng.integers(1, 101, size=n_cols)
    A = -incidence.astype(float)
    b = -np.ones(n_rows)
    return build_instance(
        costs, sp.csr_matrix(A), b, range(n_cols), [(0, 1)] * n_cols,
        name=f"setcover_r{n_rows}_c{n_cols}_s{seed}",
    )


def gen_multi_knapsack(n_items: int, n_knapsacks: int, seed: int) -> MilpInstance:
    """Assign items to knapsacks to maximize profit.

    Variable ``i * n_knapsacks + k`` puts item ``i`` in knapsack ``k``.  Each
    knapsack has capacity ``ceil(sum(w) / (2 K))`` and each item is used at
    most once.
    """
    if n_items < n_knapsacks or n_knapsacks < 1:
        raise ValueError("need n_items >= n_knapsacks >= 1")
    rng = np.random.default_rng(seed)
    weights = rng.integers(1, 101, size=n_items)
    profits = rng.integers(1, 101, size=n_items)
    K = n_knapsacks
    capacity = math.ceil(weights.sum() / (2 * K))
    m = n_items * K
    rows, cols, vals = [], [], []
    for k in range(K):
        for i in range(n_items):
            rows.append(k)
            cols.append(i * K + k)
            vals.append(float(weights[i]))
    for i in range(n_items):
        for k in range(K):
            rows.append(K + i)
            cols.append(i * K + k)
            vals.append(1.0)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(K + n_items, m))
    b = np.concatenate([np.full(K, float(capacity)), np.ones(n_items)])
    c = np.repeat(profits, K).astype(float)
    return build_instance(
        c, A, b, range(m), [(0, 1)] * m, sense="maximize",
        name=f"knapsack_i{n_items}_k{K}_s{seed}",
    )


def mis_from_edges(n_nodes: int, edges, name: str = "mis") -> MilpInstance:
    edges = sorted({(min(u, v), max(u, v)) for u, v in edges if u != v})
    if not edges:
        raise ValueError("graph has no edges")
    rows, cols, vals = [], [], []
    for r, (u, v) in enumerate(edges):
        rows += [r, r]
        cols += [u, v]
        vals += [1.0, 1.0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(edges), n_nodes))
    return build_instance(
        np.ones(n_nodes), A, np.ones(len(edges)), range(n_nodes), [(0, 1)] * n_nodes,
        sense="maximize", name=name,
    )


def gen_mis(n_nodes: int, affinity: int, seed: int) -> MilpInstance:
    """Maximum independent set on a Barabasi-Albert graph, one row per edge."""
    if affinity < 1:
        raise ValueError("affinity must be >= 1")
    if n_nodes <= affinity:
        raise ValueError("need n_nodes > affinity")
    g = nx.barabasi_albert_graph(n_nodes, affinity, seed=seed)
    return mis_from_edges(n_nodes, g.edges(), name=f"mis_n{n_nodes}_a{affinity}_s{seed}")


FAMILIES = ("set_cover", "multi_knapsack", "mis")

# desk-scale defaults and heavier stand-ins for the real-world sets
PRESETS = {
    "set_cover": {"desk": dict(n_rows=20, n_cols=40, density=0.2), "oracle": dict(n_rows=10, n_cols=15, density=0.3),
                  "stress": dict(n_rows=60, n_cols=120, density=0.1)},
    "multi_knapsack": {"desk": dict(n_items=20, n_knapsacks=2), "oracle": dict(n_items=7, n_knapsacks=2),
                       "stress": dict(n_items=40, n_knapsacks=4)},
    "mis": {"desk": dict(n_nodes=25, affinity=4), "oracle": dict(n_nodes=15, affinity=2),
            "stress": dict(n_nodes=80, affinity=4)},
}


def generate(family: str, seed: int, preset: str = "desk", **overrides) -> MilpInstance:
    params = dict(PRESETS[family][preset])
    params.update(overrides)
    if family == "set_cover":
        return gen_set_cover(params["n_rows"], params["n_cols"], params["density"], seed)
    if family == "multi_knapsack":
        return gen_multi_knapsack(params["n_items"], params["n_knapsacks"], seed)
    if family == "mis":
        return gen_mis(params["n_nodes"], params["affinity"], seed)
    raise ValueError(f"unknown family {family!r}")


def generate_many(family: str, count: int, seed: int, preset: str = "desk", **overrides) -> list[MilpInstance]:
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [generate(family, int(s), preset, **overrides) for s in seeds]
