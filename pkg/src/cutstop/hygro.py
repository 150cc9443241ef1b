"""HYGRO: a bipartite-graph network that picks a node's stall budget.

The state of a node is a bipartite graph (constraint rows, variable columns,
nonzero coefficients as edges) plus a short vector of static attributes.
Everything is embedded into ``d`` dimensions, two graph convolutions pass
messages rows <- columns and columns <- rows, both sides are pooled with
max/min/mean/std statistics, and an MLP maps the result to a ratio in
``(0, 1)``.  The ratio times ``t_A`` (floored) is the number of consecutive
stagnating rounds the node may run before cutting stops.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policies import NodeBudget, NodeContext, Policy
from .simplex import AT_LOWER, AT_UPPER, BASIC

D_CONS, D_VAR, D_STATIC = 6, 9, 8
BOUND_CLIP = 1e4
CHECKPOINT_MAGIC = b"HYGROCKP"
CHECKPOINT_VERSION = 1

# largest double below 1 and smallest positive normal: keep the ratio open
_RATIO_HI = float(np.nextafter(1.0, 0.0))
_RATIO_LO = float(np.finfo(float).tiny)


class HygroError(ValueError):
    pass


class CheckpointError(HygroError):
    pass


# --------------------------------------------------------------------------
# state encoding


@dataclass(frozen=True, eq=False)
class BipartiteState:
    """Constraint features ``C`` (n x d1), variable features ``V`` (m x d2),
    edges ``(rows, cols, vals)`` and static features ``s`` (d3)."""

    C: np.ndarray
    V: np.ndarray
    edge_rows: np.ndarray
    edge_cols: np.ndarray
    edge_vals: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        n, m = self.C.shape[0], self.V.shape[0]
        if n < 1 or m < 1:
            raise HygroError("state needs at least one row and one column")
        e = len(self.edge_vals)
        if len(self.edge_rows) != e or len(self.edge_cols) != e:
            raise HygroError("edge arrays differ in length")
        if e and (self.edge_rows.min() < 0 or self.edge_rows.max() >= n or self.edge_cols.min() < 0 or self.edge_cols.max() >= m):
            raise HygroError("edge index out of range")
        for name in ("C", "V", "edge_vals", "s"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise HygroError(f"non-finite values in {name}")

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    @property
    def n_cols(self) -> int:
        return self.V.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edge_vals)

    def permuted(self, row_perm, col_perm) -> "BipartiteState":
        """Relabel rows and columns: new row ``i`` is old row ``row_perm[i]``."""
        row_perm = np.asarray(row_perm)
        col_perm = np.asarray(col_perm)
        inv_r = np.argsort(row_perm)
        inv_c = np.argsort(col_perm)
        return BipartiteState(
            self.C[row_perm], self.V[col_perm], inv_r[self.edge_rows], inv_c[self.edge_cols], self.edge_vals.copy(), self.s.copy()
        )


def _max_abs(v) -> float:
    v = np.abs(np.asarray(v, dtype=float))
    v = v[np.isfinite(v)]
    return float(v.max()) if v.size and v.max() > 0 else 1.0


def encode_state(
    node_lp,
    lp,
    *,
    depth: int = 0,
    rounds_done: int = 0,
    hard_round_cap: int = 200,
    stall_counter: int = 0,
    t_a: int = 30,
    primal_bound: float = math.inf,
    dual_bound: float = -math.inf,
) -> BipartiteState:
    """Features of a node whose LP relaxation ``lp`` has been solved.

    Objective and right-hand sides are scaled by their largest magnitude
    within this node; bounds (and LP values) are clipped to
    ``[-1e4, 1e4]`` and scaled by the largest clipped bound.
    """
    if lp is None or not lp.optimal:
        raise HygroError("state encoding needs an optimally solved LP")
    A = np.asarray(node_lp.A, dtype=float)
    n, m = A.shape
    c = np.asarray(node_lp.c, dtype=float)
    b = np.asarray(node_lp.b, dtype=float)
    x = np.asarray(lp.x, dtype=float)
    imask = np.asarray(node_lp.integer_mask, dtype=bool)

    c_scale = _max_abs(c)
    b_scale = _max_abs(b)
    lo = np.clip(node_lp.lower, -BOUND_CLIP, BOUND_CLIP)
    up = np.clip(node_lp.upper, -BOUND_CLIP, BOUND_CLIP)
    x_scale = max(1.0, _max_abs(np.concatenate([lo, up])))

    pos = lp.position[:m]
    frac = np.where(imask, x - np.floor(x), 0.0)
    V = np.column_stack([
        c / c_scale,
        np.clip(x, -BOUND_CLIP, BOUND_CLIP) / x_scale,
        frac,
        imask.astype(float),
        (pos == AT_LOWER).astype(float),
        (pos == AT_UPPER).astype(float),
        (pos == BASIC).astype(float),
        lo / x_scale,
        up / x_scale,
    ])

    row_norm = np.linalg.norm(A, axis=1)
    safe_norm = np.where(row_norm > 0, row_norm, 1.0)
    c_norm = np.linalg.norm(c)
    cosine = (A @ c) / (safe_norm * c_norm) if c_norm > 0 else np.zeros(n)
    slack = b - A @ x
    nnz_row = np.count_nonzero(A, axis=1)
    C = np.column_stack([
        b / b_scale,
        np.asarray(lp.dual_values, dtype=float) / c_scale,
        slack / b_scale,
        nnz_row / m,
        np.where(row_norm > 0, cosine, 0.0),
        np.asarray(node_lp.is_cut, dtype=float),
    ])

    rows, cols = np.nonzero(A)
    vals = A[rows, cols] / safe_norm[rows]

    if math.isfinite(primal_bound) and math.isfinite(dual_bound):
        gap = abs(primal_bound - dual_bound) / max(abs(primal_bound), 1.0)
    else:
        gap = 1.0
    s = np.array([
        math.log1p(n),
        math.log1p(m),
        imask.sum() / m,
        len(vals) / (n * m),
        depth / (1.0 + depth),
        rounds_done / max(hard_round_cap, 1),
        stall_counter / t_a,
        gap,
    ])
    return BipartiteState(C, V, rows, cols, vals, s)


def encode_context(ctx: NodeContext, t_a: int = 30) -> BipartiteState:
    return encode_state(
        ctx.node_lp,
        ctx.lp,
        depth=ctx.depth,
        rounds_done=ctx.rounds_done,
        hard_round_cap=ctx.hard_round_cap,
        stall_counter=ctx.stall_counter,
        t_a=t_a,
        primal_bound=ctx.primal_bound,
        dual_bound=ctx.dual_bound,
    )


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class HygroConfig:
    d1: int = D_CONS
    d2: int = D_VAR
    d3: int = D_STATIC
    d: int = 32
    hidden: tuple = (64, 32)
    gamma: float = 0.9
    t_a: int = 30
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min(self.d1, self.d2, self.d3, self.d) < 1 or any(h < 1 for h in self.hidden):
            raise HygroError("all dimensions must be >= 1")
        if not 0 < self.gamma < 1:
            raise HygroError("gamma must lie in (0, 1)")
        if self.t_a < 1:
            raise HygroError("t_a must be >= 1")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Named blocks of the flat vector, in storage order.

        Weight matrices are stored input-major: ``y = x @ W + bias``.
        """
        d = self.d
        out = []
        for name, din in (("embed_C", self.d1), ("embed_V", self.d2), ("embed_E", 1), ("embed_s", self.d3)):
            out += [(f"{name}.W", (din, d)), (f"{name}.b", (d,))]
        for layer in (1, 2):
            out += [
                (f"conv{layer}.msg.W", (2 * d, d)),
                (f"conv{layer}.msg.b", (d,)),
                (f"conv{layer}.upd.W", (2 * d, d)),
                (f"conv{layer}.upd.b", (d,)),
            ]
        dims = [9 * d, *self.hidden, 1]
        for k, (i, o) in enumerate(zip(dims[:-1], dims[1:])):
            out += [(f"mlp{k}.W", (i, o)), (f"mlp{k}.b", (o,))]
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def metadata(self) -> dict:
        return {
            "d1": self.d1, "d2": self.d2, "d3": self.d3, "d": self.d,
            "hidden": list(self.hidden), "gamma": self.gamma, "t_a": self.t_a, "version": self.version,
        }


@dataclass(frozen=True, eq=False)
class HygroParams:
    config: HygroConfig
    theta: np.ndarray
    blocks: dict = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size != self.config.size:
            raise HygroError(f"parameter vector has {theta.size} entries, configuration needs {self.config.size}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        blocks, k = {}, 0
        for name, shape in self.config.shapes():
            size = int(np.prod(shape))
            blocks[name] = theta[k:k + size].reshape(shape)
            k += size
        object.__setattr__(self, "blocks", blocks)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def with_theta(self, theta) -> "HygroParams":
        return HygroParams(self.config, np.array(theta, dtype=np.float64))

    @classmethod
    def zeros(cls, config: HygroConfig | None = None) -> "HygroParams":
        config = config or HygroConfig()
        return cls(config, np.zeros(config.size))

    @classmethod
    def random(cls, config: HygroConfig | None = None, seed: int | None = 0, scale: float = 1.0) -> "HygroParams":
        """Weights ~ N(0, scale^2 / fan_in); biases zero."""
        config = config or HygroConfig()
        rng = np.random.default_rng(seed)
        parts = []
        for name, shape in config.shapes():
            if name.endswith(".W"):
                parts.append(rng.standard_normal(shape).ravel() * scale / math.sqrt(shape[0]))
            else:
                parts.append(np.zeros(shape))
        return cls(config, np.concatenate(parts))


# --------------------------------------------------------------------------
# network


def embed(state: BipartiteState, params: HygroParams):
    """Linear maps of the four components into ``d`` dimensions."""
    cfg = params.config
    if state.C.shape[1] != cfg.d1 or state.V.shape[1] != cfg.d2 or state.s.shape[0] != cfg.d3:
        raise HygroError(
            f"state dims (d1={state.C.shape[1]}, d2={state.V.shape[1]}, d3={state.s.shape[0]}) "
            f"do not match parameters (d1={cfg.d1}, d2={cfg.d2}, d3={cfg.d3})"
        )
    p = params.blocks
    C = state.C @ p["embed_C.W"] + p["embed_C.b"]
    V = state.V @ p["embed_V.W"] + p["embed_V.b"]
    E = state.edge_vals[:, None] @ p["embed_E.W"] + p["embed_E.b"]
    s = state.s @ p["embed_s.W"] + p["embed_s.b"]
    return C, V, E, s


def graph_conv(left, right, left_idx, right_idx, edge_feat, msg_W, msg_b, upd_W, upd_b):
    """One message pass from ``left`` nodes to ``right`` nodes.

    Each edge ``(left_idx[k], right_idx[k])`` sends
    ``[left ; edge] @ msg_W + msg_b``; a right node averages its incoming
    messages (zero if it has none) and becomes
    ``relu([right ; mean_msg] @ upd_W + upd_b)``.
    """
    b, d = right.shape
    agg = np.zeros((b, msg_W.shape[1]))
    if len(left_idx):
        msgs = np.concatenate([left[left_idx], edge_feat], axis=1) @ msg_W + msg_b
        np.add.at(agg, right_idx, msgs)
        deg = np.bincount(right_idx, minlength=b)
        agg /= np.maximum(deg, 1)[:, None]
    return np.maximum(np.concatenate([right, agg], axis=1) @ upd_W + upd_b, 0.0)


def pna_aggregate(D) -> np.ndarray:
    """Column-wise ``[max, min, mean, std]`` with population std.

    Columns are sorted first so the sums, and hence the result, do not
    depend on row order even in floating point.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[0] == 0:
        raise HygroError("cannot aggregate an empty set")
    D = np.sort(D, axis=0)
    return np.concatenate([D[-1], D[0], D.mean(axis=0), D.std(axis=0)])


def ratio_from_output(out: float) -> float:
    """``0.5 tanh(out) + 0.5``, kept strictly inside ``(0, 1)``.

    In double precision tanh saturates to exactly +-1 for large inputs, so
    the result is clamped to the nearest representable interior values.
    """
    return min(max(0.5 * math.tanh(out) + 0.5, _RATIO_LO), _RATIO_HI)


def scale_ratio(rho: float, is_root: bool, gamma: float) -> float:
    return rho if is_root else rho * gamma


def action_from_ratio(ratio: float, t_a: int) -> int:
    if not 0.0 < ratio < 1.0:
        raise HygroError(f"ratio {ratio} outside (0, 1)")
    if t_a < 1:
        raise HygroError("t_a must be >= 1")
    return min(int(math.floor(ratio * t_a)), t_a - 1)


@dataclass(frozen=True)
class RatioOutput:
    ratio: float
    action: int
    is_root: bool
    raw: float = 0.0  # MLP output before tanh


def _check(arr, layer: str):
    if not np.all(np.isfinite(arr)):
        raise HygroError(f"non-finite activation after layer {layer}")
    return arr


def forward(state: BipartiteState, params: HygroParams, is_root: bool) -> RatioOutput:
    cfg = params.config
    p = params.blocks
    C, V, E, s = embed(state, params)
    _check(np.concatenate([C.ravel(), V.ravel(), E.ravel(), s]), "embed")
    r, cidx = state.edge_rows, state.edge_cols
    C = _check(graph_conv(V, C, cidx, r, E, p["conv1.msg.W"], p["conv1.msg.b"], p["conv1.upd.W"], p["conv1.upd.b"]), "conv1")
    V = _check(graph_conv(C, V, r, cidx, E, p["conv2.msg.W"], p["conv2.msg.b"], p["conv2.upd.W"], p["conv2.upd.b"]), "conv2")
    h = np.concatenate([pna_aggregate(V), pna_aggregate(C), s])
    n_layers = len(cfg.hidden) + 1
    for k in range(n_layers):
        h = h @ p[f"mlp{k}.W"] + p[f"mlp{k}.b"]
        if k < n_layers - 1:
            h = np.maximum(h, 0.0)
        _check(h, f"mlp{k}")
    out = float(h[0])
    ratio = scale_ratio(ratio_from_output(out), is_root, cfg.gamma)
    return RatioOutput(ratio, action_from_ratio(ratio, cfg.t_a), is_root, out)


# --------------------------------------------------------------------------
# checkpoints
#
# layout: magic (8) | version u32 | metadata length u32 | metadata JSON |
#         count u64 | count little-endian float64 | sha256 of all preceding


def save_checkpoint(params: HygroParams, path) -> None:
    meta = json.dumps(params.config.metadata(), sort_keys=True).encode()
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<II", params.config.version, len(meta))
        + meta
        + struct.pack("<Q", params.theta.size)
        + params.theta.astype("<f8").tobytes()
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, expect: dict | None = None) -> HygroParams:
    """Read a checkpoint; ``expect`` maps metadata keys to required values."""
    data = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 8
    if len(data) < head + 8 + 32:
        raise CheckpointError("checkpoint truncated")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a HYGRO checkpoint")
    version, meta_len = struct.unpack("<II", data[len(CHECKPOINT_MAGIC):head])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(data) < head + meta_len + 8 + 32:
        raise CheckpointError("checkpoint truncated")
    try:
        meta = json.loads(data[head:head + meta_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt metadata") from exc
    (count,) = struct.unpack("<Q", data[head + meta_len:head + meta_len + 8])
    start = head + meta_len + 8
    end = start + 8 * count
    if end + 32 != len(data):
        raise CheckpointError(f"length field says {count} parameters; file size disagrees")
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise CheckpointError("checksum mismatch")
    try:
        config = HygroConfig(
            d1=meta["d1"], d2=meta["d2"], d3=meta["d3"], d=meta["d"], hidden=tuple(meta["hidden"]),
            gamma=meta["gamma"], t_a=meta["t_a"], version=meta["version"],
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"incomplete metadata: {exc}") from exc
    if config.version != version:
        raise CheckpointError("metadata version disagrees with header")
    if config.size != count:
        raise CheckpointError(f"metadata implies {config.size} parameters, file holds {count}")
    for key, want in (expect or {}).items():
        if meta.get(key) != want:
            raise CheckpointError(f"incompatible checkpoint: {key}={meta.get(key)}, encoder needs {want}")
    theta = np.frombuffer(data[start:end], dtype="<f8").astype(np.float64)
    return HygroParams(config, theta)


# --------------------------------------------------------------------------
# policy


class HygroPolicy(Policy):
    """Sets each node's stall budget from the network's action."""

    kind = "hygro"

    def __init__(self, params: HygroParams, eps: float = 1e-5):
        cfg = params.config
        if (cfg.d1, cfg.d2, cfg.d3) != (D_CONS, D_VAR, D_STATIC):
            raise HygroError(
                f"parameters expect d1={cfg.d1}, d2={cfg.d2}, d3={cfg.d3}; "
                f"the encoder produces d1={D_CONS}, d2={D_VAR}, d3={D_STATIC}"
            )
        self.params = params
        self.eps = eps
        self.calls = 0
        self.last: RatioOutput | None = None

    def on_node_enter(self, node: NodeContext) -> NodeBudget:
        state = encode_context(node, self.params.config.t_a)
        self.last = forward(state, self.params, is_root=node.depth == 0)
        self.calls += 1
        return NodeBudget(max_stall_rounds=self.last.action, stall_eps=self.eps)

    def describe(self):
        return f"{self.kind}:d={self.params.config.d},t_a={self.params.config.t_a}"

    @classmethod
    def from_params(cls, params: dict | None = None, seed: int | None = None) -> "HygroPolicy":
        params = dict(params or {})
        eps = float(params.pop("eps", 1e-5))
        ckpt = params.pop("checkpoint", None)
        if ckpt is not None:
            if params:
                raise HygroError(f"unexpected parameters with a checkpoint: {sorted(params)}")
            return cls(load_checkpoint(ckpt, expect={"d1": D_CONS, "d2": D_VAR, "d3": D_STATIC}), eps=eps)
        scale = float(params.pop("scale", 1.0))
        try:
            config = HygroConfig(**params)
        except TypeError as exc:
            raise HygroError(f"invalid HYGRO parameters {params}") from exc
        return cls(HygroParams.random(config, seed=0 if seed is None else seed, scale=scale), eps=eps)
