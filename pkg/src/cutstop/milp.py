"""MILP instances in canonical ``min c^T x  s.t.  A x <= b`` form.

Instances are immutable once built.  Integer variables must carry finite
bounds so that the brute-force oracle can enumerate them.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class InstanceError(ValueError):
    """Raised when instance data is malformed."""


@dataclass(frozen=True)
class SolverTolerances:
    feas: float = 1e-7
    integrality: float = 1e-6
    obj: float = 1e-8
    pivot: float = 1e-9
    max_iterations: int = 20_000

    def __post_init__(self):
        for name in ("feas", "integrality", "obj", "pivot"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be strictly positive")
        if self.integrality >= 0.5:
            raise ValueError("integrality tolerance must be < 0.5")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")


DEFAULT_TOLERANCES = SolverTolerances()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A validated instance.  The objective is always minimized.

    ``maximize`` records whether the source problem was a maximization; in
    that case ``objective`` holds the negated coefficients.
    """

    objective: np.ndarray
    constraints: sp.csr_matrix
    rhs: np.ndarray
    integer_set: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray
    name: str = "instance"
    maximize: bool = False
    _dense: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_cons(self) -> int:
        return self.constraints.shape[0]

    @property
    def m_vars(self) -> int:
        return self.constraints.shape[1]

    @property
    def nnz(self) -> int:
        return self.constraints.nnz

    @property
    def dense(self) -> np.ndarray:
        return self._dense

    @property
    def integer_mask(self) -> np.ndarray:
        mask = np.zeros(self.m_vars, dtype=bool)
        mask[list(self.integer_set)] = True
        return mask

    def objective_is_integral(self) -> bool:
        """True when every feasible objective value is an integer."""
        if len(self.integer_set) != self.m_vars:
            return False
        return bool(np.all(self.objective == np.round(self.objective)))

    def to_dict(self) -> dict:
        rows = []
        A = self.constraints
        for i in range(self.n_cons):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            coeffs = {str(int(j)): float(v) for j, v in zip(A.indices[lo:hi], A.data[lo:hi])}
            rows.append({"coeffs": coeffs, "rhs": float(self.rhs[i])})
        objective = -self.objective if self.maximize else self.objective
        return {
            "name": self.name,
            "sense": "maximize" if self.maximize else "minimize",
            "objective": [float(v) for v in objective],
            "rows": rows,
            "integer_set": [int(j) for j in self.integer_set],
            "bounds": [[_num_out(lo), _num_out(hi)] for lo, hi in zip(self.lower, self.upper)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _num_out(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _num_in(v) -> float:
    if v is None:
        return math.nan
    if isinstance(v, str):
        return float(v.replace("Infinity", "inf"))
    return float(v)


def build_instance(
    c: Sequence[float],
    A,
    b: Sequence[float],
    integer_set: Iterable[int] = (),
    var_bounds: Sequence[tuple[float, float]] | None = None,
    sense: str = "minimize",
    name: str = "instance",
) -> MilpInstance:
    """Validate the data and return a :class:`MilpInstance`.

    ``A`` may be dense or any scipy sparse matrix; rows are read as ``<=``.
    ``var_bounds`` defaults to ``[0, inf)`` for every variable.  A
    ``maximize`` objective is negated on ingestion.
    """
    c = np.asarray(c, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    A = sp.csr_matrix(A, dtype=float)
    A.eliminate_zeros()
    A.sort_indices()
    n, m = A.shape
    if m == 0 or n == 0:
        raise InstanceError("instance needs at least one constraint and one variable")
    if c.shape[0] != m:
        raise InstanceError(f"dimension mismatch: objective has {c.shape[0]} entries, matrix has {m} columns")
    if b.shape[0] != n:
        raise InstanceError(f"dimension mismatch: rhs has {b.shape[0]} entries, matrix has {n} rows")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
        raise InstanceError("NaN/inf coefficient in objective, matrix or rhs")

    if var_bounds is None:
        lower = np.zeros(m)
        upper = np.full(m, np.inf)
    else:
        if len(var_bounds) != m:
            raise InstanceError(f"dimension mismatch: {len(var_bounds)} bounds for {m} variables")
        lower = np.array([_num_in(lo) for lo, _ in var_bounds], dtype=float)
        upper = np.array([_num_in(hi) for _, hi in var_bounds], dtype=float)
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise InstanceError("NaN bound")
    if np.any(lower > upper):
        j = int(np.argmax(lower > upper))
        raise InstanceError(f"invalid bounds for variable {j}: lower {lower[j]} > upper {upper[j]}")

    ints = sorted({int(j) for j in integer_set})
    for j in ints:
        if not 0 <= j < m:
            raise InstanceError(f"integer index {j} is not a valid column")
        if not (np.isfinite(lower[j]) and np.isfinite(upper[j])):
            raise InstanceError(f"unbounded integer variable {j}")
    # integer variables live on integer bounds
    for j in ints:
        lower[j] = math.ceil(lower[j] - 1e-9)
        upper[j] = math.floor(upper[j] + 1e-9)
        if lower[j] > upper[j]:
            raise InstanceError(f"invalid bounds for variable {j}: no integer in range")

    if sense in ("maximize", "max"):
        maximize = True
        c = -c
    elif sense in ("minimize", "min"):
        maximize = False
    else:
        raise InstanceError(f"unknown objective sense {sense!r}")
    c = c + 0.0  # normalize -0.0

    return MilpInstance(
        objective=_frozen(c),
        constraints=A,
        rhs=_frozen(b.copy()),
        integer_set=tuple(ints),
        lower=_frozen(lower),
        upper=_frozen(upper),
        name=name,
        maximize=maximize,
        _dense=_frozen(A.toarray()),
    )


def check_feasible(instance: MilpInstance, x, tol: SolverTolerances = DEFAULT_TOLERANCES) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.m_vars,):
        return False
    if np.any(x < instance.lower - tol.feas) or np.any(x > instance.upper + tol.feas):
        return False
    if np.any(instance.constraints @ x > instance.rhs + tol.feas):
        return False
    xi = x[list(instance.integer_set)]
    return bool(np.all(np.abs(xi - np.round(xi)) <= tol.integrality))


class EnumerationError(RuntimeError):
    pass


def brute_force_opt(
    instance: MilpInstance,
    cap: int = 2**20,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
) -> tuple[float, np.ndarray] | None:
    """Exact optimum by enumerating every integer point.

    Returns ``(objective, x)`` or ``None`` when no point is feasible.  Ties go
    to the lexicographically smallest ``x``.
    """
    points = enumerate_feasible(instance, cap=cap, tol=tol)
    if len(points) == 0:
        return None
    values = points @ instance.objective
    k = int(np.argmin(values))  # first minimum = lexicographically smallest
    return float(values[k]), points[k].astype(float)


def enumerate_feasible(
    instance: MilpInstance,
    cap: int = 2**20,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    chunk: int = 1 << 16,
) -> np.ndarray:
    """All integer-feasible points in lexicographic order, as a float array."""
    m = instance.m_vars
    if len(instance.integer_set) != m:
        raise EnumerationError("brute force needs every variable to be integer")
    ranges = [np.arange(int(lo), int(hi) + 1) for lo, hi in zip(instance.lower, instance.upper)]
    total = math.prod(len(r) for r in ranges)
    if total > cap:
        raise EnumerationError(f"enumeration size {total} exceeds cap {cap}")
    A = instance.dense
    out = []
    grid = itertools.product(*ranges)
    remaining = total
    while remaining > 0:
        take = min(chunk, remaining)
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(grid, take)), dtype=float, count=take * m)
        block = block.reshape(take, m)
        ok = np.all(block @ A.T <= instance.rhs + tol.feas, axis=1)
        out.append(block[ok])
        remaining -= take
    return np.concatenate(out, axis=0) if out else np.zeros((0, m))


# --------------------------------------------------------------------------
# file formats


def instance_from_dict(data: Mapping) -> MilpInstance:
    objective = [float(v) for v in data["objective"]]
    m = len(objective)
    rows_i, cols, vals, rhs = [], [], [], []
    r = 0
    for row in data["rows"]:
        coeffs = {int(k): float(v) for k, v in row["coeffs"].items()}
        sense = row.get("sense", "<=")
        if sense in ("<=", "L"):
            signs = [1.0]
            rhs_vals = [float(row["rhs"])]
        elif sense in (">=", "G"):
            signs = [-1.0]
            rhs_vals = [-float(row["rhs"])]
        elif sense in ("=", "==", "E"):
            signs = [1.0, -1.0]
            rhs_vals = [float(row["rhs"]), -float(row["rhs"])]
        else:
            raise InstanceError(f"unknown row sense {sense!r}")
        for s, bval in zip(signs, rhs_vals):
            for j, v in coeffs.items():
                if not 0 <= j < m:
                    raise InstanceError(f"row references column {j} outside 0..{m - 1}")
                rows_i.append(r)
                cols.append(j)
                vals.append(s * v)
            rhs.append(bval)
            r += 1
    A = sp.csr_matrix((vals, (rows_i, cols)), shape=(r, m))
    bounds = data.get("bounds")
    return build_instance(
        objective,
        A,
        rhs,
        integer_set=data.get("integer_set", ()),
        var_bounds=[tuple(bd) for bd in bounds] if bounds is not None else None,
        sense=data.get("sense", "minimize"),
        name=data.get("name", "instance"),
    )


def read_instance(path) -> MilpInstance:
    path = Path(path)
    if path.suffix.lower() in (".mps", ".fmps"):
        return read_mps(path)
    return instance_from_dict(json.loads(path.read_text()))


def write_instance(instance: MilpInstance, path) -> None:
    Path(path).write_text(instance.to_json() + "\n")


def read_mps(path) -> MilpInstance:
    """Read a small MPS subset: NAME, ROWS, COLUMNS, RHS, BOUNDS.

    Fields are whitespace separated, which covers free-form files and
    fixed-field files whose names contain no blanks.  RANGES is not
    supported.
    """
    name = Path(path).stem
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    obj_row = None
    col_index: dict[str, int] = {}
    coeffs: dict[str, dict[int, float]] = {}
    obj: dict[int, float] = {}
    rhs: dict[str, float] = {}
    bounds: dict[int, list[float]] = {}
    integer_cols: set[int] = set()
    in_int = False
    obj_sense = "minimize"

    def col(cname: str) -> int:
        if cname not in col_index:
            col_index[cname] = len(col_index)
            if in_int:
                integer_cols.add(col_index[cname])
        return col_index[cname]

    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            parts = raw.split()
            section = parts[0].upper()
            if section == "NAME" and len(parts) > 1:
                name = parts[1]
            if section == "OBJSENSE" and len(parts) > 1:
                obj_sense = "maximize" if parts[1].upper().startswith("MAX") else "minimize"
            if section == "ENDATA":
                break
            continue
        parts = raw.split()
        if section == "OBJSENSE":
            obj_sense = "maximize" if parts[0].upper().startswith("MAX") else "minimize"
        elif section == "ROWS":
            kind, rname = parts[0].upper(), parts[1]
            if kind == "N":
                if obj_row is None:
                    obj_row = rname
            elif kind in ("L", "G", "E"):
                row_sense[rname] = kind
                row_order.append(rname)
                coeffs[rname] = {}
            else:
                raise InstanceError(f"unsupported row type {kind}")
        elif section == "COLUMNS":
            if len(parts) >= 3 and parts[1].upper() == "'MARKER'":
                marker = parts[2].upper()
                in_int = marker == "'INTORG'"
                continue
            j = col(parts[0])
            for rname, val in zip(parts[1::2], parts[2::2]):
                if rname == obj_row:
                    obj[j] = float(val)
                elif rname in coeffs:
                    coeffs[rname][j] = float(val)
                else:
                    raise InstanceError(f"column {parts[0]} references unknown row {rname}")
        elif section == "RHS":
            items = parts[1:] if len(parts) % 2 == 1 else parts
            for rname, val in zip(items[0::2], items[1::2]):
                if rname == obj_row:
                    continue
                rhs[rname] = float(val)
        elif section == "BOUNDS":
            kind = parts[0].upper()
            rest = parts[1:]
            # the bound-set name is optional
            if kind in ("FR", "MI", "PL", "BV"):
                names = [t for t in rest if t in col_index]
                if not names:
                    raise InstanceError(f"bound references unknown column in {raw.strip()!r}")
                cname, val = names[-1], None
            else:
                cname, val = rest[-2], float(rest[-1])
            if cname not in col_index:
                raise InstanceError(f"bound references unknown column {cname}")
            j = col_index[cname]
            bd = bounds.setdefault(j, [0.0, math.inf])
            if kind == "UP":
                bd[1] = val
                if val < 0 and bd[0] == 0.0:
                    bd[0] = -math.inf
            elif kind == "LO":
                bd[0] = val
            elif kind == "FX":
                bd[0] = bd[1] = val
            elif kind == "FR":
                bd[0], bd[1] = -math.inf, math.inf
            elif kind == "MI":
                bd[0] = -math.inf
            elif kind == "PL":
                bd[1] = math.inf
            elif kind == "BV":
                bd[0], bd[1] = 0.0, 1.0
                integer_cols.add(j)
            elif kind == "LI":
                bd[0] = val
                integer_cols.add(j)
            elif kind == "UI":
                bd[1] = val
                integer_cols.add(j)
            else:
                raise InstanceError(f"unsupported bound type {kind}")
        elif section in ("NAME", None):
            continue
        else:
            raise InstanceError(f"unsupported MPS section {section}")

    m = len(col_index)
    rows = []
    for rname in row_order:
        rows.append({"coeffs": coeffs[rname], "rhs": rhs.get(rname, 0.0), "sense": row_sense[rname]})
    data = {
        "name": name,
        "sense": obj_sense,
        "objective": [obj.get(j, 0.0) for j in range(m)],
        "rows": rows,
        "integer_set": sorted(integer_cols),
        "bounds": [bounds.get(j, [0.0, math.inf]) for j in range(m)],
    }
    return instance_from_dict(data)
