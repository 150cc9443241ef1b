"""Bounded primal simplex on a dense standard-form tableau.

The LP ``min c x  s.t.  A x <= b,  lower <= x <= upper`` is brought to
standard form with one slack per row, ``A x + s = b, s >= 0``.  Columns are
ordered structural ``0..m-1``, slacks ``m..m+n-1``, then phase-one
artificials.  Nonbasic variables sit at a finite bound (or at zero when
free); upper bounds are handled by bound flips rather than extra rows.

Dantzig pricing is used until the objective has not improved for
``2 * (rows + cols)`` iterations, after which Bland's rule takes over for the
rest of the phase.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .milp import DEFAULT_TOLERANCES, SolverTolerances


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class SingularBasisError(RuntimeError):
    """Raised when the basis matrix cannot be refactored."""


# nonbasic position codes
BASIC, AT_LOWER, AT_UPPER, AT_ZERO = 0, 1, 2, 3


@dataclass(eq=False)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective_value: float
    basis: np.ndarray
    dual_values: np.ndarray
    iterations: int
    # full standard-form state, kept for cut separation
    tableau: np.ndarray | None = None
    values: np.ndarray | None = None
    position: np.ndarray | None = None
    col_lower: np.ndarray | None = None
    col_upper: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    n_struct: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    def tableau_row(self, i: int) -> tuple[np.ndarray, float]:
        """Row ``i`` of the optimal dictionary: ``x_B[i] + sum_N a_j x_j = rhs``.

        Returned coefficients cover every standard-form column (zero on basic
        columns other than the row's own).  ``rhs`` equals ``B^-1 b``.
        """
        if self.tableau is None:
            raise ValueError("no tableau available for a non-optimal solution")
        row = self.tableau[i]
        return row.copy(), float(row @ self.values)

    def slack_basic(self) -> np.ndarray:
        """Boolean mask over rows telling whether that row's slack is basic."""
        n = len(self.dual_values)
        pos = self.position[self.n_struct:self.n_struct + n]
        return pos == BASIC


def _nonbasic_start(lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.where(np.isfinite(lower), AT_LOWER, np.where(np.isfinite(upper), AT_UPPER, AT_ZERO))
    val = np.where(pos == AT_LOWER, lower, np.where(pos == AT_UPPER, upper, 0.0))
    return pos.astype(np.int8), val.astype(float)


class _Tableau:
    """Mutable simplex working state; private to one ``lp_solve`` call."""

    def __init__(self, M, b, lower, upper, basis, pos, x, tol, enterable):
        self.M = M  # standard-form matrix, never modified
        self.b = b
        self.lower = lower
        self.upper = upper
        self.basis = basis
        self.pos = pos
        self.x = x
        self.tol = tol
        self.enterable = enterable
        self.iterations = 0
        self.dirty = 0  # iterations since the last refactor
        self.T = None
        self.refactor()

    def refactor(self):
        B = self.M[:, self.basis]
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            try:
                lu = lu_factor(B, check_finite=False)
            except (np.linalg.LinAlgError, ValueError, LinAlgWarning) as exc:
                raise SingularBasisError(f"singular basis; basis columns {self.basis.tolist()}") from exc
        if np.abs(np.diag(lu[0])).min(initial=1.0) < 1e-11 * max(1.0, np.abs(lu[0]).max(initial=0.0)):
            raise SingularBasisError(f"singular basis; basis columns {self.basis.tolist()}")
        self.T = lu_solve(lu, self.M, check_finite=False)
        self.dirty = 0
        nb = self.pos != BASIC
        rhs = self.b - self.M[:, nb] @ self.x[nb]
        self.x[self.basis] = lu_solve(lu, rhs, check_finite=False)
        # identity columns exactly
        self.T[:, self.basis] = np.eye(len(self.basis))

    def reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.T

    def run(self, cost, max_iter) -> LpStatus:
        """Minimize ``cost @ x`` from the current basic feasible solution."""
        tol = self.tol
        nrows, ncols = self.T.shape
        stall_limit = 2 * (nrows + ncols)
        d = self.reduced_costs(cost)
        best_obj = float(cost @ self.x)
        no_improve = 0
        bland = False
        refactored_clean = self.dirty == 0
        while True:
            if self.iterations >= max_iter:
                return LpStatus.ITERATION_LIMIT
            eligible = self.enterable & (
                ((self.pos == AT_LOWER) & (d < -tol.pivot))
                | ((self.pos == AT_UPPER) & (d > tol.pivot))
                | ((self.pos == AT_ZERO) & (np.abs(d) > tol.pivot))
            )
            if not eligible.any():
                if refactored_clean:
                    return LpStatus.OPTIMAL
                # confirm optimality on a fresh factorization
                self.refactor()
                d = self.reduced_costs(cost)
                refactored_clean = True
                continue
            refactored_clean = False
            idx = np.flatnonzero(eligible)
            if bland:
                q = int(idx[0])
            else:
                q = int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if d[q] < 0 else -1.0
            if self.pos[q] == AT_UPPER:
                direction = -1.0
            elif self.pos[q] == AT_LOWER:
                direction = 1.0

            alpha = direction * self.T[:, q]
            xb = self.x[self.basis]
            lb = self.lower[self.basis]
            ub = self.upper[self.basis]
            ratios = np.full(nrows, np.inf)
            dec = alpha > tol.pivot
            inc = alpha < -tol.pivot
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xb[dec] - lb[dec]) / alpha[dec]
                ratios[inc] = (ub[inc] - xb[inc]) / (-alpha[inc])
            ratios[np.isnan(ratios)] = np.inf
            ratios = np.maximum(ratios, 0.0)
            flip = self.upper[q] - self.lower[q]
            t_row = ratios.min() if nrows else np.inf
            if not np.isfinite(t_row) and not np.isfinite(flip):
                return LpStatus.UNBOUNDED

            self.iterations += 1
            self.dirty += 1
            if flip <= t_row:
                # bound flip, basis unchanged
                t = flip
                self.x[self.basis] -= t * alpha
                self.pos[q] = AT_UPPER if direction > 0 else AT_LOWER
                self.x[q] = self.upper[q] if direction > 0 else self.lower[q]
            else:
                t = t_row
                ties = np.flatnonzero(ratios <= t_row + 1e-12)
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    # largest pivot among ties, then smallest basic index
                    mags = np.abs(alpha[ties])
                    best = ties[mags >= mags.max() - 1e-12]
                    r = int(best[np.argmin(self.basis[best])])
                leaving = int(self.basis[r])
                self.x[self.basis] -= t * alpha
                self.x[q] += direction * t
                if alpha[r] > 0:
                    self.pos[leaving] = AT_LOWER
                    self.x[leaving] = self.lower[leaving]
                else:
                    self.pos[leaving] = AT_UPPER
                    self.x[leaving] = self.upper[leaving]
                self._pivot(r, q)
                d = d - d[q] * self.T[r]
                d[q] = 0.0

            obj = float(cost @ self.x)
            if obj < best_obj - tol.obj * max(1.0, abs(best_obj)):
                best_obj = obj
                no_improve = 0
            else:
                no_improve += 1
                if no_improve >= stall_limit:
                    bland = True

    def _pivot(self, r: int, q: int):
        T = self.T
        piv = T[r, q]
        T[r] /= piv
        col = T[:, q].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, q] = 0.0
        T[r, q] = 1.0
        self.basis[r] = q
        self.pos[q] = BASIC


@dataclass(frozen=True)
class WarmStart:
    """Basis and nonbasic positions carried over from an earlier solve.

    Rows appended since that solve get their slack as the basic variable.
    """

    basis: np.ndarray
    position: np.ndarray | None = None

    @classmethod
    def from_solution(cls, sol: "LpSolution", n_rows: int) -> "WarmStart | None":
        if sol.position is None:
            return None
        m = sol.n_struct
        n_old = len(sol.dual_values)
        if np.any(sol.basis >= m + n_old):
            return None  # an artificial stayed basic
        extra = np.arange(m + n_old, m + n_rows)
        pos = np.concatenate([sol.position[:m + n_old], np.full(len(extra), BASIC, np.int8)])
        return cls(np.concatenate([sol.basis, extra]), pos)


def lp_solve(
    c,
    A,
    b,
    lower=None,
    upper=None,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    warm_basis=None,
) -> LpSolution:
    """Solve ``min c x  s.t.  A x <= b,  lower <= x <= upper``.

    ``warm_basis`` is a :class:`WarmStart` or an array of standard-form
    column indices (one per row).  Basic variables that violate their bounds
    under the new data are pinned to the violated bound and replaced by a
    phase-one artificial parallel to their column, so any nonsingular basis
    is a valid start.  A singular one falls back to the slack basis.
    Iteration-limit, infeasible and unbounded outcomes are reported through
    ``status``.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = c.shape[0]
    if A.size == 0:
        A = A.reshape(0, m)
    n = A.shape[0]
    b = np.asarray(b, dtype=float).reshape(n)
    lower = np.zeros(m) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(m, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if A.shape[1] != m:
        raise ValueError(f"matrix has {A.shape[1]} columns, objective has {m}")
    if np.any(lower > upper + tol.feas):
        return _infeasible(m, n)

    state = None
    if warm_basis is not None:
        if not isinstance(warm_basis, WarmStart):
            warm_basis = WarmStart(np.asarray(warm_basis, dtype=int))
        state = _warm_state(A, b, lower, upper, tol, warm_basis)
    if state is None:
        state = _cold_state(A, b, lower, upper, tol)
    k = state.M.shape[1] - (m + n)

    if k:
        cost1 = np.zeros(m + n + k)
        cost1[m + n:] = 1.0
        status = state.run(cost1, tol.max_iterations)
        if status == LpStatus.ITERATION_LIMIT:
            return _stopped(status, state, m, n)
        infeas = float(state.x[m + n:].sum())
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if infeas > tol.feas * scale:
            sol = _infeasible(m, n)
            sol.iterations = state.iterations
            return sol
        _drive_out_artificials(state, m + n, tol)
        # artificials are fixed at zero from now on
        state.upper[m + n:] = 0.0
        state.enterable[m + n:] = False
        state.x[m + n:] = np.where(state.pos[m + n:] == BASIC, state.x[m + n:], 0.0)

    cost = np.zeros(state.M.shape[1])
    cost[:m] = c
    status = state.run(cost, tol.max_iterations)
    if status != LpStatus.OPTIMAL:
        return _stopped(status, state, m, n)
    return _finish(state, cost, m, n)


def _cold_state(A, b, lower, upper, tol) -> _Tableau:
    n, m = A.shape
    pos_s, x_s = _nonbasic_start(lower, upper)
    resid = b - A @ x_s
    bad = np.flatnonzero(resid < 0)
    k = len(bad)
    art = np.zeros((n, k))
    art[bad, np.arange(k)] = -1.0
    M = np.hstack([A, np.eye(n), art])
    col_lower = np.concatenate([lower, np.zeros(n), np.zeros(k)])
    col_upper = np.concatenate([upper, np.full(n, np.inf), np.full(k, np.inf)])
    x = np.concatenate([x_s, np.maximum(resid, 0.0), -resid[bad]])
    pos = np.concatenate([pos_s, np.full(n, BASIC, np.int8), np.full(k, BASIC, np.int8)]).astype(np.int8)
    basis = np.arange(m, m + n)
    basis[bad] = m + n + np.arange(k)
    pos[m + bad] = AT_LOWER
    x[m + bad] = 0.0
    return _Tableau(M, b, col_lower, col_upper, basis, pos, x, tol, np.ones(m + n + k, dtype=bool))


def _warm_state(A, b, lower, upper, tol, warm: WarmStart) -> _Tableau | None:
    n, m = A.shape
    basis = np.asarray(warm.basis, dtype=int).copy()
    if basis.shape != (n,) or len(np.unique(basis)) != n or basis.min(initial=0) < 0 or basis.max(initial=0) >= m + n:
        return None
    M0 = np.hstack([A, np.eye(n)])
    col_lower = np.concatenate([lower, np.zeros(n)])
    col_upper = np.concatenate([upper, np.full(n, np.inf)])
    pos, x = _nonbasic_start(col_lower, col_upper)
    if warm.position is not None and len(warm.position) == m + n:
        wp = np.asarray(warm.position)
        ok_up = (wp == AT_UPPER) & np.isfinite(col_upper)
        ok_lo = (wp == AT_LOWER) & np.isfinite(col_lower)
        pos = np.where(ok_up, AT_UPPER, np.where(ok_lo, AT_LOWER, pos)).astype(np.int8)
        x = np.where(pos == AT_LOWER, col_lower, np.where(pos == AT_UPPER, col_upper, 0.0))
    pos[basis] = BASIC
    nb = pos != BASIC
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        try:
            lu = lu_factor(M0[:, basis], check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
    diag = np.abs(np.diag(lu[0]))
    if diag.min(initial=1.0) < 1e-9 * max(1.0, diag.max(initial=0.0)):
        return None
    xb = lu_solve(lu, b - M0[:, nb] @ x[nb], check_finite=False)
    if not np.all(np.isfinite(xb)):
        return None
    lb, ub = col_lower[basis], col_upper[basis]
    below = xb < lb - tol.feas
    above = xb > ub + tol.feas
    rows = np.flatnonzero(below | above)
    art_cols = []
    for k, r in enumerate(rows):
        j = basis[r]
        target = lb[r] if below[r] else ub[r]
        sigma = 1.0 if xb[r] > target else -1.0
        art_cols.append(sigma * M0[:, j])
        pos[j] = AT_LOWER if below[r] else AT_UPPER
        x[j] = target
        basis[r] = m + n + k
    k = len(rows)
    M = np.hstack([M0, np.array(art_cols).T.reshape(n, k)])
    col_lower = np.concatenate([col_lower, np.zeros(k)])
    col_upper = np.concatenate([col_upper, np.full(k, np.inf)])
    pos = np.concatenate([pos, np.full(k, BASIC, np.int8)])
    x = np.concatenate([x, np.zeros(k)])
    try:
        state = _Tableau(M, b, col_lower, col_upper, basis, pos, x, tol, np.ones(m + n + k, dtype=bool))
    except SingularBasisError:
        return None
    state.x[m + n:] = np.maximum(state.x[m + n:], 0.0)
    return state


def _drive_out_artificials(state: _Tableau, first_art: int, tol):
    for r in range(len(state.basis)):
        if state.basis[r] < first_art:
            continue
        row = state.T[r, :first_art]
        cand = np.flatnonzero((state.pos[:first_art] != BASIC) & (np.abs(row) > tol.pivot))
        if len(cand) == 0:
            continue  # redundant row; artificial stays basic at zero
        q = int(cand[np.argmax(np.abs(row[cand]))])
        leaving = int(state.basis[r])
        state._pivot(r, q)
        state.pos[leaving] = AT_LOWER
        state.x[leaving] = 0.0
        state.dirty += 1
    if state.dirty:
        state.refactor()


def _finish(state: _Tableau, cost, m, n) -> LpSolution:
    x = state.x[:m].copy()
    d = state.reduced_costs(cost)
    duals = -d[m:m + n]
    return LpSolution(
        status=LpStatus.OPTIMAL,
        x=x,
        objective_value=float(cost[:m] @ x),
        basis=state.basis.copy(),
        dual_values=duals,
        iterations=state.iterations,
        tableau=state.T,
        values=state.x,
        position=state.pos,
        col_lower=state.lower,
        col_upper=state.upper,
        reduced_costs=d,
        n_struct=m,
    )


def _stopped(status, state, m, n) -> LpSolution:
    return LpSolution(
        status=status,
        x=state.x[:m].copy(),
        objective_value=float("nan") if status != LpStatus.UNBOUNDED else -np.inf,
        basis=state.basis.copy(),
        dual_values=np.full(n, np.nan),
        iterations=state.iterations,
        n_struct=m,
    )


def _infeasible(m, n) -> LpSolution:
    return LpSolution(
        status=LpStatus.INFEASIBLE,
        x=np.full(m, np.nan),
        objective_value=np.inf,
        basis=np.zeros(0, dtype=int),
        dual_values=np.full(n, np.nan),
        iterations=0,
        n_struct=m,
    )
