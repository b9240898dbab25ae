"""Dense two-phase simplex for small linear programs.

Problems here have at most a few hundred variables, so a plain tableau is
enough.  Bland's rule is the default pivot rule because it cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MarketError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``maximize c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and
    ``lower <= x <= upper``.

    ``lower`` defaults to 0; entries may be ``-inf`` for free variables.
    ``upper`` defaults to ``+inf``.
    """

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.size == 0:
            raise MarketError("linear program needs at least one variable", "c")
        N = c.size

        def rows(A, b, name):
            if A is None or np.size(A) == 0:
                return np.zeros((0, N)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape != (b.size, N):
                raise MarketError(f"expected shape ({b.size}, {N}), got {A.shape}", name)
            return A, b

        A_ub, b_ub = rows(self.A_ub, self.b_ub, "A_ub")
        A_eq, b_eq = rows(self.A_eq, self.b_eq, "A_eq")
        lo = np.zeros(N) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.full(N, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != (N,) or hi.shape != (N,):
            raise MarketError(f"bounds must have {N} entries", "bounds")
        for name, arr in (("c", c), ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq)):
            if not np.all(np.isfinite(arr)):
                raise MarketError("coefficients must be finite", name)
        if np.any(lo == np.inf) or np.any(hi == -np.inf) or np.any(lo > hi):
            raise MarketError("inconsistent variable bounds", "bounds")
        for name, val in (("c", c), ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass(frozen=True, eq=False)
class LPResult:
    """Outcome of :func:`solve_lp`.

    ``duals_ub`` (nonnegative) and ``duals_eq`` are the multipliers of the
    inequality and equality rows, so that ``c = A_ub' y_ub + A_eq' y_eq``
    minus the reduced costs of variables at their bounds.
    """

    status: str
    value: float = float("nan")
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pivots: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.flatnonzero(col)
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _choose_entering(red: np.ndarray, allowed: np.ndarray, rule: str, tol: float) -> int:
    cand = np.flatnonzero((red > tol) & allowed)
    if cand.size == 0:
        return -1
    if rule == "bland":
        return int(cand[0])
    return int(cand[np.argmax(red[cand])])


def _choose_leaving(T: np.ndarray, col: int, basis: np.ndarray, tol: float) -> int:
    a = T[:-1, col]
    rhs = T[:-1, -1]
    pos = np.flatnonzero(a > tol)
    if pos.size == 0:
        return -1
    ratios = rhs[pos] / a[pos]
    best = ratios.min()
    ties = pos[ratios <= best + tol * max(1.0, abs(best))]
    # Bland tie-break: smallest basic variable index
    return int(ties[np.argmin(basis[ties])])


def _run(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray, rule: str, tol: float,
         max_pivots: int) -> tuple[str, int]:
    """Maximize the objective whose negated reduced costs sit in the last row."""
    pivots = 0
    degenerate_run = 0
    current = rule
    while pivots < max_pivots:
        red = -T[-1, :-1]
        col = _choose_entering(red, allowed, current, tol)
        if col < 0:
            return OPTIMAL, pivots
        row = _choose_leaving(T, col, basis, tol)
        if row < 0:
            return UNBOUNDED, pivots
        # steepest-gain pivoting can stall on degenerate vertices; fall back to Bland
        if T[row, -1] <= tol:
            degenerate_run += 1
            if degenerate_run > 50:
                current = "bland"
        else:
            degenerate_run = 0
            current = rule
        _pivot(T, row, col)
        basis[row] = col
        pivots += 1
    raise RuntimeError(f"simplex exceeded {max_pivots} pivots")


def solve_lp(lp: LinearProgram, rule: str = "bland", tol: float = 1e-9,
             max_pivots: int = 50_000) -> LPResult:
    """Solve ``lp`` with the two-phase tableau simplex.

    Args:
        lp: the program (maximization).
        rule: ``"bland"`` (smallest index) or ``"dantzig"`` (largest reduced
            cost, falling back to Bland on long degenerate runs).
        tol: pivot and optimality tolerance.
        max_pivots: safety cap per phase.

    Returns:
        An :class:`LPResult` whose status is ``"optimal"``, ``"infeasible"`` or
        ``"unbounded"``.
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    N = lp.n_vars
    lo, hi = lp.lower, lp.upper
    free = np.isneginf(lo)
    shift = np.where(free, 0.0, lo)
    # columns: shifted originals, negative parts of free variables
    free_idx = np.flatnonzero(free)
    n_cols = N + free_idx.size

    def expand(A):
        return np.hstack([A, -A[:, free_idx]]) if free_idx.size else A

    A_ub = expand(lp.A_ub)
    b_ub = lp.b_ub - lp.A_ub @ shift
    A_eq = expand(lp.A_eq)
    b_eq = lp.b_eq - lp.A_eq @ shift
    ub_idx = np.flatnonzero(np.isfinite(hi))
    if ub_idx.size:
        extra = np.zeros((ub_idx.size, n_cols))
        extra[np.arange(ub_idx.size), ub_idx] = 1.0
        # a free variable with an upper bound: x+ - x- <= hi
        for k, j in enumerate(ub_idx):
            if free[j]:
                extra[k, N + np.searchsorted(free_idx, j)] = -1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, hi[ub_idx] - shift[ub_idx]])
    c = np.concatenate([lp.c, -lp.c[free_idx]])

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    n_std = n_cols + m_ub
    A = np.zeros((m, n_std))
    A[:m_ub, :n_cols] = A_ub
    A[:m_ub, n_cols:] = np.eye(m_ub)
    A[m_ub:, :n_cols] = A_eq
    b = np.concatenate([b_ub, b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign

    # slack columns already form part of an identity where the row was not negated
    basis = np.full(m, -1)
    for r in range(m_ub):
        if sign[r] > 0:
            basis[r] = n_cols + r
    need_art = np.flatnonzero(basis < 0)
    n_art = need_art.size
    T = np.zeros((m + 1, n_std + n_art + 1))
    T[:m, :n_std] = A
    T[:m, -1] = b
    for k, r in enumerate(need_art):
        T[r, n_std + k] = 1.0
        basis[r] = n_std + k
    pivots = 0
    if n_art:
        # phase one: maximize -sum(artificials)
        T[-1, n_std:n_std + n_art] = 1.0
        for r in need_art:
            T[-1] -= T[r]
        allowed = np.ones(n_std + n_art, dtype=bool)
        status, k = _run(T, basis, allowed, rule, tol, max_pivots)
        pivots += k
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if -T[-1, -1] > 1e3 * tol * scale:
            return LPResult(INFEASIBLE, pivots=pivots)
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n_std:
                row = T[r, :n_std]
                cand = np.flatnonzero(np.abs(row) > 1e3 * tol)
                if cand.size:
                    col = int(cand[np.argmax(np.abs(row[cand]))])
                    _pivot(T, r, col)
                    basis[r] = col
                    pivots += 1
                else:
                    keep[r] = False
        T = np.vstack([T[:m][keep], T[-1:]])
        T = np.delete(T, np.s_[n_std:n_std + n_art], axis=1)
        basis = basis[keep]
        A = A[keep]
        kept_rows = np.flatnonzero(keep)
    else:
        kept_rows = np.arange(m)

    # phase two objective row: -(c_j - c_B B^-1 a_j)
    cost = np.concatenate([c, np.zeros(m_ub)])
    T[-1, :] = 0.0
    T[-1, :n_std] = -cost
    T[-1, -1] = 0.0
    for r, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] += cost[j] * T[r]
    status, k = _run(T, basis, np.ones(n_std, dtype=bool), rule, tol, max_pivots)
    pivots += k
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, pivots=pivots)

    z = np.zeros(n_std)
    z[basis] = T[:-1, -1]
    z = np.maximum(z, 0.0)
    x = z[:N].copy()
    if free_idx.size:
        x[free_idx] -= z[N:n_cols]
    x += shift
    value = float(lp.c @ x)

    # duals from the final basis: B' y = c_B on the sign-adjusted rows
    y_kept = np.linalg.lstsq(A[:, basis].T, cost[basis], rcond=None)[0]
    y = np.zeros(m)
    y[kept_rows] = y_kept
    y *= sign
    duals_ub = np.maximum(y[:lp.A_ub.shape[0]], 0.0)
    duals_eq = y[m_ub:]
    return LPResult(OPTIMAL, value, x, duals_ub, duals_eq, pivots)


def solve_lp_highs(lp: LinearProgram) -> LPResult:
    """Same contract as :func:`solve_lp`, backed by SciPy's HiGHS."""
    from scipy.optimize import linprog

    bounds = list(zip(np.where(np.isneginf(lp.lower), None, lp.lower),
                      np.where(np.isposinf(lp.upper), None, lp.upper)))
    res = linprog(-lp.c,
                  A_ub=lp.A_ub if lp.A_ub.size else None, b_ub=lp.b_ub if lp.b_ub.size else None,
                  A_eq=lp.A_eq if lp.A_eq.size else None, b_eq=lp.b_eq if lp.b_eq.size else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return LPResult(INFEASIBLE)
    if res.status == 3:
        return LPResult(UNBOUNDED)
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    duals_ub = -res.ineqlin.marginals if lp.A_ub.size else np.zeros(0)
    duals_eq = -res.eqlin.marginals if lp.A_eq.size else np.zeros(0)
    return LPResult(OPTIMAL, float(lp.c @ res.x), res.x, np.maximum(duals_ub, 0.0), duals_eq)
