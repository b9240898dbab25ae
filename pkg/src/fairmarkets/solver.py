"""Eisenberg-Gale solvers for quasi-linear markets with price interventions.

The solve proceeds in stages:

1. A dual subgradient pass over item prices and constraint multipliers,
   with each buyer best-responding in closed form.  The averaged primal
   iterate gives a first utility estimate.
2. A linear program in which each ``B_i log u_i`` is replaced by its
   piecewise-linear interpolation on a geometric grid refined around the
   current estimate.  Its solution fixes the active structure: which
   (buyer, item) pairs trade, which buyers keep money, which items are
   scarce and which inequality rows bind.
3. Newton's method on the KKT equations restricted to that structure.
4. An independent KKT check.  If Newton converged to the right utilities
   but the structure was off, prices are recovered from an exact LP dual and
   the allocation is repaired inside the demand sets.

Everything the caller sees is validated by :func:`verify_equilibrium`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import LinearConstraintSet, Multipliers, evaluate_constraints, interventions_from_multipliers
from .errors import ConstraintError, ConvergenceError, InfeasibleConstraintsError, MarketError, UnboundedDemandError
from .lp import LinearProgram, solve_lp, solve_lp_highs
from .market import NUM_TOL, Allocation, Market, PriceSystem, best_response_utility

STRUCT_TOL = 1e-9


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes for the dual subgradient pass.

    ``constant`` uses ``c`` every iteration; ``polynomial`` uses
    ``c / (t + 1) ** exponent``.
    """

    kind: str = "polynomial"
    c: float = 0.5
    exponent: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown step schedule {self.kind!r}")
        if not self.c > 0:
            raise ValueError("step constant must be positive")

    def step(self, t: int) -> float:
        if self.kind == "constant":
            return self.c
        return self.c / (t + 1) ** self.exponent


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    Args:
        tol: target for the largest KKT residual.
        max_iters: iterations of the dual subgradient pass.
        step_schedule: step sizes for that pass.
        seed: reserved for randomized tie breaking; the current pipeline is
            deterministic and does not draw from it.
        lp_rounds: piecewise-linear refinement rounds before giving up.
        grid_ratio: ratio between consecutive global breakpoints.
        lp_method: ``"simplex"`` (built-in) or ``"highs"`` (SciPy).
    """

    tol: float = 1e-6
    max_iters: int = 100
    step_schedule: StepSchedule = field(default_factory=StepSchedule)
    seed: int = 0
    lp_rounds: int = 12
    grid_ratio: float = 1.1
    lp_method: str = "simplex"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.lp_rounds < 1:
            raise ValueError("max_iters and lp_rounds must be at least 1")
        if not self.grid_ratio > 1:
            raise ValueError("grid_ratio must exceed 1")
        if self.lp_method not in ("simplex", "highs"):
            raise ValueError(f"unknown lp_method {self.lp_method!r}")


@dataclass(frozen=True, eq=False)
class KktReport:
    """Residuals of a candidate tax-subsidy equilibrium.

    ``item_nonneg_slack`` is ``mu_ij = p_j + pbar_ij - v_ij B_i / u_i`` and
    ``leftover_slack`` is ``nu_i = 1 - B_i / u_i``.  ``max_residual`` folds
    every condition into one number: demand gaps, clearing, budgets,
    constraint feasibility and slackness, sign conditions on mu and nu, and
    nonnegativity of prices, quantities and inequality multipliers.
    """

    demand_gap: np.ndarray
    clearing_residual: np.ndarray
    budget_residual: np.ndarray
    comp_slack_ineq: np.ndarray
    ineq_violation: np.ndarray
    eq_residual: np.ndarray
    item_nonneg_slack: np.ndarray
    leftover_slack: np.ndarray
    max_residual: float

    def ok(self, tol: float) -> bool:
        return bool(self.max_residual <= tol)


@dataclass(frozen=True, eq=False)
class TaxSubsidyEquilibrium:
    """Allocation, prices and multipliers of a solved market.

    ``prices.interventions`` is the full intervention each buyer faces; for a
    constrained solve it equals the multiplier-induced matrix.
    """

    alloc: Allocation
    prices: PriceSystem
    multipliers: Multipliers
    kkt: KktReport
    constraints: Optional[LinearConstraintSet] = None
    diagnostics: dict = field(default_factory=dict)

    def utilities(self, market: Market) -> np.ndarray:
        return self.alloc.utilities(market)


# --------------------------------------------------------------------------
# verification


def _kkt(market: Market, x, delta, p, pbar, A1=None, b1=None, A2=None, b2=None,
         lam1=None, lam2=None, tol: float = 1e-6) -> KktReport:
    v, B, s = market.valuations, market.budgets, market.supplies
    n, m = v.shape
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    p = np.asarray(p, dtype=float)
    q = p[None, :] + pbar
    u = np.einsum("ij,ij->i", v, x) + delta
    best = best_response_utility(v, B, q)
    gap = np.maximum(0.0, best - u)
    col = x.sum(axis=0)
    clearing = np.where(p > tol, np.abs(col - s), np.maximum(0.0, col - s))
    budget = np.abs(np.einsum("ij,ij->i", q, x) + delta - B)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(u > 0, B / np.where(u > 0, u, 1.0), np.inf)
    mu = q - v * share[:, None]
    mu = np.where(np.isfinite(mu), mu, -np.inf)
    nu = 1.0 - share
    xf = x.reshape(-1)
    if A1 is not None and A1.shape[0]:
        r1 = A1 @ xf - b1
        cs1 = lam1 * np.abs(r1)
        viol1 = np.maximum(0.0, r1)
    else:
        cs1 = viol1 = np.zeros(0)
        lam1 = np.zeros(0)
    r2 = (A2 @ xf - b2) if A2 is not None and A2.shape[0] else np.zeros(0)
    held = delta > tol
    nu_bad = np.where(held, np.abs(nu), np.maximum(0.0, -nu))
    with np.errstate(invalid="ignore"):
        mu_x = np.abs(np.where(x != 0, mu * x, 0.0)).ravel()
    parts = [
        gap, clearing, budget, cs1, viol1, np.abs(r2),
        np.maximum(0.0, -mu).ravel(), mu_x, nu_bad,
        np.maximum(0.0, -p), np.maximum(0.0, -x).ravel(), np.maximum(0.0, -delta), np.maximum(0.0, -lam1),
    ]
    worst = max((float(np.max(a)) for a in parts if a.size), default=0.0)
    if not np.isfinite(worst):
        worst = float("inf")
    return KktReport(gap, clearing, budget, cs1, viol1, r2, mu, nu, worst)


def verify_equilibrium(market: Market, eq: TaxSubsidyEquilibrium, tol: float = 1e-6) -> KktReport:
    """Recompute every equilibrium residual from scratch.

    Demand gaps come from the closed-form best response at effective prices.
    An item must clear exactly when its base price exceeds ``tol`` and may be
    left over otherwise.  Constraint residuals and complementary slackness
    are included when ``eq.constraints`` is set.
    """
    x, d = eq.alloc.x, eq.alloc.delta
    if x.shape != market.valuations.shape:
        raise MarketError(f"allocation shape {x.shape} != market shape {market.valuations.shape}", "alloc")
    if eq.prices.interventions.shape != market.valuations.shape:
        raise MarketError("intervention matrix does not match the market", "prices")
    cs = eq.constraints
    if cs is None or cs.is_empty():
        return _kkt(market, x, d, eq.prices.base, eq.prices.interventions, tol=tol)
    A1, A2 = cs.dense()
    lam1 = eq.multipliers.lambda_ineq if eq.multipliers.lambda_ineq.size == cs.n_ineq else np.zeros(cs.n_ineq)
    return _kkt(market, x, d, eq.prices.base, eq.prices.interventions, A1, cs.ineq_rhs, A2, cs.eq_rhs,
                lam1, eq.multipliers.lambda_eq, tol=tol)


# --------------------------------------------------------------------------
# the pipeline


class _Problem:
    """Dense data shared by the stages of one solve."""

    def __init__(self, market: Market, pbar: np.ndarray, cs: Optional[LinearConstraintSet], config: SolverConfig):
        self.market = market
        self.v = market.valuations
        self.B = market.budgets
        self.s = market.supplies
        self.n, self.m = self.v.shape
        self.pbar = np.asarray(pbar, dtype=float)
        self.cs = cs
        if cs is not None and not cs.is_empty():
            self.A1, self.A2 = cs.dense()
            self.b1, self.b2 = cs.ineq_rhs, cs.eq_rhs
        else:
            self.A1 = np.zeros((0, self.n * self.m))
            self.A2 = np.zeros((0, self.n * self.m))
            self.b1 = self.b2 = np.zeros(0)
        self.K1, self.K2 = self.A1.shape[0], self.A2.shape[0]
        self.config = config
        self.umax = self.v @ self.s + self.B

    def lp(self, lp: LinearProgram):
        if self.config.lp_method == "highs":
            return solve_lp_highs(lp)
        return solve_lp(lp, rule="dantzig")

    def total_pbar(self, lam1, lam2) -> np.ndarray:
        t = self.pbar.copy()
        if self.K1:
            t += (self.A1.T @ lam1).reshape(self.n, self.m)
        if self.K2:
            t += (self.A2.T @ lam2).reshape(self.n, self.m)
        return t

    def kkt(self, x, d, p, lam1, lam2) -> KktReport:
        return _kkt(self.market, x, d, p, self.total_pbar(lam1, lam2), self.A1, self.b1, self.A2, self.b2,
                    lam1, lam2, tol=self.config.tol)


def _dual_pass(P: _Problem) -> np.ndarray:
    """Subgradient steps on (p, lambda) with averaged primal iterates.

    Returns the utility estimate of the averaged allocation.
    """
    v, B, s, n, m = P.v, P.B, P.s, P.n, P.m
    p = np.full(m, B.sum() / s.sum())
    lam1 = np.zeros(P.K1)
    lam2 = np.zeros(P.K2)
    xs = np.zeros((n, m))
    ds = np.zeros(n)
    weight = 0.0
    scale = B.mean() / s.mean()
    rows = np.arange(n)
    floor = np.where(v > 0, 1e-6 * scale, 0.0)
    has_rows = P.K1 + P.K2 > 0
    pbar = P.pbar
    for t in range(P.config.max_iters):
        if has_rows:
            pbar = P.total_pbar(lam1, lam2)
        q = np.maximum(p + pbar, floor)
        ratio = np.divide(v, q, out=np.zeros_like(v), where=q > 0)
        j = ratio.argmax(axis=1)
        qj = q[rows, j]
        buy = ratio[rows, j] >= 1
        xj = np.where(buy, np.minimum(B / np.where(buy, qj, 1.0), n * s[j]), 0.0)
        d = np.where(buy, 0.0, B)
        w = t + 1.0
        np.add.at(xs, (rows, j), w * xj)
        ds += w * d
        weight += w
        g = P.config.step_schedule.step(t) * scale
        col = np.bincount(j, weights=xj, minlength=m)
        p = np.maximum(0.0, p + g * np.minimum(col - s, n * s) / s)
        if has_rows:
            x = np.zeros((n, m))
            x[rows, j] = xj
            xf = x.reshape(-1)
            if P.K1:
                lam1 = np.maximum(0.0, lam1 + g * (P.A1 @ xf - P.b1))
            if P.K2:
                lam2 = lam2 + g * (P.A2 @ xf - P.b2)
    xa, da = xs / weight, ds / weight
    return np.einsum("ij,ij->i", v, xa) + da


class _Breakpoints:
    def __init__(self, P: _Problem):
        self.P = P
        ratio = P.config.grid_ratio
        self.pts = []
        for i in range(P.n):
            lo, hi = P.B[i], P.umax[i]
            if hi <= lo * (1 + 1e-12):
                self.pts.append({lo})
                continue
            k = int(np.ceil(np.log(hi / lo) / np.log(ratio)))
            grid = lo * ratio ** np.arange(k)
            self.pts.append(set(grid.tolist()) | {hi})

    def refine(self, u: np.ndarray, h: float, width: int = 5) -> None:
        P = self.P
        for i in range(P.n):
            if P.umax[i] <= P.B[i] * (1 + 1e-12):
                continue
            for a in u[i] * (1 + h * np.arange(-width, width + 1)):
                if P.B[i] <= a <= P.umax[i]:
                    self.pts[i].add(float(a))

    def arrays(self):
        return [np.array(sorted(p)) for p in self.pts]


def _pwl_lp(P: _Problem, bps):
    """Piecewise-linear surrogate of the (offset, constrained) EG program.

    Variables: x (n*m), delta (n), then breakpoint weights per buyer.
    """
    n, m = P.n, P.m
    nx = n * m
    sizes = [a.size for a in bps]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    N = nx + n + offs[-1]
    c = np.zeros(N)
    c[:nx] = -P.pbar.reshape(-1)
    c[nx:nx + n] = -1.0
    A_eq = np.zeros((2 * n + P.K2, N))
    b_eq = np.zeros(2 * n + P.K2)
    for i in range(n):
        a = bps[i]
        cols = nx + n + offs[i] + np.arange(a.size)
        c[cols] = P.B[i] * np.log(a)
        A_eq[i, i * m:(i + 1) * m] = P.v[i]
        A_eq[i, nx + i] = 1.0
        A_eq[i, cols] = -a
        A_eq[n + i, cols] = 1.0
        b_eq[n + i] = 1.0
    if P.K2:
        A_eq[2 * n:, :nx] = P.A2
        b_eq[2 * n:] = P.b2
    A_ub = np.zeros((m + P.K1, N))
    for j in range(m):
        A_ub[j, j:nx:m] = 1.0
    b_ub = np.concatenate([P.s, P.b1])
    if P.K1:
        A_ub[m:, :nx] = P.A1
    res = P.lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq))
    if not res.ok:
        return None
    x = res.x[:nx].reshape(n, m)
    d = res.x[nx:nx + n]
    u = np.array([bps[i] @ res.x[nx + n + offs[i]: nx + n + offs[i + 1]] for i in range(n)])
    p = res.duals_ub[:m]
    lam1 = res.duals_ub[m:]
    lam2 = res.duals_eq[2 * n:]
    return x, d, u, p, lam1, lam2


def _newton(P: _Problem, x0, d0, u0, p0, lam1_0, lam2_0, iters: int = 40):
    """Newton on the KKT system with the support read off ``(x0, d0)``."""
    n, m, v, B, s = P.n, P.m, P.v, P.B, P.s
    E = np.argwhere(x0 > STRUCT_TOL)
    L = np.flatnonzero(d0 > STRUCT_TOL)
    J = np.flatnonzero(x0.sum(axis=0) > s - STRUCT_TOL)
    x0f = x0.reshape(-1)
    act1 = np.flatnonzero(np.abs(P.A1 @ x0f - P.b1) <= STRUCT_TOL) if P.K1 else np.zeros(0, dtype=int)
    nE, nL, nJ, nA, K2 = len(E), L.size, J.size, act1.size, P.K2
    # unknown layout: p_J | lam1_act | lam2 | beta | x_E | delta_L
    oP, oA, o2, oB = 0, nJ, nJ + nA, nJ + nA + K2
    oX = oB + n
    oD = oX + nE
    N = oD + nL
    Ei, Ej = E[:, 0], E[:, 1]
    flatE = Ei * m + Ej
    jpos = -np.ones(m, dtype=int)
    jpos[J] = np.arange(nJ)
    A1E = P.A1[np.ix_(act1, flatE)] if nA else np.zeros((0, nE))
    A2E = P.A2[:, flatE] if K2 else np.zeros((0, nE))
    pbarE = P.pbar[Ei, Ej]
    vE = v[Ei, Ej]

    z = np.zeros(N)
    z[oP:oA] = p0[J]
    z[oA:o2] = lam1_0[act1] if nA else []
    z[o2:oB] = lam2_0
    z[oB:oX] = np.clip(B / np.maximum(u0, 1e-300), 1e-6, 1.0)
    z[oX:oD] = x0[Ei, Ej]
    z[oD:] = d0[L]

    M = nE + nL + n + nJ + nA + K2
    Jac = np.zeros((M, N))
    # constant parts of the Jacobian
    r = 0
    rowsE = np.arange(nE)
    hasJ = jpos[Ej] >= 0
    Jac[rowsE[hasJ], oP + jpos[Ej[hasJ]]] = 1.0
    if nA:
        Jac[rowsE[:, None], oA + np.arange(nA)[None, :]] = A1E.T
    if K2:
        Jac[rowsE[:, None], o2 + np.arange(K2)[None, :]] = A2E.T
    Jac[rowsE, oB + Ei] = -vE
    r = nE
    Jac[r + np.arange(nL), oB + L] = 1.0
    r += nL
    rU = r
    Jac[rU + Ei, oX + np.arange(nE)] = vE
    Jac[rU + L, oD + np.arange(nL)] = 1.0
    r += n
    rC = r
    Jac[rC + jpos[Ej[hasJ]], oX + np.arange(nE)[hasJ]] = 1.0
    r += nJ
    rA = r
    if nA:
        Jac[rA:rA + nA, oX:oD] = A1E
    r += nA
    if K2:
        Jac[r:r + K2, oX:oD] = A2E

    res = np.inf
    for _ in range(iters):
        pJ, l1, l2, beta, xE, dL = z[oP:oA], z[oA:o2], z[o2:oB], z[oB:oX], z[oX:oD], z[oD:]
        F = np.empty(M)
        pE = np.where(hasJ, pJ[np.maximum(jpos[Ej], 0)] if nJ else 0.0, 0.0)
        F[:nE] = pE + pbarE + (A1E.T @ l1 if nA else 0.0) + (A2E.T @ l2 if K2 else 0.0) - beta[Ei] * vE
        F[nE:nE + nL] = beta[L] - 1.0
        util = np.zeros(n)
        np.add.at(util, Ei, vE * xE)
        util[L] += dL
        F[rU:rU + n] = util - B / beta
        colsum = np.zeros(m)
        np.add.at(colsum, Ej, xE)
        F[rC:rC + nJ] = colsum[J] - s[J]
        if nA:
            F[rA:rA + nA] = A1E @ xE - P.b1[act1]
        if K2:
            F[rA + nA:] = A2E @ xE - P.b2
        res = float(np.abs(F).max(initial=0.0))
        if res < 1e-13:
            break
        Jac[rU + np.arange(n), oB + np.arange(n)] = B / beta ** 2
        dz = np.linalg.lstsq(Jac, -F, rcond=None)[0]
        step = 1.0
        nb = z[oB:oX] + dz[oB:oX]
        if np.any(nb <= 0):
            neg = dz[oB:oX] < 0
            step = min(1.0, 0.9 * float(np.min(-z[oB:oX][neg] / dz[oB:oX][neg])))
        z = z + step * dz
    p = np.zeros(m)
    p[J] = z[oP:oA]
    lam1 = np.zeros(P.K1)
    lam1[act1] = z[oA:o2]
    lam2 = z[o2:oB].copy()
    beta = z[oB:oX]
    x = np.zeros((n, m))
    x[Ei, Ej] = z[oX:oD]
    d = np.zeros(n)
    d[L] = z[oD:]
    return x, d, p, lam1, lam2, beta, res


def _price_lp(P: _Problem, beta: np.ndarray):
    """Prices and multipliers from an exact LP dual at fixed ``beta``."""
    n, m = P.n, P.m
    nx = n * m
    c = (beta[:, None] * P.v - P.pbar).reshape(-1)
    A_ub = np.zeros((m + P.K1, nx))
    for j in range(m):
        A_ub[j, j::m] = 1.0
    if P.K1:
        A_ub[m:] = P.A1
    res = P.lp(LinearProgram(c, A_ub, np.concatenate([P.s, P.b1]), P.A2 if P.K2 else None,
                             P.b2 if P.K2 else None))
    if not res.ok:
        return None
    return res.duals_ub[:m], res.duals_ub[m:], res.duals_eq


def _repair_lp(P: _Problem, p, lam1, lam2):
    """Pick a point in every demand set that clears supply and meets the
    constraints, minimizing total violation at fixed prices."""
    n, m, v, B, s = P.n, P.m, P.v, P.B, P.s
    tol = P.config.tol
    q = p[None, :] + P.total_pbar(lam1, lam2)
    if np.any((v > 0) & (q <= NUM_TOL)):
        return None
    ratio = np.where(v > 0, v / np.where(q > 0, q, 1.0), 0.0)
    r = ratio.max(axis=1)
    D = (v > 0) & (ratio >= r[:, None] * (1 - 1e-9)) & (r[:, None] >= 1 - 1e-9)
    # zero-value items at zero price are also in the demand set
    D |= (v == 0) & (np.abs(q) <= NUM_TOL)
    keep_money = r <= 1 + 1e-9
    pairs = np.argwhere(D)
    nP = len(pairs)
    flat = pairs[:, 0] * m + pairs[:, 1]
    # variables: x_pairs | delta | slack+ / slack- for budget (n), clearing (m), A1 (K1), A2 (K2)
    K1, K2 = P.K1, P.K2
    nS = n + m + K1 + K2
    N = nP + n + 2 * nS
    oS = nP + n
    A_eq = np.zeros((n + m + K1 + K2, N))
    b_eq = np.zeros(n + m + K1 + K2)
    A_eq[pairs[:, 0], np.arange(nP)] = q[pairs[:, 0], pairs[:, 1]]
    A_eq[np.arange(n), nP + np.arange(n)] = 1.0
    b_eq[:n] = B
    A_eq[n + pairs[:, 1], np.arange(nP)] = 1.0
    b_eq[n:n + m] = s
    if K1:
        A_eq[n + m:n + m + K1, :nP] = P.A1[:, flat]
        b_eq[n + m:n + m + K1] = P.b1
    if K2:
        A_eq[n + m + K1:, :nP] = P.A2[:, flat]
        b_eq[n + m + K1:] = P.b2
    A_eq[np.arange(nS), oS + np.arange(nS)] = 1.0
    A_eq[np.arange(nS), oS + nS + np.arange(nS)] = -1.0
    upper = np.full(N, np.inf)
    upper[nP:nP + n] = np.where(keep_money, np.inf, 0.0)
    # one-sided rows: items with zero price may be left over, slack rows may be slack
    free_under = np.concatenate([np.zeros(n, bool), p <= tol, lam1 <= tol, np.zeros(K2, bool)])
    c = np.zeros(N)
    c[oS:oS + nS] = -1.0
    c[oS + nS:] = -1.0
    c[oS:oS + nS][free_under] = 0.0
    upper[oS + nS:][free_under] = 0.0
    res = P.lp(LinearProgram(c, A_eq=A_eq, b_eq=b_eq, upper=upper))
    if not res.ok:
        return None
    x = np.zeros((n, m))
    x[pairs[:, 0], pairs[:, 1]] = res.x[:nP]
    return x, res.x[nP:nP + n]


def _solve(market: Market, pbar: np.ndarray, cs: Optional[LinearConstraintSet], config: SolverConfig,
           warm_utilities: Optional[np.ndarray] = None):
    P = _Problem(market, pbar, cs, config)
    diag = {"lp_rounds": 0, "finish": None}
    if warm_utilities is not None:
        u_est = np.clip(np.asarray(warm_utilities, dtype=float), P.B, P.umax)
        h = 0.01
    else:
        u_est = np.clip(_dual_pass(P), P.B, P.umax)
        h = 0.02
    bps = _Breakpoints(P)
    bps.refine(u_est, h)
    best = None
    for rnd in range(config.lp_rounds):
        diag["lp_rounds"] = rnd + 1
        sol = _pwl_lp(P, bps.arrays())
        if sol is None:
            raise ConvergenceError("piecewise-linear subproblem failed", best[0] if best else None)
        x0, d0, u0, p0, l10, l20 = sol
        x, d, p, lam1, lam2, beta, res = _newton(P, x0, d0, u0, p0, l10, l20)

        def candidates():
            yield x, d, p, lam1, lam2, "newton"
            if res < 1e-9 and np.all(beta > 0):
                fixed = _price_lp(P, beta)
                if fixed is not None:
                    rep = _repair_lp(P, *fixed)
                    if rep is not None:
                        yield rep[0], rep[1], fixed[0], fixed[1], fixed[2], "repair"

        for cx, cd, cp, c1, c2, how in candidates():
            rep = P.kkt(cx, cd, cp, c1, c2)
            if best is None or rep.max_residual < best[1].max_residual:
                best = ((cx, cd, cp, c1, c2), rep)
            if rep.max_residual <= config.tol:
                diag["finish"] = how
                return P, (cx, cd, cp, c1, c2), rep, diag
        u_new = np.clip(np.einsum("ij,ij->i", P.v, x) + d, P.B, P.umax) if res < 1e-6 else u0
        h /= 4
        bps.refine(u_new, h)
        if not np.allclose(u_new, u0, rtol=1e-3):
            bps.refine(u0, h)
    diag["finish"] = "failed"
    return P, best[0], best[1], diag


def _package(P: _Problem, sol, rep: KktReport, diag: dict, with_constraints: bool) -> TaxSubsidyEquilibrium:
    x, d, p, lam1, lam2 = sol
    total = P.total_pbar(lam1, lam2)
    mult = Multipliers(np.maximum(lam1, 0.0), lam2) if with_constraints else Multipliers()
    return TaxSubsidyEquilibrium(
        Allocation(np.maximum(x, 0.0), np.maximum(d, 0.0)),
        PriceSystem(np.maximum(p, 0.0), total),
        mult, rep, P.cs if with_constraints else None, diag)


def _check_unbounded(P: _Problem, sol) -> None:
    x, d, p, lam1, lam2 = sol
    q = p[None, :] + P.total_pbar(lam1, lam2)
    bad = np.argwhere((P.v > 0) & (q <= NUM_TOL))
    if bad.size:
        raise UnboundedDemandError("effective prices reached zero on valued items",
                                   [tuple(map(int, b)) for b in bad])


def solve_offset_eg(market: Market, interventions=None, config: Optional[SolverConfig] = None,
                    warm_start: Optional[TaxSubsidyEquilibrium] = None) -> TaxSubsidyEquilibrium:
    """Equilibrium under fixed price interventions.

    Maximizes ``sum_i B_i log u_i - delta_i - sum_ij pbar_ij x_ij``; the
    supply duals are the base prices.  ``interventions=None`` solves the
    plain market.

    Args:
        market: the market.
        interventions: n x m intervention matrix (taxes positive).
        config: solver settings.
        warm_start: a previous equilibrium of the same market whose
            utilities seed the breakpoint refinement.

    Raises:
        ConvergenceError: no candidate met ``config.tol``.  The exception
            carries the best candidate and its report.
        UnboundedDemandError: the best candidate prices a valued item at zero.
    """
    config = config or SolverConfig()
    n, m = market.valuations.shape
    pbar = np.zeros((n, m)) if interventions is None else np.asarray(interventions, dtype=float)
    if pbar.shape != (n, m):
        raise MarketError(f"interventions must have shape {(n, m)}, got {pbar.shape}", "interventions")
    if not np.all(np.isfinite(pbar)):
        raise MarketError("interventions must be finite", "interventions")
    warm = None
    if warm_start is not None and warm_start.alloc.x.shape == (n, m):
        warm = warm_start.alloc.utilities(market)
    P, sol, rep, diag = _solve(market, pbar, None, config, warm)
    eq = _package(P, sol, rep, diag, with_constraints=False)
    if rep.max_residual > config.tol:
        _check_unbounded(P, sol)
        raise ConvergenceError(
            f"offset EG solve stopped at KKT residual {rep.max_residual:.3e} > {config.tol:.1e}", eq, rep)
    return eq


def feasibility_presolve(market: Market, cs: LinearConstraintSet, config: Optional[SolverConfig] = None) -> dict:
    """Phase-one check that some supply-feasible allocation meets ``cs``.

    Returns ``{"total_violation", "row_violations", "slater_margin"}`` where
    the Slater margin is the largest uniform slack achievable on the
    inequality rows (capped at 1; ``inf`` when there are none).

    Raises:
        InfeasibleConstraintsError: the minimal total violation is positive.
    """
    config = config or SolverConfig()
    P = _Problem(market, np.zeros(market.valuations.shape), cs, config)
    n, m, K1, K2 = P.n, P.m, P.K1, P.K2
    nx = n * m
    supply = np.zeros((m, nx))
    for j in range(m):
        supply[j, j::m] = 1.0
    # x | e1 (K1) | e2+ (K2) | e2- (K2)
    N = nx + K1 + 2 * K2
    c = np.concatenate([np.zeros(nx), -np.ones(K1 + 2 * K2)])
    A_ub = np.zeros((m + K1, N))
    A_ub[:m, :nx] = supply
    A_ub[m:, :nx] = P.A1
    A_ub[m:, nx:nx + K1] = -np.eye(K1)
    A_eq = np.zeros((K2, N))
    A_eq[:, :nx] = P.A2
    A_eq[:, nx + K1:nx + K1 + K2] = np.eye(K2)
    A_eq[:, nx + K1 + K2:] = -np.eye(K2)
    res = P.lp(LinearProgram(c, A_ub, np.concatenate([P.s, P.b1]), A_eq if K2 else None, P.b2 if K2 else None))
    total = -res.value
    e = res.x[nx:]
    rows = np.concatenate([e[:K1], e[K1:K1 + K2] + e[K1 + K2:]])
    cert = {"total_violation": float(total),
            "row_violations": {cs.labels[k]: float(rows[k]) for k in range(K1 + K2) if rows[k] > 1e-12}}
    if total > 1e-9:
        raise InfeasibleConstraintsError(
            f"constraints cannot be met by any supply-feasible allocation (minimal violation {total:.3g})", cert)
    margin = float("inf")
    if K1:
        # max t s.t. A1 x + t <= b1, A2 x = b2, supply, t <= 1
        c2 = np.zeros(nx + 1)
        c2[-1] = 1.0
        A_ub2 = np.zeros((m + K1, nx + 1))
        A_ub2[:m, :nx] = supply
        A_ub2[m:, :nx] = P.A1
        A_ub2[m:, -1] = 1.0
        lower = np.zeros(nx + 1)
        lower[-1] = -np.inf
        upper = np.full(nx + 1, np.inf)
        upper[-1] = 1.0
        res2 = P.lp(LinearProgram(c2, A_ub2, np.concatenate([P.s, P.b1]), P.A2 if K2 else None,
                                  P.b2 if K2 else None, lower, upper))
        margin = float(res2.value) if res2.ok else float("nan")
    cert["slater_margin"] = margin
    return cert


def solve_constrained_eg(market: Market, cs: LinearConstraintSet, config: Optional[SolverConfig] = None,
                         warm_start: Optional[TaxSubsidyEquilibrium] = None) -> TaxSubsidyEquilibrium:
    """Constrained EG program and its supporting multipliers.

    The returned interventions are ``A1' lambda1 + A2' lambda2``, so buyers
    facing them demand exactly the constrained optimum.

    Raises:
        InfeasibleConstraintsError: from the feasibility pre-solve.
        ConvergenceError: no candidate met ``config.tol``.
    """
    config = config or SolverConfig()
    if cs.shape != market.valuations.shape:
        raise ConstraintError(f"constraint shape {cs.shape} does not match market {market.valuations.shape}")
    pre = feasibility_presolve(market, cs, config)
    warm = warm_start.alloc.utilities(market) if warm_start is not None else None
    P, sol, rep, diag = _solve(market, np.zeros(market.valuations.shape), cs, config, warm)
    diag["slater_margin"] = pre["slater_margin"]
    eq = _package(P, sol, rep, diag, with_constraints=True)
    if rep.max_residual > config.tol:
        _check_unbounded(P, sol)
        raise ConvergenceError(
            f"constrained EG solve stopped at KKT residual {rep.max_residual:.3e} > {config.tol:.1e}", eq, rep)
    return eq


# --------------------------------------------------------------------------
# brute-force oracle


def _buyer_objective(w: np.ndarray, B: float) -> np.ndarray:
    # best leftover for a fixed bundle value w is max(0, B - w)
    return B * np.log(np.maximum(w, B)) - np.maximum(0.0, B - w)


def brute_force_eg(market: Market, cs: Optional[LinearConstraintSet] = None, grid_step: float = 0.01):
    """Grid search over allocations for tiny markets.

    Every quantity ranges over multiples of ``grid_step`` up to the item's
    supply.  Leftover money is set to ``max(0, B_i - v_i . x_i)``, the best
    choice for a fixed bundle.  Constraint rows must hold to within 1e-9;
    if no grid point does, rows are relaxed to ``grid_step``.

    Returns:
        ``(Allocation, objective)`` for the best grid point.

    Raises:
        MarketError: more than six (buyer, item) cells or a bad step.
    """
    v, B, s = market.valuations, market.budgets, market.supplies
    n, m = v.shape
    if n * m > 6:
        raise MarketError(f"brute force is limited to n*m <= 6, got {n * m}", "market")
    if not 0 < grid_step <= 0.1:
        raise MarketError("grid_step must lie in (0, 0.1]", "grid_step")
    cs = cs if cs is not None else LinearConstraintSet.empty(market)
    A1, A2 = cs.dense()
    # per item: all buyer columns on the grid that respect supply
    cols = []
    for j in range(m):
        k = int(np.floor(s[j] / grid_step + 1e-9))
        levels = np.arange(k + 1) * grid_step
        grid = np.array(list(itertools.product(range(k + 1), repeat=n)))
        cols.append(levels[grid[grid.sum(axis=1) <= k]])
    last = cols[-1]
    best_val, best_x = -np.inf, None
    for slack in (1e-9, grid_step * (1 + 1e-9)):
        for combo in itertools.product(*[range(len(c)) for c in cols[:-1]]):
            x = np.zeros((len(last), n, m))
            for j, idx in enumerate(combo):
                x[:, :, j] = cols[j][idx]
            x[:, :, -1] = last
            flat = x.reshape(len(last), -1)
            ok = np.ones(len(last), dtype=bool)
            if cs.n_ineq:
                ok &= np.all(flat @ A1.T - cs.ineq_rhs <= slack, axis=1)
            if cs.n_eq:
                ok &= np.all(np.abs(flat @ A2.T - cs.eq_rhs) <= slack, axis=1)
            if not ok.any():
                continue
            w = np.einsum("kij,ij->ki", x, v)
            val = sum(_buyer_objective(w[:, i], B[i]) for i in range(n))
            val = np.where(ok, val, -np.inf)
            k = int(np.argmax(val))
            if val[k] > best_val:
                best_val, best_x = float(val[k]), x[k].copy()
        if best_x is not None:
            break
    if best_x is None:
        raise InfeasibleConstraintsError("no grid allocation satisfies the constraints", {"grid_step": grid_step})
    w = np.einsum("ij,ij->i", v, best_x)
    return Allocation(best_x, np.maximum(0.0, B - w)), best_val
