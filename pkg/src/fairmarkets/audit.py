"""Welfare and fairness audits of market outcomes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import MarketError
from .lp import LinearProgram, solve_lp
from .market import Market
from .solver import TaxSubsidyEquilibrium

GAP_TOL = 1e-9


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _groups_per_buyer(groups, n: int) -> list:
    """Accept either one label per buyer or a mapping label -> buyers."""
    if isinstance(groups, Mapping):
        labels = [None] * n
        for label, members in groups.items():
            for i in members:
                if not 0 <= int(i) < n:
                    raise MarketError(f"buyer {i} out of range", "groups")
                if labels[int(i)] is not None:
                    raise MarketError(f"buyer {i} appears in two groups", "groups")
                labels[int(i)] = label
        if any(lab is None for lab in labels):
            raise MarketError("groups must cover every buyer", "groups")
        return labels
    labels = list(groups)
    if len(labels) != n:
        raise MarketError(f"expected {n} group labels, got {len(labels)}", "groups")
    return labels


@dataclass(frozen=True, eq=False)
class EnvyReport:
    """Budget-adjusted envy between every ordered pair of buyers.

    ``envy[i, k]`` is how much buyer ``i`` would gain from buyer ``k``'s
    bundle and leftover scaled by ``B_i / B_k``.
    """

    envy: np.ndarray
    groups: tuple

    def group_max(self) -> dict:
        """Largest envy between two members of the same group, per group."""
        out = {}
        for g in dict.fromkeys(self.groups):
            idx = [i for i, lab in enumerate(self.groups) if lab == g]
            out[g] = float(self.envy[np.ix_(idx, idx)].max())
        return out

    @property
    def max_within(self) -> float:
        return max(self.group_max().values())

    @property
    def max_cross(self) -> float:
        lab = np.array(self.groups, dtype=object)
        cross = lab[:, None] != lab[None, :]
        return float(self.envy[cross].max()) if cross.any() else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["buyer", "other", "buyer_group", "other_group", "same_group", "envy"])
        n = self.envy.shape[0]
        for i in range(n):
            for k in range(n):
                if i != k:
                    w.writerow([i, k, self.groups[i], self.groups[k], int(self.groups[i] == self.groups[k]),
                                _fmt(self.envy[i, k])])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"group {g}: max within-group envy {_fmt(v)}" for g, v in self.group_max().items()]
        lines.append(f"max cross-group envy {_fmt(self.max_cross)}")
        return "\n".join(lines)


def budget_adjusted_envy(market: Market, eq, groups) -> EnvyReport:
    """Pairwise envy at each buyer's own valuations.

    Args:
        market: the market.
        eq: a :class:`TaxSubsidyEquilibrium` or an ``Allocation``.
        groups: one label per buyer, or a mapping from label to buyers.
    """
    alloc = eq.alloc if isinstance(eq, TaxSubsidyEquilibrium) else eq
    v, B = market.valuations, market.budgets
    labels = _groups_per_buyer(groups, market.n_buyers)
    own = alloc.utilities(market)
    # value of k's bundle to i, scaled by B_i / B_k
    cross = (v @ alloc.x.T + alloc.delta[None, :]) * (B[:, None] / B[None, :])
    envy = np.maximum(0.0, cross - own[:, None])
    np.fill_diagonal(envy, 0.0)
    return EnvyReport(envy, tuple(labels))


@dataclass(frozen=True, eq=False)
class ParetoGapReport:
    """Largest total value gain that leaves no buyer below the baseline.

    ``certificate`` is the improving allocation when ``gap`` is positive.
    """

    gap: float
    variant: str
    certificate: Optional[np.ndarray] = None
    baseline_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> str:
        return f"{self.variant} Pareto gap {_fmt(self.gap)}"


def _gap_lp(market: Market, baseline_x, buyer_set=(), item_set=(), variant="buyer") -> ParetoGapReport:
    v, s = market.valuations, market.supplies
    n, m = v.shape
    base = np.asarray(baseline_x, dtype=float)
    if base.shape != (n, m):
        raise MarketError(f"baseline shape {base.shape} != market shape {(n, m)}", "baseline_x")
    floors = np.einsum("ij,ij->i", v, base)
    nx = n * m
    rows = [np.kron(np.ones(n), np.eye(m))]
    rhs = [s]
    # utility floors, skipping buyers who value nothing
    active = np.flatnonzero(v.any(axis=1))
    U = np.zeros((active.size, nx))
    for r, i in enumerate(active):
        U[r, i * m:(i + 1) * m] = -v[i]
    rows.append(U)
    rhs.append(-floors[active])
    S = sorted(set(int(i) for i in buyer_set))
    Q = sorted(set(int(j) for j in item_set))
    if S and Q:
        row = np.zeros(nx)
        for i in S:
            row[i * m + np.array(Q)] = -1.0
        rows.append(row[None, :])
        rhs.append([-base[np.ix_(S, Q)].sum()])
    A = np.vstack(rows)
    b = np.concatenate([np.asarray(r, dtype=float) for r in rhs])
    res = solve_lp(LinearProgram(v.reshape(-1), A, b))
    if not res.ok:
        raise MarketError(f"Pareto-gap program is {res.status}; is the baseline supply-feasible?", "baseline_x")
    gap = float(max(0.0, res.value - floors.sum()))
    cert = res.x.reshape(n, m) if gap > GAP_TOL else None
    return ParetoGapReport(gap, variant, cert, floors)


def buyer_pareto_gap(market: Market, baseline_x) -> ParetoGapReport:
    """Gain in total bundle value over ``baseline_x`` keeping every buyer's
    bundle value at least its baseline and respecting supply."""
    return _gap_lp(market, baseline_x, variant="buyer")


def buyer_item_pareto_gap(market: Market, baseline_x, buyer_set, item_set) -> ParetoGapReport:
    """As :func:`buyer_pareto_gap`, also keeping the exposure of
    ``item_set`` to ``buyer_set`` at least its baseline level."""
    if not list(buyer_set) or not list(item_set):
        return _gap_lp(market, baseline_x, variant="buyer")
    return _gap_lp(market, baseline_x, buyer_set, item_set, variant="buyer-item")


def exposure(x, buyer_set, item_set) -> float:
    """Total quantity of ``item_set`` held by ``buyer_set``."""
    x = np.asarray(x, dtype=float)
    S = sorted(set(int(i) for i in buyer_set))
    Q = sorted(set(int(j) for j in item_set))
    if not S or not Q:
        return 0.0
    if S[0] < 0 or S[-1] >= x.shape[0] or Q[0] < 0 or Q[-1] >= x.shape[1]:
        raise MarketError("exposure sets out of range", "sets")
    return float(x[np.ix_(S, Q)].sum())


@dataclass(frozen=True)
class ExposureReport:
    """Exposure for named (buyer set, item set) pairs."""

    values: dict

    def summary(self) -> str:
        return "\n".join(f"{name}: {_fmt(val)}" for name, val in self.values.items())


def exposure_report(x, pairs: Mapping[str, tuple]) -> ExposureReport:
    return ExposureReport({name: exposure(x, S, Q) for name, (S, Q) in pairs.items()})


@dataclass(frozen=True, eq=False)
class WelfareDelta:
    """Per-buyer utility change and its summary for target and other buyers."""

    deltas: np.ndarray
    base_utilities: np.ndarray
    constrained_utilities: np.ndarray
    target: tuple

    def _stats(self, idx) -> dict:
        d = self.deltas[list(idx)]
        if d.size == 0:
            return {"count": 0, "mean": float("nan"), "p5": float("nan"), "p95": float("nan")}
        return {"count": int(d.size), "mean": float(d.mean()),
                "p5": float(np.percentile(d, 5)), "p95": float(np.percentile(d, 95))}

    @property
    def others(self) -> tuple:
        t = set(self.target)
        return tuple(i for i in range(self.deltas.size) if i not in t)

    def summary(self) -> dict:
        return {"target": self._stats(self.target), "other": self._stats(self.others)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["buyer", "group", "u_base", "u_constrained", "delta"])
        t = set(self.target)
        for i in range(self.deltas.size):
            w.writerow([i, "target" if i in t else "other", _fmt(self.base_utilities[i]),
                        _fmt(self.constrained_utilities[i]), _fmt(self.deltas[i])])
        return buf.getvalue()


def welfare_delta(market: Market, base, constrained, target_buyers: Sequence[int]) -> WelfareDelta:
    """Utility change from ``base`` to ``constrained`` for every buyer."""
    ub = (base.alloc if isinstance(base, TaxSubsidyEquilibrium) else base).utilities(market)
    uc = (constrained.alloc if isinstance(constrained, TaxSubsidyEquilibrium) else constrained).utilities(market)
    target = tuple(sorted(set(int(i) for i in target_buyers)))
    if target and (target[0] < 0 or target[-1] >= market.n_buyers):
        raise MarketError("target buyer out of range", "target_buyers")
    return WelfareDelta(uc - ub, ub, uc, target)
