"""Quasi-linear Fisher market primitives.

Buyers have budgets and linear valuations over divisible items; utility is
bundle value plus leftover money.  Everything here is an immutable value
object or a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import MarketError, UtilityDomainError

TIE_TOL = 1e-7
NUM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Market:
    """A Fisher market with linear quasi-linear buyers.

    Args:
        budgets: positive budget per buyer, shape (n,).
        valuations: nonnegative value per unit, shape (n, m).
        supplies: positive supply per item, shape (m,); defaults to ones.
        buyer_groups: optional label per buyer.
        item_groups: optional label per item.
        utility_kind: only ``"linear"`` is supported.
    """

    budgets: np.ndarray
    valuations: np.ndarray
    supplies: Optional[np.ndarray] = None
    buyer_groups: Optional[tuple] = None
    item_groups: Optional[tuple] = None
    utility_kind: str = "linear"

    def __post_init__(self):
        v = np.array(self.valuations, dtype=float)
        if v.ndim != 2:
            raise MarketError("must be a 2-d matrix", "valuations")
        n, m = v.shape
        if n == 0 or m == 0:
            raise MarketError("market needs at least one buyer and one item", "valuations")
        b = np.array(self.budgets, dtype=float).reshape(-1)
        s = np.ones(m) if self.supplies is None else np.array(self.supplies, dtype=float).reshape(-1)
        if b.shape != (n,):
            raise MarketError(f"expected {n} budgets, got {b.size}", "budgets")
        if s.shape != (m,):
            raise MarketError(f"expected {m} supplies, got {s.size}", "supplies")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise MarketError("valuations must be finite and nonnegative", "valuations")
        if not np.all(np.isfinite(b)) or np.any(b <= 0):
            raise MarketError("budgets must be strictly positive", "budgets")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise MarketError("supplies must be strictly positive", "supplies")
        if self.utility_kind != "linear":
            raise MarketError(f"unsupported utility kind {self.utility_kind!r}", "utility_kind")
        for name, labels, size in (("buyer_groups", self.buyer_groups, n), ("item_groups", self.item_groups, m)):
            if labels is not None:
                labels = tuple(labels)
                if len(labels) != size:
                    raise MarketError(f"expected {size} labels, got {len(labels)}", name)
                object.__setattr__(self, name, labels)
        object.__setattr__(self, "valuations", _frozen(v))
        object.__setattr__(self, "budgets", _frozen(b))
        object.__setattr__(self, "supplies", _frozen(s))

    @property
    def n_buyers(self) -> int:
        return self.valuations.shape[0]

    @property
    def m_items(self) -> int:
        return self.valuations.shape[1]

    @property
    def inert(self) -> np.ndarray:
        """Mask of buyers that value no item; their equilibrium utility is the budget."""
        return ~np.any(self.valuations > 0, axis=1)

    def buyers_in(self, label) -> list[int]:
        if self.buyer_groups is None:
            raise MarketError("market has no buyer group labels", "buyer_groups")
        return [i for i, g in enumerate(self.buyer_groups) if g == label]

    def items_in(self, label) -> list[int]:
        if self.item_groups is None:
            raise MarketError("market has no item group labels", "item_groups")
        return [j for j, g in enumerate(self.item_groups) if g == label]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.budgets, self.valuations, self.supplies):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Market):
            return NotImplemented
        return (
            np.array_equal(self.budgets, other.budgets)
            and np.array_equal(self.valuations, other.valuations)
            and np.array_equal(self.supplies, other.supplies)
            and self.buyer_groups == other.buyer_groups
            and self.item_groups == other.item_groups
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Allocation:
    """Quantities ``x`` (n x m) and leftover money ``delta`` (n,)."""

    x: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        d = np.array(self.delta, dtype=float).reshape(-1)
        if x.ndim != 2 or d.shape != (x.shape[0],):
            raise MarketError(f"allocation shapes {x.shape} and {d.shape} disagree", "allocation")
        # round-off from the solvers; anything larger is a caller bug
        if np.any(x < -1e-9) or np.any(d < -1e-9):
            raise MarketError("allocations and leftovers must be nonnegative", "allocation")
        object.__setattr__(self, "x", _frozen(np.maximum(x, 0.0)))
        object.__setattr__(self, "delta", _frozen(np.maximum(d, 0.0)))

    @classmethod
    def zeros(cls, market: Market) -> "Allocation":
        return cls(np.zeros(market.valuations.shape), np.zeros(market.n_buyers))

    def utilities(self, market: Market) -> np.ndarray:
        _check_shape(market, self.x)
        return np.einsum("ij,ij->i", market.valuations, self.x) + self.delta

    def supply_violation(self, market: Market) -> float:
        return float(np.max(self.x.sum(axis=0) - market.supplies, initial=0.0))

    def is_supply_feasible(self, market: Market, feas_tol: float = 1e-7) -> bool:
        return self.supply_violation(market) <= feas_tol


@dataclass(frozen=True, eq=False)
class PriceSystem:
    """Base item prices plus a per-(buyer, item) intervention matrix.

    Positive interventions are taxes, negative ones subsidies.
    """

    base: np.ndarray
    interventions: np.ndarray

    def __post_init__(self):
        p = np.array(self.base, dtype=float).reshape(-1)
        t = np.array(self.interventions, dtype=float)
        if t.ndim != 2 or t.shape[1] != p.size:
            raise MarketError(f"interventions shape {t.shape} does not match {p.size} items", "prices")
        object.__setattr__(self, "base", _frozen(p))
        object.__setattr__(self, "interventions", _frozen(t))

    @classmethod
    def plain(cls, base, n_buyers: int) -> "PriceSystem":
        base = np.asarray(base, dtype=float)
        return cls(base, np.zeros((n_buyers, base.size)))

    @property
    def effective(self) -> np.ndarray:
        """Prices each buyer actually faces, shape (n, m)."""
        return self.base[None, :] + self.interventions


@dataclass(frozen=True)
class DemandBundle:
    """A buyer's optimal response to effective prices.

    ``spend_items`` is the max bang-per-buck set; any split of
    ``spend_amount`` across it is optimal.  When ``indifferent`` is set the
    best ratio equals one and any split between spending and keeping money is
    optimal too (the bundle reports full spend).  ``unbounded`` marks a
    valued item with non-positive effective price; demand is then infinite
    and the remaining fields are meaningless.
    """

    spend_items: frozenset
    spend_amount: float
    leftover: float
    bang_per_buck: float
    indifferent: bool = False
    unbounded: bool = False
    saturating: frozenset = field(default_factory=frozenset)

    def quantities(self, effective_prices) -> np.ndarray:
        """Split the spend evenly (in money) across the spend items."""
        q = np.asarray(effective_prices, dtype=float)
        out = np.zeros(q.size)
        if self.unbounded or not self.spend_items or self.spend_amount <= 0:
            return out
        share = self.spend_amount / len(self.spend_items)
        for j in self.spend_items:
            out[j] = share / q[j]
        return out

    def best_utility(self, budget: float) -> float:
        """Utility of the bundle: r * spend + leftover."""
        if self.unbounded:
            return float("inf")
        return self.bang_per_buck * self.spend_amount + self.leftover


def _check_shape(market: Market, x) -> None:
    if np.shape(x) != market.valuations.shape:
        raise MarketError(f"allocation shape {np.shape(x)} != market shape {market.valuations.shape}", "x")


def linear_utility(valuation_row: Sequence[float], x_i: Sequence[float], delta_i: float) -> float:
    """Quasi-linear utility ``v_i . x_i + delta_i``."""
    v = np.asarray(valuation_row, dtype=float).reshape(-1)
    x = np.asarray(x_i, dtype=float).reshape(-1)
    if v.shape != x.shape:
        raise MarketError(f"valuation row has {v.size} entries but bundle has {x.size}", "x_i")
    return float(v @ x + delta_i)


def demand_response(
    valuation_row: Sequence[float],
    budget: float,
    effective_prices: Sequence[float],
    tie_tol: float = TIE_TOL,
    num_tol: float = NUM_TOL,
) -> DemandBundle:
    """Closed-form demand of a linear quasi-linear buyer.

    The buyer spends everything on the items with the best value per unit of
    money when that ratio exceeds one, keeps the budget when it is below one,
    and is indifferent at exactly one.  Ties are detected relative to the best
    ratio.
    """
    v = np.asarray(valuation_row, dtype=float).reshape(-1)
    q = np.asarray(effective_prices, dtype=float).reshape(-1)
    if v.shape != q.shape:
        raise MarketError(f"{v.size} valuations but {q.size} prices", "effective_prices")
    # a valued item at price <= 0, or any item at a negative price, is free money
    sat = (v > 0) & (q <= num_tol) | (q < -num_tol)
    if sat.any():
        return DemandBundle(
            frozenset(), 0.0, 0.0, float("inf"), unbounded=True,
            saturating=frozenset(int(j) for j in np.flatnonzero(sat)),
        )
    valued = (v > 0) & (q > num_tol)
    if not valued.any():
        return DemandBundle(frozenset(), 0.0, float(budget), 0.0)
    ratios = np.where(valued, v / np.where(valued, q, 1.0), 0.0)
    r = float(ratios.max())
    best = frozenset(int(j) for j in np.flatnonzero(valued & (ratios >= r * (1 - tie_tol))))
    if r > 1 + tie_tol:
        return DemandBundle(best, float(budget), 0.0, r)
    if r < 1 - tie_tol:
        return DemandBundle(best, 0.0, float(budget), r)
    return DemandBundle(best, float(budget), 0.0, r, indifferent=True)


def best_response_utility(valuations: np.ndarray, budgets: np.ndarray, effective: np.ndarray,
                          num_tol: float = NUM_TOL) -> np.ndarray:
    """Vectorized best attainable utility ``max(B_i, r_i B_i)`` per buyer.

    Returns ``inf`` for buyers facing a saturating item.
    """
    v = np.asarray(valuations, dtype=float)
    q = np.asarray(effective, dtype=float)
    sat = (((v > 0) & (q <= num_tol)) | (q < -num_tol)).any(axis=1)
    valued = (v > 0) & (q > num_tol)
    ratios = np.where(valued, v / np.where(valued, q, 1.0), 0.0)
    r = ratios.max(axis=1)
    out = np.maximum(budgets, r * budgets)
    out[sat] = np.inf
    return out


def eg_objective(market: Market, alloc: Allocation) -> float:
    """Quasi-linear Eisenberg-Gale objective ``sum_i B_i log u_i - delta_i``."""
    u = alloc.utilities(market)
    bad = np.flatnonzero(~(u > 0))
    if bad.size:
        raise UtilityDomainError(int(bad[0]), float(u[bad[0]]))
    return float(market.budgets @ np.log(u) - alloc.delta.sum())


def excess_demand(market: Market, alloc: Allocation) -> np.ndarray:
    """Per-item allocated quantity minus supply."""
    _check_shape(market, alloc.x)
    return alloc.x.sum(axis=0) - market.supplies
