"""Linear allocation constraints and the multiplier-to-intervention map.

Constraints are stored as sparse ``(row, buyer, item, coef)`` triplets over
the allocation matrix.  Inequalities always read ``A1 x <= b1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConstraintError, MarketError
from .market import Market

Triplet = tuple[int, int, int, float]


def _terms_array(terms: Iterable[Sequence]) -> np.ndarray:
    rows = [(int(k), int(i), int(j), float(c)) for k, i, j, c in terms]
    arr = np.array(rows, dtype=[("k", "i8"), ("i", "i8"), ("j", "i8"), ("c", "f8")]) if rows else \
        np.zeros(0, dtype=[("k", "i8"), ("i", "i8"), ("j", "i8"), ("c", "f8")])
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearConstraintSet:
    """Sparse linear constraints ``A1 x <= b1`` and ``A2 x = b2``.

    ``labels`` names the inequality rows first, then the equality rows.
    """

    shape: tuple[int, int]
    ineq_terms: np.ndarray
    ineq_rhs: np.ndarray
    eq_terms: np.ndarray
    eq_rhs: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        n, m = self.shape
        object.__setattr__(self, "shape", (int(n), int(m)))
        for name in ("ineq", "eq"):
            terms = getattr(self, f"{name}_terms")
            if not isinstance(terms, np.ndarray) or terms.dtype.names != ("k", "i", "j", "c"):
                terms = _terms_array(terms)
            rhs = np.array(getattr(self, f"{name}_rhs"), dtype=float).reshape(-1)
            rhs.setflags(write=False)
            K = rhs.size
            if terms.size:
                if terms["k"].min() < 0 or terms["k"].max() >= K:
                    raise ConstraintError(f"{name} term references a row outside 0..{K - 1}")
                if terms["i"].min() < 0 or terms["i"].max() >= n or terms["j"].min() < 0 or terms["j"].max() >= m:
                    raise ConstraintError(f"{name} term references a cell outside the {n}x{m} allocation")
                if not np.all(np.isfinite(terms["c"])):
                    raise ConstraintError(f"{name} coefficients must be finite")
                keys = set()
                for k, i, j, _ in terms.tolist():
                    if (k, i, j) in keys:
                        raise ConstraintError(f"duplicate {name} term for row {k}, cell ({i}, {j})")
                    keys.add((k, i, j))
            nonzero = set(int(k) for k, c in zip(terms["k"], terms["c"]) if c != 0)
            empty = sorted(set(range(K)) - nonzero)
            if empty:
                raise ConstraintError(f"{name} row {empty[0]} is identically zero")
            object.__setattr__(self, f"{name}_terms", terms)
            object.__setattr__(self, f"{name}_rhs", rhs)
        K = self.n_ineq + self.n_eq
        labels = tuple(self.labels) if self.labels else tuple(
            [f"ineq{k}" for k in range(self.n_ineq)] + [f"eq{k}" for k in range(self.n_eq)])
        if len(labels) != K:
            raise ConstraintError(f"expected {K} labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, market_or_shape) -> "LinearConstraintSet":
        shape = market_or_shape.valuations.shape if isinstance(market_or_shape, Market) else market_or_shape
        return cls(shape, [], [], [], [])

    @property
    def n_ineq(self) -> int:
        return self.ineq_rhs.size

    @property
    def n_eq(self) -> int:
        return self.eq_rhs.size

    def is_empty(self) -> bool:
        return self.n_ineq == 0 and self.n_eq == 0

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense operators of shape (K1, n*m) and (K2, n*m), row-major cells."""
        n, m = self.shape
        out = []
        for terms, K in ((self.ineq_terms, self.n_ineq), (self.eq_terms, self.n_eq)):
            A = np.zeros((K, n * m))
            if terms.size:
                np.add.at(A, (terms["k"], terms["i"] * m + terms["j"]), terms["c"])
            out.append(A)
        return out[0], out[1]

    def __add__(self, other: "LinearConstraintSet") -> "LinearConstraintSet":
        if self.shape != other.shape:
            raise ConstraintError(f"cannot combine constraint sets over {self.shape} and {other.shape}")

        def shift(terms, by):
            return [(k + by, i, j, c) for k, i, j, c in terms.tolist()]

        return LinearConstraintSet(
            self.shape,
            self.ineq_terms.tolist() + shift(other.ineq_terms, self.n_ineq),
            np.concatenate([self.ineq_rhs, other.ineq_rhs]),
            self.eq_terms.tolist() + shift(other.eq_terms, self.n_eq),
            np.concatenate([self.eq_rhs, other.eq_rhs]),
            self.labels[: self.n_ineq] + other.labels[: other.n_ineq]
            + self.labels[self.n_ineq:] + other.labels[other.n_ineq:],
        )

    def duplicate_supports(self) -> list[tuple[str, str]]:
        """Pairs of rows touching exactly the same cells (possible redundancy)."""
        supports = []
        for terms, K, offset in ((self.ineq_terms, self.n_ineq, 0), (self.eq_terms, self.n_eq, self.n_ineq)):
            for k in range(K):
                sel = terms["k"] == k
                supports.append((self.labels[offset + k], frozenset(zip(terms["i"][sel].tolist(), terms["j"][sel].tolist()))))
        dupes = []
        for a in range(len(supports)):
            for b in range(a + 1, len(supports)):
                if supports[a][1] == supports[b][1]:
                    dupes.append((supports[a][0], supports[b][0]))
        return dupes


@dataclass(frozen=True, eq=False)
class Multipliers:
    """Lagrange multipliers: ``lambda_ineq >= 0`` and signed ``lambda_eq``."""

    lambda_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        a = np.array(self.lambda_ineq, dtype=float).reshape(-1)
        b = np.array(self.lambda_eq, dtype=float).reshape(-1)
        if np.any(a < 0):
            raise ConstraintError("inequality multipliers must be nonnegative")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "lambda_ineq", a)
        object.__setattr__(self, "lambda_eq", b)

    @classmethod
    def zeros(cls, cs: LinearConstraintSet) -> "Multipliers":
        return cls(np.zeros(cs.n_ineq), np.zeros(cs.n_eq))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.lambda_ineq, self.lambda_eq])


@dataclass(frozen=True, eq=False)
class ConstraintResidual:
    """``A1 x - b1``, ``A2 x - b2`` and the worst violation."""

    ineq_residual: np.ndarray
    eq_residual: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(max(np.max(self.ineq_residual, initial=0.0),
                         np.max(np.abs(self.eq_residual), initial=0.0)))


def _index_set(values, upper: int, what: str) -> list[int]:
    out = sorted({int(v) for v in values})
    if out and (out[0] < 0 or out[-1] >= upper):
        raise ConstraintError(f"{what} index out of range 0..{upper - 1}: {out}")
    return out


def _fmt(idx: Sequence[int]) -> str:
    return ",".join(str(i) for i in idx)


def build_pbp(market: Market, constrained_buyers, item_group_A, item_group_B,
              alpha: Optional[float] = None) -> LinearConstraintSet:
    """Per-buyer parity: each constrained buyer buys ``alpha`` times as much of
    group A as of group B.

    ``alpha`` defaults to ``|B| / |A|``.
    """
    n, m = market.valuations.shape
    buyers = _index_set(constrained_buyers, n, "buyer")
    A = _index_set(item_group_A, m, "item")
    B = _index_set(item_group_B, m, "item")
    if not buyers:
        raise ConstraintError("per-buyer parity needs at least one constrained buyer")
    if not A or not B:
        raise ConstraintError("both item groups must be nonempty")
    if set(A) & set(B):
        raise ConstraintError(f"item groups overlap on {sorted(set(A) & set(B))}")
    if alpha is None:
        alpha = len(B) / len(A)
    if not alpha > 0:
        raise ConstraintError(f"alpha must be positive, got {alpha}")
    terms: list[Triplet] = []
    for k, i in enumerate(buyers):
        terms += [(k, i, j, 1.0) for j in A]
        terms += [(k, i, j, -float(alpha)) for j in B]
    labels = tuple(f"pbp[buyer={i}]" for i in buyers)
    return LinearConstraintSet((n, m), [], [], terms, np.zeros(len(buyers)), labels)


def build_pip(market: Market, constrained_items, buyer_group_A, buyer_group_B,
              alpha: Optional[float] = None) -> LinearConstraintSet:
    """Per-item parity: each constrained item goes to buyer group A in
    ``alpha`` times the quantity it goes to group B.

    ``alpha`` defaults to ``|A| / |B|`` (equal exposure per buyer).
    """
    n, m = market.valuations.shape
    items = _index_set(constrained_items, m, "item")
    A = _index_set(buyer_group_A, n, "buyer")
    B = _index_set(buyer_group_B, n, "buyer")
    if set(A) & set(B):
        raise ConstraintError(f"buyer groups overlap on {sorted(set(A) & set(B))}")
    if not items:
        return LinearConstraintSet.empty(market)
    if not A or not B:
        raise ConstraintError("both buyer groups must be nonempty")
    if alpha is None:
        alpha = len(A) / len(B)
    if not alpha > 0:
        raise ConstraintError(f"alpha must be positive, got {alpha}")
    terms: list[Triplet] = []
    for k, j in enumerate(items):
        terms += [(k, i, j, 1.0) for i in A]
        terms += [(k, i, j, -float(alpha)) for i in B]
    labels = tuple(f"pip[item={j}]" for j in items)
    return LinearConstraintSet((n, m), [], [], terms, np.zeros(len(items)), labels)


def build_aef(market: Market, constrained_buyers, protected_items, floor: float) -> LinearConstraintSet:
    """Aggregate exposure floor: buyers C jointly receive at least ``floor``
    units of items P, stored as ``-sum x <= -floor``."""
    n, m = market.valuations.shape
    buyers = _index_set(constrained_buyers, n, "buyer")
    items = _index_set(protected_items, m, "item")
    if not buyers or not items:
        raise ConstraintError("exposure floor needs nonempty buyer and item sets")
    floor = float(floor)
    if not np.isfinite(floor) or floor < 0:
        raise ConstraintError(f"floor must be a nonnegative number, got {floor}")
    available = float(market.supplies[items].sum())
    if floor > available + 1e-12:
        raise ConstraintError(f"floor {floor} exceeds the available supply {available} of items {items}")
    terms = [(0, i, j, -1.0) for i in buyers for j in items]
    return LinearConstraintSet((n, m), terms, [-floor], [], [],
                               (f"aef[buyers={_fmt(buyers)};items={_fmt(items)}]",))


def raw_constraints(market: Market, ineq=(), eq=()) -> LinearConstraintSet:
    """Build from row dicts ``{"terms": [[i, j, coef], ...], "rhs": b, "label": s}``."""
    ineq_terms, ineq_rhs, eq_terms, eq_rhs, ineq_labels, eq_labels = [], [], [], [], [], []
    for rows, terms, rhs, labels, kind in ((ineq, ineq_terms, ineq_rhs, ineq_labels, "ineq"),
                                            (eq, eq_terms, eq_rhs, eq_labels, "eq")):
        for k, row in enumerate(rows):
            terms += [(k, i, j, c) for i, j, c in row["terms"]]
            rhs.append(float(row.get("rhs", 0.0)))
            labels.append(str(row.get("label", f"{kind}{k}")))
    return LinearConstraintSet(market.valuations.shape, ineq_terms, ineq_rhs, eq_terms, eq_rhs,
                               tuple(ineq_labels + eq_labels))


def _apply(terms: np.ndarray, K: int, x: np.ndarray) -> np.ndarray:
    out = np.zeros(K)
    if terms.size:
        np.add.at(out, terms["k"], terms["c"] * x[terms["i"], terms["j"]])
    return out


def evaluate_constraints(cs: LinearConstraintSet, x) -> ConstraintResidual:
    """Residuals ``A1 x - b1`` and ``A2 x - b2``."""
    x = np.asarray(x, dtype=float)
    if x.shape != cs.shape:
        raise MarketError(f"allocation shape {x.shape} != constraint shape {cs.shape}", "x")
    return ConstraintResidual(_apply(cs.ineq_terms, cs.n_ineq, x) - cs.ineq_rhs,
                              _apply(cs.eq_terms, cs.n_eq, x) - cs.eq_rhs)


def interventions_from_multipliers(cs: LinearConstraintSet, mult: Multipliers) -> np.ndarray:
    """Dense price interventions ``sum_k A_kij lambda_k`` over both operators."""
    l1 = np.asarray(mult.lambda_ineq, dtype=float)
    l2 = np.asarray(mult.lambda_eq, dtype=float)
    if l1.size != cs.n_ineq or l2.size != cs.n_eq:
        raise ConstraintError(
            f"expected {cs.n_ineq} inequality and {cs.n_eq} equality multipliers, got {l1.size} and {l2.size}")
    if np.any(l1 < 0):
        raise ConstraintError("inequality multipliers must be nonnegative")
    out = np.zeros(cs.shape)
    for terms, lam in ((cs.ineq_terms, l1), (cs.eq_terms, l2)):
        if terms.size:
            np.add.at(out, (terms["i"], terms["j"]), terms["c"] * lam[terms["k"]])
    return out
