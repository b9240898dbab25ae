"""Random markets with rejection sampling on the unconstrained equilibrium."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..audit import exposure
from ..constraints import LinearConstraintSet, build_aef, build_pbp, build_pip
from ..errors import ConvergenceError, RejectionBudgetError
from ..market import Market
from ..solver import SolverConfig, TaxSubsidyEquilibrium, solve_offset_eg

FAMILIES = ("pbp", "pip", "aef")


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one family of random-market experiments.

    Thresholds: ``pbp_ratio`` and ``pip_ratio`` cap the initial exposure of
    the disadvantaged side relative to the advantaged side;
    ``aef_share`` caps the initial share of protected supply held by the
    target buyers, and ``aef_floor`` is the floor imposed, as a share of that
    supply.
    """

    family: str = "pbp"
    n_markets: int = 50
    n_buyers: int = 8
    n_items: int = 10
    seed: int = 0
    pbp_ratio: float = 0.7
    pip_ratio: float = 0.7
    aef_share: float = 0.15
    aef_floor: float = 0.3
    opic_rounds: int = 50
    learning_rate: float = 0.2
    opic_markets: Optional[int] = None
    max_attempts: int = 10_000
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        for name in ("n_markets", "n_buyers", "n_items", "opic_rounds", "max_attempts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_buyers < 2 or self.n_items < 2:
            raise ValueError("need at least two buyers and two items to form groups")
        for name in ("pbp_ratio", "pip_ratio", "aef_share", "aef_floor"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class FamilySetup:
    """Constraint and audit sets of one family on one market.

    ``target`` are the buyers the constraint is meant to help; the
    buyer-item Pareto gap protects the exposure of ``gap_items`` to
    ``gap_buyers``; ``groups`` labels buyers for the envy audit.
    """

    constraints: LinearConstraintSet
    target: tuple
    gap_buyers: tuple
    gap_items: tuple
    groups: tuple


def _halves(k: int) -> tuple[tuple, tuple]:
    h = k // 2
    return tuple(range(h)), tuple(range(h, k))


def family_setup(family: str, market: Market, config: ExperimentConfig) -> FamilySetup:
    """First half of the buyers are the target group, first half of the
    items the disadvantaged (or constrained) group."""
    n, m = market.valuations.shape
    first_b, second_b = _halves(n)
    first_i, second_i = _halves(m)
    if family == "pbp":
        cs = build_pbp(market, first_b, first_i, second_i)
        groups = tuple("C" if i in first_b else "U" for i in range(n))
    elif family == "pip":
        cs = build_pip(market, first_i, first_b, second_b)
        groups = tuple("A" if i in first_b else "B" for i in range(n))
    elif family == "aef":
        floor = config.aef_floor * float(market.supplies[list(first_i)].sum())
        cs = build_aef(market, first_b, first_i, floor)
        groups = tuple("C" if i in first_b else "U" for i in range(n))
    else:
        raise ValueError(f"unknown family {family!r}")
    return FamilySetup(cs, first_b, first_b, first_i, groups)


def rejection_margin(family: str, market: Market, x: np.ndarray, config: ExperimentConfig) -> float:
    """Family statistic minus its threshold at the unconstrained allocation
    ``x``; the draw is accepted when this is negative (or zero for the
    parity families)."""
    n, m = market.valuations.shape
    first_b, second_b = _halves(n)
    first_i, second_i = _halves(m)
    if family == "pbp":
        return exposure(x, first_b, first_i) - config.pbp_ratio * exposure(x, first_b, second_i)
    if family == "pip":
        return exposure(x, first_b, first_i) - config.pip_ratio * exposure(x, second_b, first_i)
    if family == "aef":
        return exposure(x, first_b, first_i) - config.aef_share * float(market.supplies[list(first_i)].sum())
    raise ValueError(f"unknown family {family!r}")


def accepts(family: str, market: Market, x: np.ndarray, config: ExperimentConfig) -> bool:
    """Rejection condition evaluated at the unconstrained allocation ``x``."""
    margin = rejection_margin(family, market, x, config)
    return margin < 0 if family == "aef" else margin <= 0


@dataclass(frozen=True, eq=False)
class SampledMarket:
    market: Market
    base: TaxSubsidyEquilibrium
    attempts: int


def sample_market(config: ExperimentConfig, rng_seed, family: Optional[str] = None) -> SampledMarket:
    """Draw markets from ``rng_seed`` until one passes the family condition.

    Valuations are i.i.d. uniform on [0, 1], budgets and supplies are 1.

    Raises:
        RejectionBudgetError: ``config.max_attempts`` draws all failed.
    """
    family = family or config.family
    rng = np.random.default_rng(rng_seed)
    n, m = config.n_buyers, config.n_items
    closest = None
    for attempt in range(1, config.max_attempts + 1):
        v = rng.uniform(0.0, 1.0, size=(n, m))
        market = Market(np.ones(n), v, np.ones(m))
        try:
            base = solve_offset_eg(market, None, config.solver)
        except ConvergenceError:
            continue
        if accepts(family, market, base.alloc.x, config):
            return SampledMarket(market, base, attempt)
        miss = rejection_margin(family, market, base.alloc.x, config)
        closest = miss if closest is None else min(closest, miss)
    raise RejectionBudgetError(config.max_attempts, 0, family, closest)


def generate_market(config: ExperimentConfig, rng_seed) -> Market:
    """A random market satisfying the family's rejection condition."""
    return sample_market(config, rng_seed).market


def market_seed(config: ExperimentConfig, index: int) -> list:
    """Per-market RNG seed derived from the experiment seed and index."""
    return [config.seed, FAMILIES.index(config.family), index]
