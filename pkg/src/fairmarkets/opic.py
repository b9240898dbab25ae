"""Online price-intervention learning.

Each round sets interventions from the current multipliers, observes the
market's equilibrium allocation and moves the multipliers along the
observed constraint violation.  Only allocations are observed; valuations
are never read.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .constraints import ConstraintResidual, LinearConstraintSet, Multipliers, evaluate_constraints, \
    interventions_from_multipliers
from .errors import OracleError
from .market import Allocation, Market
from .solver import SolverConfig, TaxSubsidyEquilibrium, solve_offset_eg


@runtime_checkable
class EquilibriumOracle(Protocol):
    """Anything that returns an equilibrium allocation for given interventions."""

    def query(self, interventions: np.ndarray) -> Allocation:
        ...


class SolverOracle:
    """Self-play oracle backed by :func:`solve_offset_eg`.

    Consecutive queries warm-start from the previous equilibrium, which is
    what makes long runs cheap.
    """

    def __init__(self, market: Market, config: Optional[SolverConfig] = None, warm: bool = True):
        self.market = market
        self.config = config or SolverConfig()
        self.warm = warm
        self.last: Optional[TaxSubsidyEquilibrium] = None

    @property
    def fingerprint(self) -> str:
        return self.market.fingerprint()

    def query(self, interventions: np.ndarray) -> Allocation:
        eq = solve_offset_eg(self.market, interventions, self.config, self.last if self.warm else None)
        self.last = eq
        return eq.alloc


class ReplayOracle:
    """Returns recorded allocations in order, ignoring the interventions."""

    def __init__(self, allocations: Sequence, fingerprint: str = "replay"):
        self.allocations = [a if isinstance(a, Allocation) else Allocation(a, np.zeros(np.shape(a)[0]))
                            for a in allocations]
        self.fingerprint = fingerprint
        self._next = 0

    def query(self, interventions: np.ndarray) -> Allocation:
        if self._next >= len(self.allocations):
            raise IndexError(f"replay log exhausted after {len(self.allocations)} rounds")
        a = self.allocations[self._next]
        self._next += 1
        return a


class NoisyOracle:
    """Wraps another oracle and perturbs each observed quantity by
    independent Gaussian noise of standard deviation ``scale``."""

    def __init__(self, inner, scale: float, seed: int = 0):
        if scale < 0:
            raise ValueError("noise scale must be nonnegative")
        self.inner = inner
        self.scale = scale
        self.rng = np.random.default_rng(seed)
        self.fingerprint = f"noisy({getattr(inner, 'fingerprint', '?')},{scale},{seed})"

    def query(self, interventions: np.ndarray) -> Allocation:
        a = self.inner.query(interventions)
        x = np.maximum(0.0, a.x + self.rng.normal(scale=self.scale, size=a.x.shape))
        return Allocation(x, a.delta)


@dataclass(frozen=True)
class RateSchedule:
    """Learning rates: ``constant`` gives ``c``; ``harmonic`` gives ``c / (t + 1)``."""

    kind: str = "constant"
    c: float = 0.2

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic"):
            raise ValueError(f"unknown rate schedule {self.kind!r}")
        if not self.c > 0:
            raise ValueError("rate constant must be positive")

    def gamma(self, t: int) -> float:
        return self.c if self.kind == "constant" else self.c / (t + 1)

    def __str__(self) -> str:
        return f"{self.kind}({self.c:g})"


@dataclass(frozen=True)
class OpicState:
    round: int
    multipliers: Multipliers

    @classmethod
    def initial(cls, cs: LinearConstraintSet) -> "OpicState":
        return cls(0, Multipliers.zeros(cs))


def opic_step(state: OpicState, cs: LinearConstraintSet, observed_x, gamma: float) -> OpicState:
    """Projected subgradient step on the multipliers."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    r = evaluate_constraints(cs, observed_x)
    lam1 = np.maximum(0.0, state.multipliers.lambda_ineq + gamma * r.ineq_residual)
    lam2 = state.multipliers.lambda_eq + gamma * r.eq_residual
    return OpicState(state.round + 1, Multipliers(lam1, lam2))


@dataclass(frozen=True, eq=False)
class OpicRecord:
    round: int
    gamma: float
    multipliers: Multipliers
    interventions: np.ndarray
    allocation: Allocation
    residual: ConstraintResidual


@dataclass(eq=False)
class OpicTrace:
    """Everything observed during a run, one record per round."""

    records: list = field(default_factory=list)
    schedule: Optional[RateSchedule] = None
    fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, cs: LinearConstraintSet) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        labels = list(cs.labels)
        w.writerow(["round", "gamma", "max_violation"] + [f"lambda[{lab}]" for lab in labels]
                   + [f"residual[{lab}]" for lab in labels])
        for rec in self.records:
            lam = rec.multipliers.as_vector()
            res = np.concatenate([rec.residual.ineq_residual, rec.residual.eq_residual])
            w.writerow([rec.round, f"{rec.gamma:.10g}", f"{rec.residual.max_violation:.10g}"]
                       + [f"{v:.10g}" for v in lam] + [f"{v:.10g}" for v in res])
        return buf.getvalue()


def run_opic(oracle, cs: LinearConstraintSet, schedule: RateSchedule, rounds: int,
             initial: Optional[OpicState] = None) -> OpicTrace:
    """Run the loop for ``rounds`` rounds starting from zero multipliers.

    Raises:
        OracleError: the oracle failed; the round index is attached.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    state = initial or OpicState.initial(cs)
    trace = OpicTrace([], schedule, str(getattr(oracle, "fingerprint", "")))
    for t in range(rounds):
        pbar = interventions_from_multipliers(cs, state.multipliers)
        try:
            alloc = oracle.query(pbar)
        except Exception as exc:
            raise OracleError(state.round, exc) from exc
        gamma = schedule.gamma(state.round)
        trace.records.append(OpicRecord(state.round, gamma, state.multipliers, pbar, alloc,
                                        evaluate_constraints(cs, alloc.x)))
        state = opic_step(state, cs, alloc.x, gamma)
    return trace


def time_averaged_violation(trace: OpicTrace, cs: LinearConstraintSet, upto: Optional[int] = None) -> ConstraintResidual:
    """Constraint residual of the mean allocation over the first ``upto`` rounds."""
    if not trace.records:
        raise ValueError("trace is empty")
    upto = len(trace.records) if upto is None else upto
    if not 1 <= upto <= len(trace.records):
        raise ValueError(f"upto must lie in 1..{len(trace.records)}, got {upto}")
    mean = np.mean([rec.allocation.x for rec in trace.records[:upto]], axis=0)
    return evaluate_constraints(cs, mean)


def averaged_violation_curve(trace: OpicTrace, cs: LinearConstraintSet) -> np.ndarray:
    """Max violation of the running mean allocation after each round."""
    xs = np.array([rec.allocation.x for rec in trace.records])
    running = np.cumsum(xs, axis=0) / np.arange(1, len(xs) + 1)[:, None, None]
    return np.array([evaluate_constraints(cs, x).max_violation for x in running])
