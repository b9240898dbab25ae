"""Exception types shared across the package."""

from __future__ import annotations

from typing import Any


class MarketError(ValueError):
    """Invalid market data or mismatched dimensions."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class UtilityDomainError(ValueError):
    """A utility argument left the domain of the logarithm."""

    def __init__(self, buyer: int, utility: float):
        super().__init__(f"buyer {buyer} has nonpositive utility {utility!r}")
        self.buyer = buyer
        self.utility = utility


class ConstraintError(ValueError):
    """A constraint family was instantiated with invalid parameters."""


class InfeasibleConstraintsError(ConstraintError):
    """The constraint set admits no supply-feasible allocation.

    ``certificate`` holds the phase-one result: the minimal total violation
    and the per-row violations at the minimizer.
    """

    def __init__(self, message: str, certificate: dict[str, Any]):
        super().__init__(message)
        self.certificate = certificate


class UnboundedDemandError(RuntimeError):
    """Effective prices were driven to zero or below on a valued item."""

    def __init__(self, message: str, pairs: list[tuple[int, int]]):
        super().__init__(message)
        self.pairs = pairs


class ConvergenceError(RuntimeError):
    """The solver could not certify an equilibrium within its budget.

    ``best`` is the best candidate found (a ``TaxSubsidyEquilibrium`` or
    ``None``) and ``report`` its KKT report.
    """

    def __init__(self, message: str, best: Any = None, report: Any = None):
        super().__init__(message)
        self.best = best
        self.report = report


class OracleError(RuntimeError):
    """An equilibrium oracle failed during an OPIC round."""

    def __init__(self, round_index: int, cause: BaseException):
        super().__init__(f"oracle failed in round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause


class RejectionBudgetError(RuntimeError):
    """Rejection sampling ran out of attempts.

    ``closest_miss`` is how far the best draw was from the acceptance
    threshold, in the units of the family's exposure statistic.
    """

    def __init__(self, attempts: int, accepted: int, family: str, closest_miss: float | None = None):
        rate = accepted / attempts if attempts else 0.0
        msg = f"{family}: no market accepted after {attempts} attempts (acceptance rate {rate:.4f})"
        if closest_miss is not None:
            msg += f"; closest draw missed the threshold by {closest_miss:.4g}"
        super().__init__(msg)
        self.attempts = attempts
        self.accepted = accepted
        self.family = family
        self.closest_miss = closest_miss


class ScenarioError(ValueError):
    """A scenario file failed validation; ``path`` locates the bad field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
