"""Random-market experiments: welfare effects, Pareto gaps and OPIC convergence."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..audit import budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, welfare_delta
from ..errors import ConstraintError, ConvergenceError, OracleError, RejectionBudgetError
from ..market import Market
from ..opic import RateSchedule, SolverOracle, averaged_violation_curve, run_opic
from ..solver import TaxSubsidyEquilibrium, solve_constrained_eg, verify_equilibrium
from .generate import ExperimentConfig, family_setup, market_seed, sample_market

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.10g}"


@dataclass(eq=False)
class MarketOutcome:
    """Everything measured on one random market."""

    index: int
    market: Market
    attempts: int
    base: TaxSubsidyEquilibrium
    constrained: TaxSubsidyEquilibrium
    target: tuple
    deltas: np.ndarray
    gap_buyer: float
    gap_buyer_item: float
    within_envy: float
    kkt_base: float
    kkt_constrained: float
    violation_curve: Optional[np.ndarray] = None


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return {"count": 0, "mean": float("nan"), "p5": float("nan"), "p95": float("nan")}
    return {"count": int(a.size), "mean": float(a.mean()), "p5": float(np.percentile(a, 5)),
            "p95": float(np.percentile(a, 95))}


@dataclass(eq=False)
class RandomExperimentResult:
    config: ExperimentConfig
    outcomes: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def deltas(self, which: str) -> np.ndarray:
        """Per-buyer utility changes pooled over markets for ``target`` or ``other``."""
        out = []
        for o in self.outcomes:
            t = set(o.target)
            out.extend(d for i, d in enumerate(o.deltas) if (i in t) == (which == "target"))
        return np.array(out)

    def curves(self) -> np.ndarray:
        rows = [o.violation_curve for o in self.outcomes if o.violation_curve is not None]
        return np.array(rows) if rows else np.zeros((0, self.config.opic_rounds))

    def summary(self) -> dict:
        c = self.curves()
        attempts = sum(o.attempts for o in self.outcomes)
        s = {
            "family": self.config.family,
            "markets": len(self.outcomes),
            "failures": len(self.failures),
            "attempts": attempts,
            "acceptance_rate": len(self.outcomes) / attempts if attempts else float("nan"),
            "delta_target": _stats(self.deltas("target")),
            "delta_other": _stats(self.deltas("other")),
            "gap_buyer_max": max((o.gap_buyer for o in self.outcomes), default=float("nan")),
            "gap_buyer_mean": float(np.mean([o.gap_buyer for o in self.outcomes])) if self.outcomes else float("nan"),
            "gap_buyer_item_max": max((o.gap_buyer_item for o in self.outcomes), default=float("nan")),
            "within_envy_max": max((o.within_envy for o in self.outcomes), default=float("nan")),
            "kkt_max": max((max(o.kkt_base, o.kkt_constrained) for o in self.outcomes), default=float("nan")),
            "opic_markets": int(c.shape[0]),
        }
        if c.shape[0]:
            s["violation_epoch5_mean"] = float(c[:, min(4, c.shape[1] - 1)].mean())
            s["violation_final_mean"] = float(c[:, -1].mean())
        return s

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["market_id", "family", "buyer_id", "group", "u_base", "u_constrained", "delta",
                    "gap_buyer", "gap_buyer_item", f"violation@{self.config.opic_rounds}"])
        for o in self.outcomes:
            ub = o.base.alloc.utilities(o.market)
            uc = o.constrained.alloc.utilities(o.market)
            viol = o.violation_curve[-1] if o.violation_curve is not None else None
            t = set(o.target)
            for i in range(ub.size):
                w.writerow([o.index, self.config.family, i, "target" if i in t else "other", _fmt(ub[i]),
                            _fmt(uc[i]), _fmt(o.deltas[i]), _fmt(o.gap_buyer), _fmt(o.gap_buyer_item),
                            _fmt(viol)])
        return buf.getvalue()

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "family", "mean", "p5", "p95"])
        c = self.curves()
        for t in range(c.shape[1] if c.shape[0] else 0):
            st = _stats(c[:, t])
            w.writerow([t + 1, self.config.family, _fmt(st["mean"]), _fmt(st["p5"]), _fmt(st["p95"])])
        return buf.getvalue()

    def summary_text(self) -> str:
        s = self.summary()
        lines = [f"family {s['family']}: {s['markets']} markets, {s['failures']} failures, "
                 f"{s['attempts']} draws (acceptance {s['acceptance_rate']:.4f})"]
        for g in ("target", "other"):
            d = s[f"delta_{g}"]
            lines.append(f"  delta u {g}: mean {d['mean']:.4f}  p5 {d['p5']:.4f}  p95 {d['p95']:.4f}")
        lines.append(f"  buyer Pareto gap: mean {s['gap_buyer_mean']:.4g}  max {s['gap_buyer_max']:.4g}")
        lines.append(f"  buyer-item Pareto gap: max {s['gap_buyer_item_max']:.4g}")
        lines.append(f"  within-group envy: max {s['within_envy_max']:.3g}")
        lines.append(f"  KKT residual: max {s['kkt_max']:.3g}")
        if "violation_final_mean" in s:
            lines.append(f"  time-averaged violation: epoch 5 {s['violation_epoch5_mean']:.4f}  "
                         f"epoch {self.config.opic_rounds} {s['violation_final_mean']:.4f} "
                         f"({s['opic_markets']} markets)")
        return "\n".join(lines)


def run_market(config: ExperimentConfig, index: int, with_opic: bool) -> MarketOutcome:
    sampled = sample_market(config, market_seed(config, index))
    market, base = sampled.market, sampled.base
    setup = family_setup(config.family, market, config)
    cons = solve_constrained_eg(market, setup.constraints, config.solver, warm_start=base)
    wd = welfare_delta(market, base, cons, setup.target)
    gap_b = buyer_pareto_gap(market, cons.alloc.x).gap
    gap_bi = buyer_item_pareto_gap(market, cons.alloc.x, setup.gap_buyers, setup.gap_items).gap
    envy = budget_adjusted_envy(market, cons, setup.groups).max_within
    curve = None
    if with_opic:
        oracle = SolverOracle(market, config.solver)
        oracle.last = base
        trace = run_opic(oracle, setup.constraints, RateSchedule("constant", config.learning_rate),
                         config.opic_rounds)
        curve = averaged_violation_curve(trace, setup.constraints)
    return MarketOutcome(index, market, sampled.attempts, base, cons, setup.target, wd.deltas, gap_b, gap_bi,
                         envy, verify_equilibrium(market, base, config.solver.tol).max_residual,
                         verify_equilibrium(market, cons, config.solver.tol).max_residual, curve)


def run_random_experiments(config: ExperimentConfig) -> RandomExperimentResult:
    """Run every market of ``config`` in index order.

    Markets whose sampling or solves fail are logged, counted and skipped.
    OPIC runs on the first ``config.opic_markets`` markets (all by default).
    """
    result = RandomExperimentResult(config)
    opic_markets = config.n_markets if config.opic_markets is None else config.opic_markets
    for k in range(config.n_markets):
        try:
            result.outcomes.append(run_market(config, k, k < opic_markets))
        except (ConvergenceError, RejectionBudgetError, OracleError, ConstraintError) as exc:
            log.warning("market %d (%s) skipped: %s", k, config.family, exc)
            result.failures.append((k, str(exc)))
    return result
