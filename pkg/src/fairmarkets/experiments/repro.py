"""Reproduction of the six worked examples (tables T1 to T6).

Every check carries an ID that starts with its table number.  Numbers in
the tables are rounded to two or three digits, hence the 2e-2 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..audit import budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, exposure, welfare_delta
from ..constraints import build_aef, build_pbp, build_pip
from ..market import Market
from ..solver import SolverConfig, solve_constrained_eg, solve_offset_eg

TOL = 2e-2


@dataclass(frozen=True)
class Check:
    id: str
    claim: str
    expected: object
    actual: object
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.id}: {self.claim} expected {_show(self.expected)} got {_show(self.actual)}"


def _show(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return "(" + ", ".join(_show(x) for x in np.asarray(v, dtype=float).ravel()) + ")"
    if isinstance(v, (float, np.floating, int)):
        return f"{float(v):.4g}"
    return str(v)


@dataclass
class ReproReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed")
        return "\n".join(lines)

    def csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "passed", "claim", "expected", "actual"])
        for c in self.checks:
            w.writerow([c.id, int(c.passed), c.claim, _show(c.expected), _show(c.actual)])
        return buf.getvalue()


class _Recorder:
    def __init__(self):
        self.report = ReproReport()

    def close(self, cid, claim, expected, actual, tol=TOL):
        e = np.asarray(expected, dtype=float)
        a = np.asarray(actual, dtype=float)
        ok = e.shape == a.shape and bool(np.all(np.abs(e - a) <= tol))
        self.report.checks.append(Check(cid, claim, expected, actual, ok))

    def holds(self, cid, claim, expected, actual, predicate: Callable[[float], bool]):
        self.report.checks.append(Check(cid, claim, expected, actual, bool(predicate(actual))))


def table_markets() -> dict:
    """The six example markets; every budget and supply is 1."""
    ones = np.ones
    return {
        "T1": Market(ones(4), [[1.5, 0.4], [0.4, 1.5], [5, 2], [2, 5]],
                     buyer_groups=("C", "C", "U", "U"), item_groups=("A", "B")),
        "T2": Market(ones(4), [[2, 1], [2, 1.5], [3, 2], [3, 2]],
                     buyer_groups=("A", "A", "B", "B"), item_groups=("C", "U")),
        "T3": Market(ones(2), [[2, 2], [0, 2]], buyer_groups=("C", "U"), item_groups=("A", "B")),
        "T4": Market(ones(2), [[2, 2], [0.1, 3]], buyer_groups=("A", "B"), item_groups=("C", "U")),
        "T5": Market(ones(2), [[2, 1], [1, 2]], buyer_groups=("C", "U"), item_groups=("A", "B")),
        "T6": Market(ones(2), [[0, 2], [2, 0]], buyer_groups=("A", "B"), item_groups=("C", "U")),
    }


def table_constraints(markets: dict | None = None) -> dict:
    """The constraint set imposed in each example."""
    mk = markets or table_markets()
    return {
        "T1": build_pbp(mk["T1"], [0, 1], [0], [1], 1.0),
        "T2": build_pip(mk["T2"], [0], [0, 1], [2, 3], 1.0),
        "T2-aef": build_aef(mk["T2"], [0, 1], [0], 0.5),
        "T3": build_pbp(mk["T3"], [0], [0], [1], 1.0),
        "T4": build_pip(mk["T4"], [0], [0], [1], 1.0),
        "T5": build_pbp(mk["T5"], [0], [0], [1], 1.0),
        "T6": build_aef(mk["T6"], [0], [0], 0.5),
    }


def run_repro_suite(config: SolverConfig | None = None) -> ReproReport:
    """Solve every example and compare against the published cells and captions."""
    config = config or SolverConfig()
    mk = table_markets()
    cs = table_constraints(mk)
    r = _Recorder()

    # T1: parity on C buyers drives them out of the market
    M = mk["T1"]
    eg = solve_offset_eg(M, None, config)
    pb = solve_constrained_eg(M, cs["T1"], config)
    r.close("T1.eg.prices", "unconstrained prices", [1.5, 1.5], eg.prices.base)
    r.close("T1.eg.utilities", "unconstrained utilities", [1, 1, 10 / 3, 10 / 3], eg.utilities(M))
    r.close("T1.eg.allocation", "unconstrained allocation", [[1 / 3, 0], [0, 1 / 3], [2 / 3, 0], [0, 2 / 3]],
            eg.alloc.x)
    r.close("T1.eg.leftover", "unconstrained leftovers", [0.5, 0.5, 0, 0], eg.alloc.delta)
    r.close("T1.pbp.prices", "constrained prices", [1, 1], pb.prices.base)
    r.close("T1.pbp.utilities", "constrained utilities", [1, 1, 5, 5], pb.utilities(M))
    r.close("T1.pbp.allocation", "C buyers exit, U buyers take everything", [[0, 0], [0, 0], [1, 0], [0, 1]],
            pb.alloc.x)
    r.close("T1.caption.exposure", "exposure of C buyers to all items falls to zero", [2 / 3, 0],
            [exposure(eg.alloc.x, [0, 1], [0, 1]), exposure(pb.alloc.x, [0, 1], [0, 1])])
    r.close("T1.caption.welfare", "U buyers are better off, C unchanged", [0, 0, 5 / 3, 5 / 3],
            welfare_delta(M, eg, pb, [0, 1]).deltas)
    env = budget_adjusted_envy(M, pb, M.buyer_groups)
    r.close("T1.envy.within", "no within-group envy under parity", 0.0, env.max_within, 1e-6)
    r.close("T1.envy.cross", "C1 envies U1 by .5", 0.5, env.envy[0, 2])

    # T2: item parity crowds out A2
    M = mk["T2"]
    eg = solve_offset_eg(M, None, config)
    pip = solve_constrained_eg(M, cs["T2"], config)
    aef = solve_constrained_eg(M, cs["T2-aef"], config)
    r.close("T2.eg.utilities", "unconstrained utilities", [1, 1.125, 1.5, 1.5], eg.utilities(M))
    r.close("T2.eg.leftover", "A1 keeps .66", 2 / 3, eg.alloc.delta[0])
    r.close("T2.eg.exposure", "item C split .167 to A and .833 to B",
            [1 / 6, 5 / 6], [exposure(eg.alloc.x, [0, 1], [0]), exposure(eg.alloc.x, [2, 3], [0])])
    r.close("T2.pip.utilities", "constrained utilities", [1, 1, 4 / 3, 4 / 3], pip.utilities(M))
    r.close("T2.pip.exposure", "item C split evenly between groups",
            [0.5, 0.5], [exposure(pip.alloc.x, [0, 1], [0]), exposure(pip.alloc.x, [2, 3], [0])])
    r.holds("T2.caption.crowd_out", "A2 strictly worse, A1 not better", "du(A2) < 0, du(A1) <= 0",
            welfare_delta(M, eg, pip, [0, 1]).deltas[:2],
            lambda d: d[1] < -TOL and d[0] <= TOL)
    r.close("T2.caption.aef_equivalence", "floor of .5 on (A buyers, item C) gives the parity utilities",
            pip.utilities(M), aef.utilities(M))

    # T3: parity leaves Pareto improvements on the table
    M = mk["T3"]
    eg = solve_offset_eg(M, None, config)
    pb = solve_constrained_eg(M, cs["T3"], config)
    r.close("T3.eg.allocation", "C takes A, U takes B", [[1, 0], [0, 1]], eg.alloc.x)
    r.close("T3.pbp.c_allocation", "C splits .5/.5", [0.5, 0.5], pb.alloc.x[0])
    r.close("T3.pbp.u_item_b", "U holds .5 of item B", 0.5, pb.alloc.x[1, 1])
    r.close("T3.pbp.utilities", "constrained utilities", [2, 1], pb.utilities(M))
    table_x = np.array([[0.5, 0.5], [0.5, 0.5]])
    r.holds("T3.caption.buyer_gap", "published allocation is buyer Pareto suboptimal", "> 0.1",
            buyer_pareto_gap(M, table_x).gap, lambda g: g > 0.1)
    r.holds("T3.caption.buyer_item_gap", "and buyer-item suboptimal protecting item B for C", "> 0.1",
            buyer_item_pareto_gap(M, table_x, [0], [1]).gap, lambda g: g > 0.1)
    r.holds("T3.solver.buyer_item_gap", "the solved allocation is too", "> 0.1",
            buyer_item_pareto_gap(M, pb.alloc.x, [0], [1]).gap, lambda g: g > 0.1)

    # T4: item parity makes everyone worse off
    M = mk["T4"]
    eg = solve_offset_eg(M, None, config)
    pip = solve_constrained_eg(M, cs["T4"], config)
    r.close("T4.eg.utilities", "unconstrained utilities", [2, 3], eg.utilities(M))
    r.close("T4.pip.allocation", "constrained allocation", [[0.5, 0.258], [0.5, 0.742]], pip.alloc.x)
    r.close("T4.pip.utilities", "constrained utilities", [1.52, 2.28], pip.utilities(M))
    r.holds("T4.caption.everyone_worse", "both buyers lose", "all du < 0",
            welfare_delta(M, eg, pip, [1]).deltas, lambda d: bool(np.all(d < -TOL)))

    # T5: buyer parity makes everyone worse off
    M = mk["T5"]
    eg = solve_offset_eg(M, None, config)
    pb = solve_constrained_eg(M, cs["T5"], config)
    r.close("T5.eg.prices", "unconstrained prices", [1, 1], eg.prices.base)
    r.close("T5.eg.allocation", "unconstrained allocation", [[1, 0], [0, 1]], eg.alloc.x)
    r.close("T5.pbp.prices", "constrained prices", [2 / 3, 4 / 3], pb.prices.base)
    r.close("T5.pbp.allocation", "even split", [[0.5, 0.5], [0.5, 0.5]], pb.alloc.x)
    r.close("T5.pbp.utilities", "constrained utilities", [1.5, 1.5], pb.utilities(M))
    r.close("T5.caption.everyone_worse", "both buyers lose .5", [-0.5, -0.5], welfare_delta(M, eg, pb, [0]).deltas)

    # T6: exposure floors can be buyer Pareto suboptimal
    M = mk["T6"]
    fl = solve_constrained_eg(M, cs["T6"], config)
    r.close("T6.aef.allocation", "A holds (.5, 1), B holds (.5, 0)", [[0.5, 1], [0.5, 0]], fl.alloc.x)
    r.close("T6.aef.utilities", "constrained utilities", [2, 1], fl.utilities(M))
    r.close("T6.aef.subsidy", "floor enforced through a subsidy of 2 on (A, C)", -2.0, fl.prices.interventions[0, 0])
    r.holds("T6.caption.buyer_gap", "buyer Pareto gap is positive", "> 0.1",
            buyer_pareto_gap(M, fl.alloc.x).gap, lambda g: g > 0.1)
    r.close("T6.aef.buyer_item_gap", "but buyer-item Pareto optimal", 0.0,
            buyer_item_pareto_gap(M, fl.alloc.x, [0], [0]).gap, 1e-6)
    return r.report
