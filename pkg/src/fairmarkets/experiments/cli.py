"""Command line entry point.

Exit codes: 0 success, 1 a check or solve failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..audit import budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, exposure_report, welfare_delta
from ..errors import (ConstraintError, ConvergenceError, InfeasibleConstraintsError, MarketError, OracleError,
                      RejectionBudgetError, ScenarioError)
from ..opic import SolverOracle, averaged_violation_curve, run_opic
from ..solver import feasibility_presolve, solve_constrained_eg, solve_offset_eg, verify_equilibrium
from .chart import Series, emit_chart
from .generate import FAMILIES, ExperimentConfig
from .randexp import run_random_experiments
from .repro import run_repro_suite
from .scenario import Scenario, load_scenario

log = logging.getLogger("fairmarkets")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _fmt(v: float) -> str:
    return f"{float(v):.10g}"


class _Output:
    """Routes named artifacts to ``--out`` and the chosen format to stdout."""

    def __init__(self, args):
        self.fmt = args.format
        self.out = Path(args.out) if args.out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def emit(self, name: str, text: str, csv_text: Optional[str] = None) -> None:
        if self.out and csv_text is not None:
            (self.out / f"{name}.csv").write_text(csv_text)
        body = csv_text if self.fmt == "csv" and csv_text is not None else text
        sys.stdout.write(body if body.endswith("\n") else body + "\n")

    def path(self, name: str) -> Path:
        return (self.out or Path(".")) / name


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise ScenarioError("--scenario", "this command needs a scenario file")
    sc = load_scenario(args.scenario)
    if args.tol is not None:
        sc.solver = replace(sc.solver, tol=args.tol)
    for a, b in sc.constraints.duplicate_supports():
        log.warning("constraint rows %s and %s have identical support; duplicate rows can make "
                    "multipliers non-unique", a, b)
    return sc


def _long_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "buyer", "item", "value"])
    for r in rows:
        w.writerow(["" if v is None else v for v in r[:3]] + [_fmt(r[3])])
    return buf.getvalue()


def _equilibrium_rows(market, eq):
    n, m = market.valuations.shape
    u = eq.utilities(market)
    rows = [("price", None, j, eq.prices.base[j]) for j in range(m)]
    rows += [("intervention", i, j, eq.prices.interventions[i, j]) for i in range(n) for j in range(m)]
    rows += [("x", i, j, eq.alloc.x[i, j]) for i in range(n) for j in range(m)]
    rows += [("leftover", i, None, eq.alloc.delta[i]) for i in range(n)]
    rows += [("utility", i, None, u[i]) for i in range(n)]
    return rows


def _matrix(a: np.ndarray) -> str:
    return "\n".join("  " + " ".join(f"{v:9.4f}" for v in row) for row in np.atleast_2d(a))


def _equilibrium_text(market, eq, kkt) -> str:
    lines = ["prices:", _matrix(eq.prices.base), "allocation:", _matrix(eq.alloc.x),
             "leftover budget:", _matrix(eq.alloc.delta), "utilities:", _matrix(eq.utilities(market))]
    if np.any(eq.prices.interventions):
        lines += ["interventions (tax > 0, subsidy < 0):", _matrix(eq.prices.interventions)]
    lines.append(f"max KKT residual: {kkt.max_residual:.3g} (finish: {eq.diagnostics.get('finish', '?')})")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    sc = _scenario(args)
    eq = solve_offset_eg(sc.market, sc.interventions, sc.solver)
    kkt = verify_equilibrium(sc.market, eq, sc.solver.tol)
    _Output(args).emit("solve", _equilibrium_text(sc.market, eq, kkt), _long_csv(_equilibrium_rows(sc.market, eq)))
    return EXIT_OK if kkt.ok(max(sc.solver.tol, 1e-4)) else EXIT_FAIL


def cmd_intervene(args) -> int:
    sc = _scenario(args)
    if sc.constraints.is_empty():
        raise ScenarioError("constraints", "intervene needs at least one constraint block")
    pre = feasibility_presolve(sc.market, sc.constraints, sc.solver)
    eq = solve_constrained_eg(sc.market, sc.constraints, sc.solver)
    kkt = verify_equilibrium(sc.market, eq, sc.solver.tol)
    rows = _equilibrium_rows(sc.market, eq)
    lam = eq.multipliers.as_vector()
    rows += [(f"lambda[{lab}]", None, None, lam[k]) for k, lab in enumerate(sc.constraints.labels)]
    margin = pre["slater_margin"]
    slater = f"{margin:.4g}" if np.isfinite(margin) else "n/a (no inequality rows)"
    text = "\n".join([f"Slater margin: {slater}", _equilibrium_text(sc.market, eq, kkt), "multipliers:"]
                     + [f"  {lab}: {lam[k]:.6g}" for k, lab in enumerate(sc.constraints.labels)])
    _Output(args).emit("intervene", text, _long_csv(rows))
    return EXIT_OK if kkt.ok(max(sc.solver.tol, 1e-4)) else EXIT_FAIL


def cmd_opic(args) -> int:
    sc = _scenario(args)
    if sc.constraints.is_empty():
        raise ScenarioError("constraints", "opic needs at least one constraint block")
    rounds = args.rounds or sc.opic.rounds
    trace = run_opic(SolverOracle(sc.market, sc.solver), sc.constraints, sc.opic.rate_schedule(), rounds)
    curve = averaged_violation_curve(trace, sc.constraints)
    last = trace.records[-1]
    text = "\n".join([
        f"{rounds} rounds, {sc.opic.schedule} rate {sc.opic.rate}",
        f"last-round max violation: {last.residual.max_violation:.4g}",
        f"time-averaged max violation: {curve[-1]:.4g}",
        "final interventions:", _matrix(last.interventions)])
    out = _Output(args)
    out.emit("opic_trace", text, trace.to_csv(sc.constraints))
    if args.out:
        emit_chart({"time-averaged": Series(np.arange(1, rounds + 1), curve),
                    "last round": Series(np.arange(1, rounds + 1), [r.residual.max_violation for r in trace.records])},
                   out.path("opic_violation.svg"), "OPIC constraint violation", "round", "max violation")
    return EXIT_OK


def cmd_audit(args) -> int:
    sc = _scenario(args)
    m = sc.market
    base = solve_offset_eg(m, None, sc.solver)
    target = sc.audit.get("target_buyers", [])
    lines, rows = [], []
    eq = base
    if not sc.constraints.is_empty():
        eq = solve_constrained_eg(m, sc.constraints, sc.solver)
        wd = welfare_delta(m, base, eq, target)
        for name, st in wd.summary().items():
            lines.append(f"delta u {name}: n={st['count']} mean {st['mean']:.4g} p5 {st['p5']:.4g} p95 {st['p95']:.4g}")
            rows.append((f"delta_mean_{name}", None, None, st["mean"]))
        rows += [("delta", i, None, d) for i, d in enumerate(wd.deltas)]
    groups = sc.audit.get("groups") or m.buyer_groups
    if groups is not None:
        env = budget_adjusted_envy(m, eq, list(groups))
        lines.append(env.summary())
        rows += [("envy_within_max", None, None, env.max_within), ("envy_cross_max", None, None, env.max_cross)]
    gap = buyer_pareto_gap(m, eq.alloc.x)
    lines.append(gap.summary())
    rows.append(("gap_buyer", None, None, gap.gap))
    if "protected_buyers" in sc.audit and "protected_items" in sc.audit:
        bi = buyer_item_pareto_gap(m, eq.alloc.x, sc.audit["protected_buyers"], sc.audit["protected_items"])
        lines.append(bi.summary())
        rows.append(("gap_buyer_item", None, None, bi.gap))
    if m.buyer_groups is not None and m.item_groups is not None:
        pairs = {f"{g}->{h}": ([i for i, a in enumerate(m.buyer_groups) if a == g],
                               [j for j, b in enumerate(m.item_groups) if b == h])
                 for g in dict.fromkeys(m.buyer_groups) for h in dict.fromkeys(m.item_groups)}
        before, after = exposure_report(base.alloc.x, pairs), exposure_report(eq.alloc.x, pairs)
        lines.append("exposure (base -> constrained):")
        for name in pairs:
            lines.append(f"  {name}: {before.values[name]:.4g} -> {after.values[name]:.4g}")
            rows.append((f"exposure[{name}]", None, None, after.values[name]))
    _Output(args).emit("audit", "\n".join(lines), _long_csv(rows))
    return EXIT_OK


def cmd_repro(args) -> int:
    report = run_repro_suite()
    _Output(args).emit("repro", report.text(), report.csv())
    return EXIT_OK if report.passed else EXIT_FAIL


def _family_charts(results: dict, out: _Output) -> list:
    paths = []
    curves = {}
    for fam, res in results.items():
        c = res.curves()
        if c.shape[0]:
            t = np.arange(1, c.shape[1] + 1)
            curves[fam.upper()] = Series(t, c.mean(axis=0), np.percentile(c, 5, axis=0), np.percentile(c, 95, axis=0))
    if curves:
        paths.append(emit_chart(curves, out.path("violation.svg"), "Time-averaged constraint violation",
                                "epoch", "max violation"))
    points, ticks = {}, {}
    for k, (fam, res) in enumerate(results.items()):
        for off, which in ((-0.15, "target"), (0.15, "other")):
            d = res.deltas(which)
            if d.size == 0:
                continue
            s = points.setdefault(which, ([], [], [], []))
            s[0].append(k + off)
            s[1].append(float(d.mean()))
            s[2].append(float(np.percentile(d, 5)))
            s[3].append(float(np.percentile(d, 95)))
        ticks[float(k)] = fam.upper()
    if points:
        paths.append(emit_chart({k: Series(*v) for k, v in points.items()}, out.path("welfare.svg"),
                                "Utility change from constraints", "family", "delta u", style="points",
                                xtick_labels=ticks))
    return paths


def cmd_randexp(args) -> int:
    families = FAMILIES if args.family == "all" else (args.family,)
    results = {}
    out = _Output(args)
    for fam in families:
        cfg = ExperimentConfig(family=fam, n_markets=args.markets, seed=args.seed, opic_rounds=args.rounds,
                               learning_rate=args.rate, opic_markets=args.opic_markets)
        if args.tol is not None:
            cfg = replace(cfg, solver=replace(cfg.solver, tol=args.tol))
        res = run_random_experiments(cfg)
        results[fam] = res
        out.emit(f"rows_{fam}", res.summary_text(), res.rows_csv())
        if out.out:
            (out.out / f"curve_{fam}.csv").write_text(res.curve_csv())
    if out.out:
        _family_charts(results, out)
    return EXIT_OK if all(r.outcomes for r in results.values()) else EXIT_FAIL


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_chart(args) -> int:
    if not args.input:
        raise ScenarioError("--input", "give at least one curve_*.csv file")
    curves = {}
    for p in args.input:
        try:
            rows = _read_csv(Path(p))
        except OSError as exc:
            raise ScenarioError(p, f"cannot read: {exc.strerror}") from None
        if not rows or not {"epoch", "family", "mean", "p5", "p95"} <= set(rows[0]):
            raise ScenarioError(p, "expected columns epoch, family, mean, p5, p95")
        for fam in dict.fromkeys(r["family"] for r in rows):
            sel = [r for r in rows if r["family"] == fam]
            curves[fam.upper()] = Series(*([float(r[k]) for r in sel] for k in ("epoch", "mean", "p5", "p95")))
    path = emit_chart(curves, _Output(args).path(args.name), args.title, "epoch", "max violation")
    sys.stdout.write(f"wrote {path}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="YAML scenario file")
    common.add_argument("--seed", type=int, default=0, help="experiment seed (default 0)")
    common.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
    common.add_argument("--out", help="directory for CSV/SVG outputs")
    common.add_argument("--format", choices=("text", "csv"), default="text", help="stdout format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairmarkets", description="Fair price interventions in Fisher markets.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="equilibrium under fixed interventions")
    sub.add_parser("intervene", parents=[common], help="interventions that implement the scenario constraints")
    p = sub.add_parser("opic", parents=[common], help="learn interventions online from observed allocations")
    p.add_argument("--rounds", type=int, default=None, help="override opic.rounds")
    sub.add_parser("audit", parents=[common], help="envy, Pareto gaps, exposure and welfare changes")
    sub.add_parser("repro", parents=[common], help="reproduce the worked example tables")
    p = sub.add_parser("randexp", parents=[common], help="random-market experiments")
    p.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    p.add_argument("--markets", type=int, default=50)
    p.add_argument("--opic-markets", type=int, default=None, help="run OPIC on the first N markets only")
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--rate", type=float, default=0.2)
    p = sub.add_parser("chart", parents=[common], help="plot curve CSVs written by randexp")
    p.add_argument("--input", action="append", help="curve CSV (repeatable)")
    p.add_argument("--name", default="violation.svg")
    p.add_argument("--title", default="Time-averaged constraint violation")
    return parser


COMMANDS = {"solve": cmd_solve, "intervene": cmd_intervene, "opic": cmd_opic, "audit": cmd_audit,
            "repro": cmd_repro, "randexp": cmd_randexp, "chart": cmd_chart}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, MarketError, InfeasibleConstraintsError, ConstraintError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, OracleError, RejectionBudgetError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
