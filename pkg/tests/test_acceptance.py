"""Acceptance criteria 1 to 8, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``;
the lines are repeated in the terminal summary.
"""

import sys
import time

import numpy as np
import pytest

from conftest import record_criterion
from fairmarkets import (Market, brute_force_eg, buyer_item_pareto_gap, buyer_pareto_gap, eg_objective,
                         solve_constrained_eg, solve_offset_eg, verify_equilibrium)
from fairmarkets.experiments import ExperimentConfig, emit_chart, run_random_experiments
from fairmarkets.experiments.cli import main

pytestmark = pytest.mark.slow


def _close(actual, expected, tol):
    return bool(np.all(np.abs(np.asarray(actual, dtype=float) - np.asarray(expected, dtype=float)) <= tol))


@pytest.fixture(scope="module")
def randexp():
    """100 markets per family with OPIC on the first 50, timed as one run."""
    start = time.perf_counter()
    results = {fam: run_random_experiments(ExperimentConfig(family=fam, n_markets=100, opic_markets=50))
               for fam in ("pbp", "pip", "aef")}
    return results, time.perf_counter() - start


def test_criterion_1_table1(tables, table_cs):
    M = tables["T1"]
    start = time.perf_counter()
    eg = solve_offset_eg(M)
    pb = solve_constrained_eg(M, table_cs["T1"])
    elapsed = time.perf_counter() - start
    u_eg, u_pb = eg.utilities(M), pb.utilities(M)
    checks = {
        "eg prices": _close(eg.prices.base, [1.5, 1.5], 1e-3),
        "eg utilities": _close(u_eg, [1, 1, 10 / 3, 10 / 3], 1e-3),
        "pbp C utilities": _close(u_pb[:2], [1, 1], 1e-3),
        "pbp C purchases": bool(pb.alloc.x[:2].max() <= 1e-3),
        "pbp U utilities": _close(u_pb[2:], [5, 5], 1e-3),
        "pbp prices": _close(pb.prices.base, [1, 1], 1e-2),
        "runtime": elapsed < 1.0,
    }
    ok = all(checks.values())
    record_criterion(1, ok, f"Table 1 prices {np.round(eg.prices.base, 4)} -> {np.round(pb.prices.base, 4)}, "
                     f"utilities {np.round(u_pb, 4)}, {elapsed:.3f}s; failed: {[k for k, v in checks.items() if not v]}")
    assert ok


def test_criterion_2_table2(tables, table_cs):
    M = tables["T2"]
    u_eg = solve_offset_eg(M).utilities(M)
    u_pip = solve_constrained_eg(M, table_cs["T2"]).utilities(M)
    u_aef = solve_constrained_eg(M, table_cs["T2-aef"]).utilities(M)
    ok = (_close(u_eg, [1, 1.125, 1.5, 1.5], 2e-2) and _close(u_pip, [1, 1, 4 / 3, 4 / 3], 2e-2)
          and _close(u_aef, u_pip, 2e-2))
    record_criterion(2, ok, f"Table 2 utilities eg {np.round(u_eg, 4)}, pip {np.round(u_pip, 4)}, "
                     f"aef {np.round(u_aef, 4)}")
    assert ok


def test_criterion_3_appendix_tables(tables, table_cs):
    u4 = solve_constrained_eg(tables["T4"], table_cs["T4"]).utilities(tables["T4"])
    t5 = solve_constrained_eg(tables["T5"], table_cs["T5"])
    u5 = t5.utilities(tables["T5"])
    x3 = solve_constrained_eg(tables["T3"], table_cs["T3"]).alloc.x
    x6 = solve_constrained_eg(tables["T6"], table_cs["T6"]).alloc.x
    gap3 = buyer_item_pareto_gap(tables["T3"], x3, [0], [1]).gap
    gap6 = buyer_pareto_gap(tables["T6"], x6).gap
    ok = (_close(u4, [1.52, 2.28], 2e-2) and _close(t5.prices.base, [2 / 3, 4 / 3], 2e-2)
          and _close(u5, [1.5, 1.5], 2e-2) and gap3 > 0.1 and gap6 > 0.1)
    record_criterion(3, ok, f"T4 utilities {np.round(u4, 4)}, T5 prices {np.round(t5.prices.base, 4)} "
                     f"utilities {np.round(u5, 4)}, T3 buyer-item gap {gap3:.4f}, T6 buyer gap {gap6:.4f}")
    assert ok


def test_criterion_4_oracle_equivalence(tables, table_cs):
    worst = 0.0
    cases = 0
    for name, M in tables.items():
        if M.valuations.shape != (2, 2):
            continue
        for cs in (None, table_cs[name]):
            eq = solve_constrained_eg(M, cs) if cs is not None else solve_offset_eg(M)
            alloc, obj = brute_force_eg(M, cs, 0.01)
            worst = max(worst, abs(eg_objective(M, eq.alloc) - obj),
                        float(np.abs(eq.utilities(M) - alloc.utilities(M)).max()))
            cases += 1
    ok = cases == 8 and worst <= 5e-2
    record_criterion(4, ok, f"{cases} solves on 2x2 tables, worst objective/utility difference {worst:.4f} "
                     f"vs brute force (grid .01)")
    assert ok


def test_criterion_5_opic_convergence(randexp):
    results, elapsed = randexp
    parts, ok = [], elapsed < 300
    for fam, res in results.items():
        c = res.curves()
        e5, e50 = float(c[:, 4].mean()), float(c[:, 49].mean())
        fam_ok = c.shape == (50, 50) and e50 < 0.05 and e50 < e5
        ok &= fam_ok
        parts.append(f"{fam} {e5:.4f}->{e50:.4f}")
    record_criterion(5, ok, f"mean time-averaged violation epoch 5->50 ({', '.join(parts)}); "
                     f"full experiment {elapsed:.1f}s")
    assert ok


def _invariance(n_markets=20, c=0.1):
    worst_p = worst_u = 0.0
    used, seed = 0, 0
    while used < n_markets:
        rng = np.random.default_rng([7, seed])
        seed += 1
        M = Market(np.ones(8), rng.uniform(0, 1, (8, 10)), np.ones(10))
        eq = solve_offset_eg(M)
        if eq.prices.base.min() <= c:
            continue
        shifted = solve_offset_eg(M, np.full((8, 10), -c))
        worst_p = max(worst_p, float(np.abs(shifted.prices.base - eq.prices.base - c).max()))
        worst_u = max(worst_u, float(np.abs(shifted.utilities(M) - eq.utilities(M)).max()))
        used += 1
    return worst_p, worst_u


def test_criterion_6_properties(randexp):
    results, _ = randexp
    outcomes = [o for res in results.values() for o in res.outcomes]
    kkt = max(max(o.kkt_base, o.kkt_constrained) for o in outcomes)
    envy = max(o.within_envy for o in outcomes)
    aef = results["aef"].outcomes
    aef_gap = max(o.gap_buyer_item for o in aef)
    base_gap = max(buyer_pareto_gap(o.market, o.base.alloc.x).gap for o in outcomes)
    shift_p, shift_u = _invariance()
    sub = {
        "a": len(outcomes) >= 150 and kkt <= 1e-4,
        "b": envy <= 1e-4,
        "c": len(aef) >= 100 and aef_gap <= 1e-3,
        "d": len(outcomes) >= 100 and base_gap <= 1e-4,
        "e": shift_p <= 1e-4 and shift_u <= 1e-4,
    }
    ok = all(sub.values())
    record_criterion(6, ok, f"(a) KKT {kkt:.2e} over {2 * len(outcomes)} solves; (b) within envy {envy:.2e}; "
                     f"(c) AEF buyer-item gap {aef_gap:.2e} on {len(aef)}; (d) base buyer gap {base_gap:.2e} "
                     f"on {len(outcomes)}; (e) price shift err {shift_p:.2e}, utility err {shift_u:.2e}")
    assert ok, sub


def test_criterion_7_welfare_pattern(randexp):
    results, _ = randexp
    s = {fam: res.summary() for fam, res in results.items()}
    ok = all(s[f]["markets"] == 100 for f in s)
    ok &= s["aef"]["delta_target"]["mean"] > 0 and s["aef"]["delta_other"]["mean"] < 0
    for fam in ("pbp", "pip"):
        for g in ("delta_target", "delta_other"):
            ok &= s[fam][g]["p5"] < 0 < s[fam][g]["p95"]
    detail = "; ".join(f"{f} target {s[f]['delta_target']['mean']:+.4f} [{s[f]['delta_target']['p5']:+.3f}, "
                       f"{s[f]['delta_target']['p95']:+.3f}] other {s[f]['delta_other']['mean']:+.4f} "
                       f"[{s[f]['delta_other']['p5']:+.3f}, {s[f]['delta_other']['p95']:+.3f}]" for f in s)
    record_criterion(7, bool(ok), detail)
    assert ok


def test_criterion_8_determinism(tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["randexp", "--family", "all", "--markets", "3", "--rounds", "10", "--seed", "4",
                     "--out", str(out)]) == 0
        assert main(["repro", "--out", str(out)]) == 0
        emit_chart({"s": ([1, 2, 3], [0.3, 0.2, 0.1], [0.2, 0.1, 0.0], [0.4, 0.3, 0.2])}, out / "chart.svg")
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    capsys.readouterr()
    names = sorted(outputs[0])
    ok = (names == sorted(outputs[1]) and any(n.endswith(".svg") for n in names)
          and any(n.endswith(".csv") for n in names) and all(outputs[0][n] == outputs[1][n] for n in names))
    record_criterion(8, ok, f"{len(names)} CSV/SVG files byte-identical across two seeded runs")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
