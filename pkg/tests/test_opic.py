import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmarkets import (LinearConstraintSet, Market, Multipliers, NoisyOracle, OpicState, OracleError, RateSchedule,
                         ReplayOracle, SolverOracle, averaged_violation_curve, build_pbp, build_pip,
                         evaluate_constraints, interventions_from_multipliers, opic_step, raw_constraints, run_opic,
                         solve_constrained_eg, solve_offset_eg, time_averaged_violation)
from fairmarkets.experiments.generate import ExperimentConfig, family_setup, market_seed, sample_market

from conftest import random_market

ONE_BY_ONE = Market([1], [[1]])


def single_row(kind, rhs=0.0):
    row = [{"terms": [[0, 0, 1.0]], "rhs": rhs}]
    return raw_constraints(ONE_BY_ONE, row, []) if kind == "ineq" else raw_constraints(ONE_BY_ONE, [], row)


def state_with(lam1=(), lam2=()):
    return OpicState(0, Multipliers(lam1, lam2))


class TestStep:
    def test_interior(self):
        # residual x - b = -.1
        s = opic_step(state_with([0.5]), single_row("ineq", 0.1), [[0.0]], 0.2)
        assert s.multipliers.lambda_ineq[0] == pytest.approx(0.48) and s.round == 1

    def test_projection_active(self):
        s = opic_step(state_with([0.05]), single_row("ineq", 0.5), [[0.0]], 0.2)
        assert s.multipliers.lambda_ineq[0] == 0.0

    def test_equality(self):
        s = opic_step(state_with((), [-0.3]), single_row("eq"), [[0.2]], 0.5)
        assert s.multipliers.lambda_eq[0] == pytest.approx(-0.2)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            opic_step(state_with([0.0]), single_row("ineq"), [[0.0]], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(1e-3, 2))
    def test_projection_invariant(self, residuals, gamma):
        cs = single_row("ineq", 5.0)
        s = OpicState.initial(cs)
        for r in residuals:
            s = opic_step(s, cs, [[5.0 + r]], gamma)
            assert s.multipliers.lambda_ineq[0] >= 0


class TestSchedule:
    def test_harmonic(self):
        sch = RateSchedule("harmonic", 0.5)
        assert [sch.gamma(t) for t in range(3)] == [0.5, 0.25, 0.5 / 3]
        g = np.array([sch.gamma(t) for t in range(100_000)])
        assert g.sum() > 5 and (g ** 2).sum() < 0.25 * np.pi ** 2 / 6

    def test_invalid(self):
        with pytest.raises(ValueError):
            RateSchedule("cosine")
        with pytest.raises(ValueError):
            RateSchedule("constant", 0.0)


class TestRun:
    def test_table1_harmonic(self, tables, table_cs):
        trace = run_opic(SolverOracle(tables["T1"]), table_cs["T1"], RateSchedule("harmonic", 0.5), 200)
        assert len(trace) == 200
        assert trace.records[-1].residual.max_violation <= 0.05

    def test_empty_constraints(self, tables):
        m = tables["T2"]
        cs = LinearConstraintSet.empty(m)
        trace = run_opic(SolverOracle(m), cs, RateSchedule(), 5)
        base = solve_offset_eg(m).utilities(m)
        for rec in trace.records:
            assert not np.any(rec.interventions)
            assert np.allclose(rec.allocation.utilities(m), base, atol=1e-6)

    def test_random_pip_market(self):
        cfg = ExperimentConfig(family="pip")
        sampled = sample_market(cfg, market_seed(cfg, 0))
        cs = family_setup("pip", sampled.market, cfg).constraints
        trace = run_opic(SolverOracle(sampled.market), cs, RateSchedule("constant", 0.2), 50)
        assert time_averaged_violation(trace, cs).max_violation < 0.05

    def test_oracle_failure_has_round(self, table_cs):
        oracle = ReplayOracle([np.zeros((4, 2))] * 3)
        with pytest.raises(OracleError) as err:
            run_opic(oracle, table_cs["T1"], RateSchedule(), 5)
        assert err.value.round_index == 3

    def test_rounds_must_be_positive(self, table_cs):
        with pytest.raises(ValueError):
            run_opic(ReplayOracle([]), table_cs["T1"], RateSchedule(), 0)

    def test_deterministic(self, tables, table_cs):
        def go():
            oracle = NoisyOracle(SolverOracle(tables["T5"]), 0.01, seed=3)
            return run_opic(oracle, table_cs["T5"], RateSchedule("constant", 0.2), 30).to_csv(table_cs["T5"])
        assert go() == go()

    def test_csv_columns(self, tables, table_cs):
        trace = run_opic(SolverOracle(tables["T1"]), table_cs["T1"], RateSchedule(), 3)
        lines = trace.to_csv(table_cs["T1"]).splitlines()
        assert lines[0] == ("round,gamma,max_violation,lambda[pbp[buyer=0]],lambda[pbp[buyer=1]],"
                            "residual[pbp[buyer=0]],residual[pbp[buyer=1]]")
        assert len(lines) == 4 and trace.fingerprint == tables["T1"].fingerprint()

    @pytest.mark.parametrize("name", ["T1", "T2", "T2-aef", "T3", "T4", "T5", "T6"])
    def test_matches_offline(self, tables, table_cs, name):
        m, cs = tables[name.split("-")[0]], table_cs[name]
        oracle, state = SolverOracle(m), OpicState.initial(cs)
        for _ in range(1500):
            x = oracle.query(interventions_from_multipliers(cs, state.multipliers)).x
            new = opic_step(state, cs, x, 0.05)
            moved = np.abs(new.multipliers.as_vector() - state.multipliers.as_vector()).max()
            state = new
            if moved < 1e-4:
                break
        induced = solve_offset_eg(m, interventions_from_multipliers(cs, state.multipliers)).utilities(m)
        assert np.allclose(induced, solve_constrained_eg(m, cs).utilities(m), atol=1e-2)

    def test_averaged_violation_decay(self):
        seeds, ok = range(50), 0
        for seed in seeds:
            m = random_market(seed, 4, 4)
            cs = build_pbp(m, [0, 1], [0, 1], [2, 3])
            trace = run_opic(SolverOracle(m), cs, RateSchedule("harmonic", 0.5), 200)
            curve = averaged_violation_curve(trace, cs)
            ok += curve[199] <= curve[19] + 1e-12
        assert ok >= 0.95 * len(seeds)


class TestTimeAverage:
    def test_constant_trace(self, table_cs):
        x = np.array([[0.2, 0.1], [0, 0.3], [0.5, 0], [0.1, 0.4]])
        trace = run_opic(ReplayOracle([x] * 4), table_cs["T1"], RateSchedule(), 4)
        expect = evaluate_constraints(table_cs["T1"], x)
        got = time_averaged_violation(trace, table_cs["T1"])
        assert np.allclose(got.eq_residual, expect.eq_residual)

    def test_cancelling_rounds(self):
        cs = single_row("eq", 0.5)
        trace = run_opic(ReplayOracle([[[0.7]], [[0.3]]]), cs, RateSchedule(), 2)
        assert time_averaged_violation(trace, cs).max_violation == pytest.approx(0.0)
        assert time_averaged_violation(trace, cs, upto=1).max_violation == pytest.approx(0.2)

    def test_empty_and_bad_upto(self, table_cs):
        from fairmarkets import OpicTrace
        with pytest.raises(ValueError):
            time_averaged_violation(OpicTrace(), table_cs["T1"])
        trace = run_opic(ReplayOracle([np.zeros((4, 2))]), table_cs["T1"], RateSchedule(), 1)
        with pytest.raises(ValueError):
            time_averaged_violation(trace, table_cs["T1"], upto=2)

    def test_curve_matches_pointwise(self, tables, table_cs):
        trace = run_opic(SolverOracle(tables["T5"]), table_cs["T5"], RateSchedule(), 10)
        curve = averaged_violation_curve(trace, table_cs["T5"])
        for t in (1, 5, 10):
            assert curve[t - 1] == pytest.approx(time_averaged_violation(trace, table_cs["T5"], t).max_violation)


class TestOracles:
    def test_noisy_nonnegative_and_validated(self, tables):
        o = NoisyOracle(SolverOracle(tables["T1"]), 0.5, seed=0)
        assert np.all(o.query(np.zeros((4, 2))).x >= 0)
        with pytest.raises(ValueError):
            NoisyOracle(o, -1)

    def test_cold_oracle(self, tables):
        a = SolverOracle(tables["T2"], warm=False).query(np.zeros((4, 2)))
        b = SolverOracle(tables["T2"]).query(np.zeros((4, 2)))
        assert np.allclose(a.utilities(tables["T2"]), b.utilities(tables["T2"]), atol=1e-6)
