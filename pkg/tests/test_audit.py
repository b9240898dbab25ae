import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fairmarkets import (Allocation, Market, MarketError, budget_adjusted_envy, build_aef, buyer_item_pareto_gap,
                         buyer_pareto_gap, exposure, exposure_report, solve_constrained_eg, solve_offset_eg,
                         welfare_delta)

from conftest import random_market

T1_PBFP = Allocation([[0, 0], [0, 0], [1, 0], [0, 1]], [1, 1, 0, 0])
T1_EG_X = np.array([[1 / 3, 0], [0, 1 / 3], [2 / 3, 0], [0, 2 / 3]])
T6_AEF_X = np.array([[0.5, 1.0], [0.5, 0.0]])


def _certificate_valid(market, rep, buyer_set=(), item_set=(), baseline=None):
    c = rep.certificate
    assert np.all(c >= -1e-9)
    assert np.all(c.sum(axis=0) <= market.supplies + 1e-7)
    vals = np.einsum("ij,ij->i", market.valuations, c)
    assert np.all(vals >= rep.baseline_values - 1e-7)
    if buyer_set and item_set:
        assert exposure(c, buyer_set, item_set) >= exposure(baseline, buyer_set, item_set) - 1e-7


class TestEnvy:
    def test_table1_pbfp(self, tables):
        rep = budget_adjusted_envy(tables["T1"], T1_PBFP, ["C", "C", "U", "U"])
        assert rep.group_max() == {"C": 0.0, "U": 0.0}
        assert rep.envy[0, 2] == pytest.approx(0.5)
        assert rep.max_cross == pytest.approx(0.5)

    def test_identical_buyers(self):
        m = Market([1, 1], [[1, 2], [1, 2]])
        rep = budget_adjusted_envy(m, Allocation([[0.5, 0.5], [0.5, 0.5]], [0, 0]), [0, 0])
        assert not np.any(rep.envy)

    def test_budget_scaling(self):
        # buyer 0 has half of buyer 1's budget, so it compares with half of 1's bundle
        m = Market([1, 2], [[2, 0], [0, 1]])
        rep = budget_adjusted_envy(m, Allocation([[0.3, 0], [0.7, 1]], [0, 0]), ["a", "b"])
        assert rep.envy[0, 1] == pytest.approx(0.5 * 2 * 0.7 - 0.6)
        assert rep.envy[1, 0] == 0

    def test_mapping_groups_and_errors(self, tables):
        rep = budget_adjusted_envy(tables["T1"], T1_PBFP, {"C": [0, 1], "U": [2, 3]})
        assert rep.groups == ("C", "C", "U", "U")
        with pytest.raises(MarketError):
            budget_adjusted_envy(tables["T1"], T1_PBFP, {"C": [0, 1], "U": [2]})
        with pytest.raises(MarketError):
            budget_adjusted_envy(tables["T1"], T1_PBFP, ["C"])

    def test_csv(self, tables):
        lines = budget_adjusted_envy(tables["T1"], T1_PBFP, ["C", "C", "U", "U"]).to_csv().splitlines()
        assert lines[0] == "buyer,other,buyer_group,other_group,same_group,envy" and len(lines) == 13


class TestParetoGap:
    def test_table6_buyer_gap_is_one(self, tables):
        rep = buyer_pareto_gap(tables["T6"], T6_AEF_X)
        assert rep.gap == pytest.approx(1.0) and rep.variant == "buyer"
        _certificate_valid(tables["T6"], rep)

    def test_table6_buyer_item_gap_is_zero(self, tables):
        assert buyer_item_pareto_gap(tables["T6"], T6_AEF_X, [0], [0]).gap == pytest.approx(0.0, abs=1e-9)

    def test_table3_both_variants(self, tables):
        m, x = tables["T3"], np.full((2, 2), 0.5)
        b = buyer_pareto_gap(m, x)
        bi = buyer_item_pareto_gap(m, x, [0], [1])
        assert b.gap > 0.1 and bi.gap > 0.1 and bi.variant == "buyer-item"
        _certificate_valid(m, bi, [0], [1], x)

    def test_welfare_max_baseline(self, tables):
        # each item to whoever values it most
        assert buyer_pareto_gap(tables["T5"], np.eye(2)).gap == pytest.approx(0.0, abs=1e-12)

    def test_empty_sets_reduce(self, tables):
        x = np.full((2, 2), 0.5)
        a = buyer_item_pareto_gap(tables["T3"], x, [], [1])
        assert a.variant == "buyer" and a.gap == pytest.approx(buyer_pareto_gap(tables["T3"], x).gap)

    def test_bad_shape(self, tables):
        with pytest.raises(MarketError):
            buyer_pareto_gap(tables["T3"], np.zeros((3, 2)))

    @settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(st.integers(0, 2**32 - 1))
    def test_unconstrained_equilibrium_is_efficient(self, seed):
        m = random_market(seed, 5, 6, zero_frac=0.2)
        assert buyer_pareto_gap(m, solve_offset_eg(m).alloc.x).gap <= 1e-4

    @settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(st.integers(0, 2**32 - 1))
    def test_aef_is_buyer_item_efficient(self, seed):
        m = random_market(seed, 5, 6)
        cs = build_aef(m, [0, 1], [0, 1, 2], 0.4 * m.supplies[:3].sum())
        eq = solve_constrained_eg(m, cs)
        rep = buyer_item_pareto_gap(m, eq.alloc.x, [0, 1], [0, 1, 2])
        assert rep.gap <= 1e-4

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_certificates_valid(self, seed):
        rng = np.random.default_rng(seed)
        m = random_market(seed, 3, 4)
        x = rng.dirichlet(np.ones(4), size=4).T[:3] * m.supplies  # column sums <= supply
        rep = buyer_item_pareto_gap(m, x, [0], [0, 1])
        if rep.certificate is not None:
            _certificate_valid(m, rep, [0], [0, 1], x)


class TestExposure:
    def test_table1(self):
        assert exposure(T1_EG_X, [0, 1], [0]) == pytest.approx(1 / 3)
        assert exposure(T1_PBFP.x, [0, 1], [0, 1]) == 0

    def test_empty(self):
        assert exposure(T1_EG_X, [], [0]) == 0 and exposure(T1_EG_X, [0], []) == 0

    def test_out_of_range(self):
        with pytest.raises(MarketError):
            exposure(T1_EG_X, [4], [0])

    def test_report(self):
        rep = exposure_report(T1_EG_X, {"C-all": ([0, 1], [0, 1]), "U-A": ([2, 3], [0])})
        assert rep.values["C-all"] == pytest.approx(2 / 3) and "U-A" in rep.summary()

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sets(st.integers(0, 4)), st.sets(st.integers(0, 5)),
           st.integers(0, 4), st.integers(0, 5))
    def test_monotone(self, seed, S, Q, i, j):
        x = np.random.default_rng(seed).uniform(0, 1, (5, 6))
        base = exposure(x, S, Q)
        assert exposure(x, S | {i}, Q) >= base and exposure(x, S, Q | {j}) >= base
        assert base >= 0


class TestWelfareDelta:
    def test_table1(self, tables):
        m = tables["T1"]
        base = Allocation(T1_EG_X, [0.5, 0.5, 0, 0])
        wd = welfare_delta(m, base, T1_PBFP, [0, 1])
        assert np.allclose(wd.deltas, [0, 0, 5 / 3, 5 / 3])
        s = wd.summary()
        assert s["target"]["mean"] == pytest.approx(0) and s["other"]["mean"] == pytest.approx(5 / 3)

    def test_table5(self, tables):
        m = tables["T5"]
        wd = welfare_delta(m, Allocation(np.eye(2), [0, 0]), Allocation(np.full((2, 2), 0.5), [0, 0]), [0])
        assert np.allclose(wd.deltas, [-0.5, -0.5])

    def test_identical(self, tables):
        eq = solve_offset_eg(tables["T2"])
        wd = welfare_delta(tables["T2"], eq, eq, [0, 1])
        assert not np.any(wd.deltas) and wd.others == (2, 3)
        assert wd.to_csv().splitlines()[0] == "buyer,group,u_base,u_constrained,delta"

    def test_out_of_range_target(self, tables):
        eq = solve_offset_eg(tables["T5"])
        with pytest.raises(MarketError):
            welfare_delta(tables["T5"], eq, eq, [2])
