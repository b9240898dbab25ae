import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmarkets import LinearProgram, MarketError, solve_lp
from fairmarkets.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp_highs


def test_max_x_bounded():
    r = solve_lp(LinearProgram([1.0], [[1.0]], [1.0]))
    assert r.ok and r.value == pytest.approx(1.0) and r.x[0] == pytest.approx(1.0)


def test_degenerate_optimum_value_only():
    r = solve_lp(LinearProgram([1.0, 1.0], [[1.0, 1.0]], [1.0]))
    assert r.status == OPTIMAL and r.value == pytest.approx(1.0)
    assert r.x.sum() == pytest.approx(1.0) and np.all(r.x >= -1e-12)


def test_infeasible():
    lp = LinearProgram([1.0], [[1.0]], [1.0], [[1.0]], [2.0])
    assert solve_lp(lp).status == INFEASIBLE


def test_unbounded():
    assert solve_lp(LinearProgram([1.0, 0.0], [[-1.0, 1.0]], [1.0])).status == UNBOUNDED


def test_free_variable_and_upper_bound():
    # max -y with y free and y >= x - 3, x in [0, 1] fixed near 1 by objective
    lp = LinearProgram([1.0, -1.0], [[1.0, -1.0]], [3.0], lower=[0.0, -np.inf], upper=[1.0, np.inf])
    r = solve_lp(lp)
    assert r.ok and r.value == pytest.approx(3.0) and r.x[1] == pytest.approx(-2.0)


def test_duals_satisfy_complementary_slackness():
    # max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3
    lp = LinearProgram([3.0, 2.0], [[1, 1], [1, 3], [1, 0]], [4, 6, 3])
    r = solve_lp(lp)
    assert r.value == pytest.approx(11.0)
    assert r.duals_ub @ lp.b_ub == pytest.approx(r.value)
    assert np.allclose(r.duals_ub, [2, 0, 1])


def test_dantzig_rule_agrees():
    lp = LinearProgram([3.0, 2.0], [[1, 1], [1, 3], [1, 0]], [4, 6, 3])
    assert solve_lp(lp, rule="dantzig").value == pytest.approx(11.0)


def test_validation():
    with pytest.raises(MarketError):
        LinearProgram([])
    with pytest.raises(MarketError):
        LinearProgram([1.0], [[1.0, 2.0]], [1.0])
    with pytest.raises(MarketError):
        LinearProgram([1.0], [[np.nan]], [1.0])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2))
def test_matches_highs(seed, n, k, k_eq):
    pytest.importorskip("scipy")
    rng = np.random.default_rng(seed)
    A = rng.integers(-3, 4, (k, n)).astype(float)
    b = rng.integers(-2, 6, k).astype(float)
    E = rng.integers(-2, 3, (k_eq, n)).astype(float)
    E[E.sum(axis=1) == 0, 0] = 1.0
    f = rng.integers(0, 4, k_eq).astype(float)
    lp = LinearProgram(rng.integers(-3, 4, n).astype(float), A, b, E if k_eq else None, f if k_eq else None,
                       upper=np.full(n, 5.0))
    ours, ref = solve_lp(lp), solve_lp_highs(lp)
    assert ours.status == ref.status
    if ours.ok:
        assert ours.value == pytest.approx(ref.value, abs=1e-7)
        assert np.all(lp.A_ub @ ours.x <= lp.b_ub + 1e-7)
        assert np.allclose(lp.A_eq @ ours.x, lp.b_eq, atol=1e-7)
        assert np.all(ours.x >= -1e-9) and np.all(ours.x <= 5 + 1e-9)
