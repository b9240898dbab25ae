import numpy as np
import pytest
from hypothesis import strategies as st

from fairmarkets import Market
from fairmarkets.experiments.repro import table_constraints, table_markets


@pytest.fixture(scope="session")
def tables():
    return table_markets()


@pytest.fixture(scope="session")
def table_cs(tables):
    return table_constraints(tables)


def random_market(seed, n=4, m=5, zero_frac=0.0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0, 1, size=(n, m))
    if zero_frac:
        v[rng.uniform(size=v.shape) < zero_frac] = 0.0
    return Market(rng.uniform(0.5, 2.0, n), v, rng.uniform(0.5, 2.0, m))


@st.composite
def markets(draw, max_n=5, max_m=5):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_market(seed, n, m, zero_frac=draw(st.sampled_from([0.0, 0.3])))


ACCEPTANCE_LINES = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
