from __future__ import annotations

import numpy as np
import pytest

from suffixbench import synthetic

from .helpers import ACCEPTANCE, random_log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def memo_log():
    return synthetic.sample_log(synthetic.memorization_spec(), 200, seed=0, name="memo")


@pytest.fixture
def small_log():
    return random_log(np.random.default_rng(7))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n:>2}: {status:<4} {detail}")
