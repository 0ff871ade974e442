import numpy as np
import pytest

from tylermp.sampling import SeedSpec, sample_gaussian

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(cid, passed, detail):
        ACCEPTANCE[cid] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {cid}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def gaussian_500_100():
    return sample_gaussian(500, 100, SeedSpec(11))


@pytest.fixture(scope="session")
def gaussian_2000_400():
    return sample_gaussian(2000, 400, SeedSpec(12))
