import numpy as np
import pytest

from wavereg.model import DataShard


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_linear_shard(rng, n, p, beta=None, noise=1.0, worker_id=0):
    x = rng.standard_normal((n, p))
    if beta is None:
        beta = np.zeros(p)
    y = x @ beta + noise * rng.standard_normal(n)
    return DataShard(worker_id, x, y)


ACCEPTANCE = {}


def record(number, passed, detail):
    """Store one acceptance outcome and echo it on the captured stdout."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
