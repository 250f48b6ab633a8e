import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relcomm.core import PoolingSet

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_pooling(rng: np.random.Generator, max_pools: int = 4) -> PoolingSet:
    """Random valid pooling set; endpoints may touch 0 and 1."""
    k = int(rng.integers(0, max_pools + 1))
    pts = np.sort(rng.uniform(0.0, 1.0, 2 * k))
    pairs = [(pts[2 * i], pts[2 * i + 1]) for i in range(k)]
    if k and rng.random() < 0.3:
        pairs[0] = (0.0, pairs[0][1])
    if k and rng.random() < 0.3:
        pairs[-1] = (pairs[-1][0], 1.0)
    return PoolingSet.from_pairs(pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the pass flag for the caller to assert."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
