import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chanest.signal_model import ArrayGeometry, OfdmConfig

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py, printed at the end of the session
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, line = CRITERIA[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {line}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_setup():
    """Four-element ULA with eight subcarriers."""
    return ArrayGeometry.ula(4), OfdmConfig(N=8, T_s=1.0, T_cp=4.0)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
