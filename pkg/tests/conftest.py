import os

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail); filled by the acceptance tests
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(p, rng, ridge=0.5):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + ridge * np.eye(p)


def dense_kron(mats):
    """Sigma_M kron ... kron Sigma_1 for the Fortran-order vectorization."""
    out = np.ones((1, 1))
    for S in mats:
        out = np.kron(S, out)
    return out


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
