import numpy as np
import pytest
from hypothesis import settings

from shiftmod.learners import LearnerSpec

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")

FAST_ROSTER = (
    LearnerSpec("intercept_only"),
    LearnerSpec("linear_ols"),
    LearnerSpec("logistic_glm"),
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fast_roster():
    return FAST_ROSTER


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k[2:])):
        terminalreporter.write_line(results[key])
