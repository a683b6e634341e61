import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from fracfed.objectives import LogReg  # noqa: E402
from fracfed.partition import synth_classification  # noqa: E402


@pytest.fixture(scope="session")
def blobs():
    """Ten-class synthetic set shared by partition and federation tests."""
    return synth_classification(600, 8, 10, 3.0, seed=11)


@pytest.fixture(scope="session")
def small_logreg():
    ds = synth_classification(60, 4, 3, 3.0, seed=3)
    return ds, LogReg(ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        request.config.stash.setdefault(_VERDICTS, []).append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
