import numpy as np
import pytest

from agitrisk.core import VitalRanges
from agitrisk.pipeline import build_samples
from agitrisk.synth import CohortSpec, generate_dataset


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(CohortSpec())


@pytest.fixture(scope="session")
def default_samples(default_dataset):
    ds = default_dataset
    return build_samples(ds.events, ds.vitals, ds.alerts, VitalRanges())


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(CohortSpec(n_participants=6, days=30, n_true_episodes=12, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
