"""Shared fixtures: vendored dataset cache, tiny synthetic datasets."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from paramscope.data import Dataset

settings.register_profile(
    "default",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

REPO_ROOT = Path(__file__).resolve().parent.parent
VENDORED_DATA = REPO_ROOT / "data"

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collector for one pass/fail line per acceptance criterion."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data_cache() -> str:
    """Cache directory holding the vendored MNIST archives."""
    assert (VENDORED_DATA / "mnist").is_dir(), "vendored MNIST missing"
    return str(VENDORED_DATA)


@pytest.fixture()
def tiny_dataset() -> Dataset:
    """300 deterministic fake images, labels cycling 0..9."""
    n = 300
    rng = np.random.default_rng(1234)
    images = rng.random((n, 1, 8, 8))
    labels = np.arange(n, dtype=np.int64) % 10
    return Dataset(name="mnist", split="train", images=images, labels=labels)
