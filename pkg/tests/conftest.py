import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

from robustdln.data import NoiseSpec, generate_dataset  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def small_ds():
    return generate_dataset(30, 3, 40, 1.0, 2.0, NoiseSpec(0.1, "gaussian", 10.0), 7)


@pytest.fixture
def clean_ds():
    return generate_dataset(12, 3, 60, 1.0, 2.0, NoiseSpec(0.0), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
