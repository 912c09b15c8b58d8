import time

import numpy as np
import pytest

from blankcanvas.attack import protect
from blankcanvas.bench import make_fixtures
from blankcanvas.config import AttackConfig, DetectConfig
from blankcanvas.oracle import ToySegmenter

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy():
    return ToySegmenter()


@pytest.fixture(scope="session")
def blank_C(toy):
    return toy.blank_constant


@pytest.fixture(scope="session")
def attack_cfg(blank_C):
    return AttackConfig(C=blank_C)


@pytest.fixture(scope="session")
def detect_cfg(blank_C):
    return DetectConfig(C=blank_C)


@pytest.fixture(scope="session")
def fixtures():
    return make_fixtures(8)


@pytest.fixture(scope="session")
def protected_set(fixtures, toy, attack_cfg):
    """Default-config protection of the 8 shipped fixtures, with wall time."""
    start = time.perf_counter()
    runs = [protect(x, toy, attack_cfg) for x in fixtures]
    elapsed = time.perf_counter() - start
    return [p for p, _ in runs], [r for _, r in runs], elapsed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
