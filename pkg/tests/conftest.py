import numpy as np
import pytest

from advbench3d.detectors import make_detector
from advbench3d.synth import synth_generate


@pytest.fixture(scope="session")
def toy_a():
    return make_detector("toy-a")


@pytest.fixture(scope="session")
def toy_b():
    return make_detector("toy-b")


@pytest.fixture(scope="session")
def toy_temporal():
    return make_detector("toy-temporal")


@pytest.fixture(scope="session")
def scene():
    return synth_generate(3, n_frames=2, n_objects=6)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
