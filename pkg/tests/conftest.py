import numpy as np
import pytest

from panorig.pipeline import Capture, prepare
from panorig.rigsim import generate_scene, kinect_like, noiseless

SEED = 7


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(noise=noiseless(SEED))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(noise=kinect_like(SEED))


@pytest.fixture(scope="session")
def clean_capture(clean_scene):
    return Capture.from_scene(clean_scene)


@pytest.fixture(scope="session")
def noisy_capture(noisy_scene):
    return Capture.from_scene(noisy_scene)


@pytest.fixture(scope="session")
def noisy_prepared(noisy_capture):
    return prepare(noisy_capture)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_twist(rng, max_angle=np.pi - 0.01, max_trans=2.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0, max_angle)
    rho = rng.uniform(-max_trans, max_trans, size=3)
    return np.concatenate([rho, phi])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
