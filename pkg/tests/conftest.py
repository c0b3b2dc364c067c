import numpy as np
import pytest

from pseudolidar_cor import CameraModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cam100():
    # f=100, principal point (50, 40) on a 100x80 image
    return CameraModel(100.0, 100.0, 50.0, 40.0, 100, 80)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
