import numpy as np
import pytest

from ae_locate.sim import PlateSpec, SensorLayout


@pytest.fixture
def plate():
    return PlateSpec()


@pytest.fixture
def iso_plate():
    return PlateSpec(anisotropy_ratio=0.0)


@pytest.fixture
def layout(plate):
    return SensorLayout.corners(plate)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> one-line verdict, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
