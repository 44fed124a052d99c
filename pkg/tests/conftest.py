import numpy as np
import pytest
from hypothesis import settings

from jitteradj.geometry import Polygon
from jitteradj.mesh import build_mesh

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def square():
    return Polygon.rectangle(0.0, 0.0, 100.0, 100.0)


@pytest.fixture(scope="session")
def small_mesh(square):
    return build_mesh(square, 10.0, 20.0, 20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import criteria

    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(criteria.RESULTS):
            terminalreporter.write_line(criteria.RESULTS[k])
