import numpy as np
import pytest

from fwips import _kernels
from fwips.radiomap import Extent, RadioMap


@pytest.fixture(params=sorted(_kernels.BACKENDS))
def backend(request):
    previous = _kernels.use(request.param)
    yield request.param
    _kernels.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_radiomap(rng, M=20, N=4, D=2, kind="TRM") -> RadioMap:
    points = rng.uniform(0, 10, size=(M, D))
    fps = rng.uniform(-90, -30, size=(M, N))
    return RadioMap(points, fps, 1.0, Extent.of(points), kind)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
