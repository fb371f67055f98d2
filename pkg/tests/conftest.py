import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sobex.geom import DomainSpec, l_shape, unit_disk, unit_square

settings.register_profile("sobex", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sobex")


@pytest.fixture
def disk():
    return unit_disk()


@pytest.fixture
def square():
    return unit_square()


@pytest.fixture
def lshape():
    return l_shape()


@pytest.fixture
def slit():
    return DomainSpec.slit_disk(1.0, 0.5)


@pytest.fixture
def cusp():
    return DomainSpec.power_cusp(2.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance line; the lines are repeated in the terminal summary."""
    def log(n, ok, detail, seconds):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f} s)"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
