import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from segclt.kernels import KernelState, ZeroStream

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def zero_state(kernel, z0, n=1):
    """Kernel state whose innovations are switched off."""
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (n, np.shape(z0)[-1]))
    return KernelState(kernel.initial(z0), ZeroStream(n, kernel.width))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
