import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from bivtail.prior import sample_surface
from bivtail.spectral import SpectralParams

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_params(m: int, seed: int) -> SpectralParams:
    """Uniform draw from the m-atom parameter surface."""
    theta = sample_surface(m, 1, np.random.default_rng(seed))[0]
    return SpectralParams(theta.h0, theta.h1, theta.ys)


@st.composite
def spectral_params(draw, max_m: int = 20):
    m = draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_params(m, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[key])
