import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aprs.seeding import generator, random_scalar
from aprs.spectral import Lattice, SpectralField

settings.register_profile("aprs", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("aprs")


@pytest.fixture
def lat8():
    return Lattice(8, 8)


@pytest.fixture
def lat16():
    return Lattice(16, 16)


def rand_field(lat, seed, parity="none", slope=1.0, stream=7, **kw):
    return SpectralField(lat, random_scalar(lat, generator(seed, stream), parity=parity, slope=slope, **kw), parity)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
