import numpy as np
import pytest

from deformed_rmt.measure import DiscreteMeasure, ModelSpec


def mp(c=1.0, spikes=()):
    return ModelSpec(c, DiscreteMeasure.dirac(1.0), tuple(spikes))


def noiseless(c=1.0, spikes=()):
    return ModelSpec(c, DiscreteMeasure.dirac(0.0), tuple(spikes))


def two_level(c, t1, t2, spikes=()):
    return ModelSpec(c, DiscreteMeasure.from_pairs([[t1, 0.5], [t2, 0.5]]), tuple(spikes))


@pytest.fixture
def fig1():
    return two_level(0.1, 1.0, 3.0)


@pytest.fixture
def fig2():
    return two_level(5.0, 0.5, 2.5)


def mp_density(x, c):
    a, b = (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    inside = (x > a) & (x < b)
    out[inside] = np.sqrt((b - x[inside]) * (x[inside] - a)) / (2 * np.pi * c * x[inside])
    return out


def mp_m_real(x, c=1.0):
    """Closed-form m(x) for nu = delta_1 at real x right of the bulk.

    Solves c x m^2 + (x + c - 1) m + 1 = 0 and takes the root with m x -> -1.
    """
    disc = (x + c - 1.0) ** 2 - 4.0 * c * x
    return (-(x + c - 1.0) + np.sqrt(disc)) / (2.0 * c * x)


ACCEPTANCE = {}


def record_criterion(number, ok, detail, seconds):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
