import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lvseg.phantom import PhantomSpec, default_profiles, generate_cohort
from lvseg.preprocess import IntensityStandardizer
from lvseg.volume import BinaryMask, Spacing, Volume

settings.register_profile("lvseg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lvseg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, shape=(16, 16, 4), p=0.5, spacing=Spacing(1.0, 1.0, 1.0)):
    return BinaryMask(rng.random(shape) < p, spacing)


def random_volume(rng, shape=(8, 8, 4), spacing=Spacing(1.0, 1.0, 1.0)):
    return Volume(rng.normal(100.0, 30.0, shape), spacing)


@pytest.fixture(scope="session")
def source_cases():
    return generate_cohort(6, PhantomSpec(), default_profiles("source"), seed=77, dataset="source")


@pytest.fixture(scope="session")
def source_scans(source_cases):
    return IntensityStandardizer().fit_transform(source_cases)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
