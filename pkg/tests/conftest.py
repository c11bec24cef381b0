import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frdct.estimator import EstimationConfig, estimate
from frdct.simulate import DgpConfig, estimation_family, generate_dgp

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def base_sample():
    return generate_dgp(DgpConfig(n=1000, seed=11))


@pytest.fixture(scope="session")
def base_fit(base_sample):
    cfg = DgpConfig(n=1000, seed=11)
    return estimate(base_sample, estimation_family(cfg), EstimationConfig(covariance=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


CRITERION_LINES: list = []


@pytest.fixture
def criterion_report():
    """Collects one summary line per acceptance criterion."""
    def record(k, passed: bool, detail: str):
        line = f"CRITERION {k}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERION_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
