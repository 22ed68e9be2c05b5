import math

import numpy as np
import pytest

from portfolio_rl.market_data import DEFAULT_FEATURES, SyntheticSpec, build_feature_cube, generate_synthetic


def rising_market(days=600, features=DEFAULT_FEATURES):
    """One asset gaining 0.5% a day, two flat assets, no noise."""
    spec = SyntheticSpec(mu=(math.log(1.005), 0.0, 0.0), sigma=(0.0, 0.0, 0.0), days=days)
    return build_feature_cube(generate_synthetic(spec, 0), features)


@pytest.fixture(scope="session")
def rising_cube():
    return rising_market()


@pytest.fixture(scope="session")
def noisy_series():
    spec = SyntheticSpec(mu=(0.0005, 0.0, -0.0003), sigma=(0.01, 0.02, 0.015), days=120)
    return generate_synthetic(spec, 11)


@pytest.fixture(scope="session")
def noisy_cube(noisy_series):
    return build_feature_cube(noisy_series, DEFAULT_FEATURES)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    ok, _ = _CRITERIA.get(number, (True, title))
    _CRITERIA[number] = (ok and report.passed, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
