"""Shared fixtures and command-line options of the test suite."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest

from gpd_threshold.distributions import OrderedSample, splice_sample
from test_utils.factories import SpliceModelFactory


def pytest_addoption(parser: pytest.Parser):
    """Paths of the user-supplied datasets; tests that need them are skipped otherwise."""
    parser.addoption('--danish-data', default=None, help='CSV file with the 2167 Danish fire insurance losses.')
    parser.addoption('--nasdaq-data', default=None, help='CSV file with the 4394 NASDAQ daily closing prices.')


def _data_path(request: pytest.FixtureRequest, option: str) -> Path:
    value = request.config.getoption(option)
    if not value or not Path(value).is_file():
        pytest.skip(f'{option} not given or not a file.')
    return Path(value)


@pytest.fixture
def danish_data(request: pytest.FixtureRequest) -> Path:
    """Path of the Danish fire insurance losses."""
    return _data_path(request, '--danish-data')


@pytest.fixture
def nasdaq_data(request: pytest.FixtureRequest) -> Path:
    """Path of the NASDAQ closing prices."""
    return _data_path(request, '--nasdaq-data')


@pytest.fixture
def rng() -> np.random.Generator:
    """A seeded random generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def spliced_sample() -> OrderedSample:
    """Five hundred draws from the two-gamma bulk spliced with a GPD at 9."""
    return OrderedSample(splice_sample(500, SpliceModelFactory(), np.random.default_rng(2024)))


@pytest.fixture(autouse=True)
def _propagate_package_logs():
    """Let ``caplog`` see package records after a CLI invocation has applied its logging settings."""
    logger = logging.getLogger('gpd_threshold')
    propagate = logger.propagate
    logger.propagate = True
    yield
    logger.propagate = propagate
