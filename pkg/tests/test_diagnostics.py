"""Tests for the convergence diagnostics."""

from __future__ import annotations

import numpy as np
import pytest

from gpd_threshold.diagnostics import (
    autocorrelation,
    effective_sample_size,
    effective_sample_size_by_parameter,
    gelman_rubin,
    gelman_rubin_by_parameter,
)
from gpd_threshold.exceptions import DegenerateVarianceError, DomainError
from gpd_threshold.priors import HyperPriors, ThresholdPriorKind, ThresholdPriorSpec
from gpd_threshold.sampler import run_chains
from test_utils.factories import ChainConfigFactory, OrderedSampleFactory


@pytest.mark.parametrize(
    "chains",
    [
        [[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]],
        [[0.0, 2.0], [1.0, 3.0]],
    ],
    ids=["identical chains", "two short chains"],
)
def test_gelman_rubin_hand_examples(chains: list[list[float]]):
    """Chains that agree on their means give ``sqrt((n - 1) / n)`` plus the between-chain part."""
    n = len(chains[0])
    data = np.asarray(chains)
    within = data.var(axis=1, ddof=1).mean()
    between = n * data.mean(axis=1).var(ddof=1)
    expected = np.sqrt(((n - 1) / n * within + between / n) / within)
    assert gelman_rubin(chains) == pytest.approx(expected)


def test_gelman_rubin_identical_chains_value():
    """Identical chains of length four give ``sqrt(3 / 4)``."""
    assert gelman_rubin([[1.0, 2.0, 3.0, 4.0]] * 2) == pytest.approx(np.sqrt(0.75))


def test_gelman_rubin_shifted_chains(rng: np.random.Generator):
    """Chains centred far apart give a factor well above one."""
    first = rng.normal(0.0, 1.0, 500)
    second = rng.normal(10.0, 1.0, 500)
    assert gelman_rubin([first, second]) > 3


def test_gelman_rubin_mixed_chains(rng: np.random.Generator):
    """Independent chains from one distribution give a factor close to one."""
    chains = rng.normal(0.0, 1.0, (4, 5000))
    assert gelman_rubin(chains) == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize(
    "chains",
    [[[1.0, 2.0]], [[1.0, 2.0], [1.0, 2.0, 3.0]], [[1.0], [2.0]]],
    ids=["single chain", "unequal lengths", "one draw"],
)
def test_gelman_rubin_invalid(chains: list[list[float]]):
    """The factor needs at least two equally long chains of two draws or more."""
    with pytest.raises(DomainError):
        gelman_rubin(chains)


def test_gelman_rubin_constant_chains():
    """Constant chains have no within-chain variance."""
    with pytest.raises(DegenerateVarianceError):
        gelman_rubin([[1.0, 1.0], [2.0, 2.0]])


def test_gelman_rubin_by_parameter():
    """Every recorded parameter except the index gets a factor."""
    config = ChainConfigFactory(iterations=150, burn_in=50)
    spec = ThresholdPriorSpec(ThresholdPriorKind.UNIFORM)
    chains = run_chains(OrderedSampleFactory(n=100), spec, HyperPriors(), config)
    factors = gelman_rubin_by_parameter(chains)
    assert 'k' not in factors
    assert set(factors) == set(chains[0].parameter_names) - {'k'}
    assert all(np.isnan(value) or value > 0 for value in factors.values())


def test_gelman_rubin_by_parameter_pinned_threshold():
    """A threshold pinned to one order statistic is reported as ``nan``."""
    config = ChainConfigFactory(iterations=120, burn_in=20)
    spec = ThresholdPriorSpec(ThresholdPriorKind.UNIFORM, 90, 90)
    chains = run_chains(OrderedSampleFactory(n=100), spec, HyperPriors(), config)
    assert np.isnan(gelman_rubin_by_parameter(chains)['theta'])


def test_autocorrelation_of_alternating_trace():
    """An alternating trace is perfectly anti-correlated at lag one."""
    rho = autocorrelation(np.tile([1.0, -1.0], 50))
    assert rho[0] == pytest.approx(1.0)
    assert rho[1] == pytest.approx(-0.99)


def test_effective_sample_size_white_noise(rng: np.random.Generator):
    """Independent draws have an effective size close to the trace length."""
    assert effective_sample_size(rng.normal(size=4000)) == pytest.approx(4000, rel=0.15)


def test_effective_sample_size_ar1(rng: np.random.Generator):
    """A strongly autocorrelated trace has a much smaller effective size."""
    trace = np.zeros(5000)
    for t in range(1, trace.size):
        trace[t] = 0.9 * trace[t - 1] + rng.normal()
    # The asymptotic value is n (1 - 0.9) / (1 + 0.9).
    assert effective_sample_size(trace) == pytest.approx(5000 * 0.1 / 1.9, rel=0.35)


def test_effective_sample_size_constant_trace():
    """A constant trace has no defined effective size."""
    assert np.isnan(effective_sample_size(np.ones(10)))


def test_effective_sample_size_by_parameter_sums_chains():
    """Per-chain effective sizes add up; the threshold index is left out and a pinned threshold gives ``nan``."""
    config = ChainConfigFactory(iterations=120, burn_in=20)
    spec = ThresholdPriorSpec(ThresholdPriorKind.UNIFORM, 90, 90)
    chains = run_chains(OrderedSampleFactory(n=100), spec, HyperPriors(), config)
    sizes = effective_sample_size_by_parameter(chains)
    assert 'k' not in sizes
    assert np.isnan(sizes['theta'])
    expected = sum(effective_sample_size(chain.trace('xi')) for chain in chains)
    assert sizes['xi'] == pytest.approx(expected)
    assert 0 < sizes['xi'] <= 100 * len(chains)
