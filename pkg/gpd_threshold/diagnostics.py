"""Convergence diagnostics for sampler output."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import TYPE_CHECKING

import numpy as np

from gpd_threshold.exceptions import DegenerateVarianceError, DomainError

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike, NDArray

    from gpd_threshold.sampler import PosteriorSamples

log = logging.getLogger(__name__)


def gelman_rubin(chains: Sequence[ArrayLike]) -> float:
    """
    Potential scale reduction factor of a scalar parameter.

    ``W`` is the mean of the within-chain sample variances and ``B`` is ``n`` times the sample variance of the chain
    means, both with ``n - 1`` denominators; the factor is ``sqrt(((n - 1) / n * W + B / n) / W)``.

    :param chains: At least two traces of equal length ``n >= 2``.
    :raises DomainError: For fewer than two chains, chains shorter than two or of unequal length.
    :raises DegenerateVarianceError: When every chain is constant.
    """
    if len(chains) < 2:  # noqa: PLR2004
        msg = f'The scale reduction factor needs at least two chains, got {len(chains)}.'
        raise DomainError(msg)
    lengths = {len(chain) for chain in chains}
    if len(lengths) != 1:
        msg = f'Chains must have equal lengths, got {sorted(lengths)}.'
        raise DomainError(msg)
    data = np.asarray(chains, dtype=float)
    n = data.shape[1]
    if n < 2:  # noqa: PLR2004
        msg = 'Chains must hold at least two draws.'
        raise DomainError(msg)

    within = data.var(axis=1, ddof=1).mean()
    if within == 0:
        msg = 'Every chain is constant; the scale reduction factor is undefined.'
        raise DegenerateVarianceError(msg)
    between = n * data.mean(axis=1).var(ddof=1)
    return float(np.sqrt(((n - 1) / n * within + between / n) / within))


def gelman_rubin_by_parameter(chains: Sequence[PosteriorSamples]) -> dict[str, float]:
    """
    Scale reduction factor of every scalar parameter across chains.

    Parameters that stay constant in every chain (typically a threshold stuck on one order statistic) get ``nan``.
    """
    factors = {}
    for name in chains[0].parameter_names:
        if name == 'k':
            continue
        try:
            factors[name] = gelman_rubin([chain.trace(name) for chain in chains])
        except DegenerateVarianceError:
            log.warning('Parameter %s is constant in every chain; no scale reduction factor.', name)
            factors[name] = float('nan')
    return factors


def autocorrelation(trace: ArrayLike) -> NDArray[np.float64]:
    """Normalized autocorrelation function of a trace, computed with an FFT."""
    trace = np.asarray(trace, dtype=float)
    centred = trace - trace.mean()
    size = 2 ** int(np.ceil(np.log2(2 * trace.size)))
    spectrum = np.fft.rfft(centred, n=size)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[: trace.size]
    return acov / acov[0]


def effective_sample_size(trace: ArrayLike) -> float:
    """
    Effective sample size from the autocorrelations.

    Autocorrelations are summed in consecutive pairs until a pair sum turns negative. A constant trace yields ``nan``.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size < 2 or np.ptp(trace) == 0:  # noqa: PLR2004
        return float('nan')
    rho = autocorrelation(trace)
    total = 0.0
    for lag in range(1, trace.size - 1, 2):
        pair = rho[lag] + rho[lag + 1]
        if pair < 0:
            break
        total += pair
    return float(trace.size / (1.0 + 2.0 * total))


def effective_sample_size_by_parameter(chains: Sequence[PosteriorSamples]) -> dict[str, float]:
    """Effective sample size of every scalar parameter, summed over chains; ``nan`` when a parameter never moves."""
    sizes = {}
    for name in chains[0].parameter_names:
        if name == 'k':
            continue
        per_chain = [effective_sample_size(chain.trace(name)) for chain in chains]
        sizes[name] = float('nan') if all(np.isnan(per_chain)) else float(np.nansum(per_chain))
    return sizes
