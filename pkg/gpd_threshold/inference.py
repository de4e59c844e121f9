"""Likelihood and unnormalized joint log posterior of the spliced model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from gpd_threshold.distributions import GpdParams, bulk_log_density, bulk_log_survival, gpd_log_density
from gpd_threshold.exceptions import DomainError
from gpd_threshold.priors import (
    ThresholdPriorKind,
    bulk_hyper_log_prior,
    jeffreys_log_prior,
    threshold_log_masses,
)

if TYPE_CHECKING:  # pragma: no cover
    from gpd_threshold.distributions import BulkMixture, OrderedSample
    from gpd_threshold.priors import HyperPriors, ThresholdLogMasses, ThresholdPriorSpec


@dataclass(frozen=True)
class ModelState:
    """Full parameter vector: bulk mixture, GPD shape and scale, and the threshold index ``k`` (1-based)."""

    bulk: BulkMixture
    xi: float
    sigma: float
    k: int

    def __post_init__(self):
        """Check the scale and the index; support membership is checked against a prior spec."""
        if not (self.sigma > 0 and np.isfinite(self.sigma) and np.isfinite(self.xi)):
            msg = f'Invalid GPD parameters in the model state: xi={self.xi!r}, sigma={self.sigma!r}.'
            raise DomainError(msg)
        if self.k < 2:  # noqa: PLR2004
            msg = f'At least one observation must stay in the bulk, got k={self.k}.'
            raise DomainError(msg)

    def gpd(self, sample: OrderedSample) -> GpdParams:
        """GPD parameters with the threshold placed at ``x^(k)``."""
        return GpdParams(self.xi, self.sigma, sample.order_stat(self.k))


class PosteriorTerms(NamedTuple):
    """Additive terms of the log posterior."""

    log_likelihood: float
    threshold_prior: float
    gpd_prior: float
    bulk_prior: float

    @property
    def total(self) -> float:
        """The log posterior; ``-inf`` if any term is ``-inf``."""
        terms = (self.gpd_prior, self.threshold_prior, self.bulk_prior, self.log_likelihood)
        if any(term == -np.inf for term in terms):
            return -np.inf
        return float(sum(terms))


def log_likelihood(sample: OrderedSample, state: ModelState) -> float:
    """
    Log likelihood with the threshold at the order statistic ``x^(k)``.

    Observations below ``x^(k)`` contribute the untruncated bulk density ``h``; the ``n - k + 1`` observations from
    ``x^(k)`` upwards contribute ``[1 - H(x^(k))] g(x | xi, sigma, x^(k))``. Returns ``-inf`` when ``k`` is outside
    ``{2, ..., n}`` or a tail observation lies beyond the GPD support.
    """
    if not 2 <= state.k <= sample.n:  # noqa: PLR2004
        return -np.inf
    x = sample.order_stats
    gpd = state.gpd(sample)
    tail = gpd_log_density(x[state.k - 1 :], gpd).sum()
    if tail == -np.inf:
        return -np.inf
    bulk = bulk_log_density(x[: state.k - 1], state.bulk).sum()
    n_tail = sample.n - state.k + 1
    return float(bulk + n_tail * bulk_log_survival(gpd.threshold, state.bulk) + tail)


def log_posterior_terms(
    sample: OrderedSample,
    state: ModelState,
    spec: ThresholdPriorSpec,
    hyp: HyperPriors,
    masses: ThresholdLogMasses | None = None,
) -> PosteriorTerms:
    """
    Evaluate every term of the unnormalized log posterior.

    :param masses: Threshold log masses already computed for ``(state.xi, state.sigma)``; computed when omitted.
    """
    gpd_prior = jeffreys_log_prior(state.xi, state.sigma)
    if spec.kind is ThresholdPriorKind.KL and not state.xi > 0:
        threshold_prior = -np.inf
    else:
        if masses is None:
            masses = threshold_log_masses(sample, spec, state.xi, state.sigma)
        threshold_prior = masses.at(state.k)
    return PosteriorTerms(
        log_likelihood=log_likelihood(sample, state),
        threshold_prior=threshold_prior,
        gpd_prior=gpd_prior,
        bulk_prior=bulk_hyper_log_prior(state.bulk, hyp),
    )


def log_posterior(
    sample: OrderedSample,
    state: ModelState,
    spec: ThresholdPriorSpec,
    hyp: HyperPriors,
    masses: ThresholdLogMasses | None = None,
) -> float:
    """
    Unnormalized joint log posterior of ``(bulk, xi, sigma, k)``.

    The threshold term is the normalized prior mass of ``k``; for the loss-based prior this includes the normalizing
    constant ``Z(xi, sigma)``, which changes whenever ``xi`` or ``sigma`` move.
    """
    if jeffreys_log_prior(state.xi, state.sigma) == -np.inf:
        return -np.inf
    return log_posterior_terms(sample, state, spec, hyp, masses).total
