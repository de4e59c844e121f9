"""
Prior distributions of the spliced model.

The threshold is restricted to the observed order statistics ``x^(k)``. Two discrete priors are available over the
index ``k``: a uniform prior and a prior based on losses, which gives each order statistic a mass proportional to
``exp(D) - 1`` where ``D`` is the Kullback-Leibler divergence between the GPD with threshold ``x^(k)`` and the GPD with
threshold ``x^(k-1)``. The GPD parameters receive the Jeffreys independent prior, the bulk mixture receives
inverse-gamma priors on the means, gamma priors on the shapes and a symmetric Dirichlet prior on the weights.
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy import integrate, special

from gpd_threshold.exceptions import DegeneratePriorError, DomainError

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike, NDArray

    from gpd_threshold.distributions import BulkMixture, OrderedSample

log = logging.getLogger(__name__)

KL_TOLERANCE = 1e-10
CACHE_DIGITS = 12
# Breakpoints for the vector quadrature; the integrand changes fastest close to u = 0.
_QUADRATURE_POINTS = tuple(10.0**-exponent for exponent in range(12, 0, -1))


class ThresholdPriorKind(enum.StrEnum):
    """Available priors over the order statistics."""

    UNIFORM = 'uniform'
    KL = 'kl'


@dataclass(frozen=True)
class ThresholdPriorSpec:
    """
    Selector and support of the threshold prior.

    ``support_lo`` and ``support_hi`` are 1-based order-statistic indices. ``support_hi=None`` stands for ``n`` and is
    filled in by :meth:`resolve` once the sample size is known.
    """

    kind: ThresholdPriorKind = ThresholdPriorKind.KL
    support_lo: int = 2
    support_hi: int | None = None

    def __post_init__(self):
        """Coerce the kind and validate the bounds that do not depend on the sample size."""
        object.__setattr__(self, 'kind', ThresholdPriorKind(self.kind))
        if self.support_lo < 2:  # noqa: PLR2004
            msg = f'The threshold support must start at index 2 or later, got {self.support_lo}.'
            raise DomainError(msg)
        if self.support_hi is not None and self.support_hi < self.support_lo:
            msg = f'Empty threshold support {{{self.support_lo}, ..., {self.support_hi}}}.'
            raise DomainError(msg)

    @classmethod
    def bounded_support(cls, kind: ThresholdPriorKind | str, n: int, bulk_dimension: int) -> ThresholdPriorSpec:
        """
        Restrict the support to ``{m + 1, ..., n - 2}``, where ``m`` is the number of bulk parameters.

        This mirrors the range used by continuous uniform threshold priors, keeping enough points on both sides.
        """
        return cls(kind, max(2, bulk_dimension + 1), n - 2).resolve(n)

    def resolve(self, n: int) -> ThresholdPriorSpec:
        """Return a copy with ``support_hi`` filled in and all bounds checked against ``n``."""
        hi = n if self.support_hi is None else self.support_hi
        if hi > n:
            msg = f'The threshold support ends at {hi} but the sample has only {n} observations.'
            raise DomainError(msg)
        return replace(self, support_hi=hi)

    def indices(self, n: int) -> NDArray[np.int64]:
        """The supported threshold indices ``k`` for a sample of size ``n``."""
        resolved = self.resolve(n)
        return np.arange(resolved.support_lo, resolved.support_hi + 1)


@dataclass(frozen=True)
class HyperPriors:
    """
    Hyperparameters of the bulk mixture prior.

    Each mean receives an inverse gamma with the given shape and scale, each shape parameter a gamma with the given
    shape and rate, and the weights a symmetric Dirichlet.
    """

    mean_shape: float = 2.1
    mean_scale: float = 5.5
    shape_shape: float = 6.0
    shape_rate: float = 0.5
    weight_concentration: float = 1.0

    def __post_init__(self):
        """All hyperparameters must be positive."""
        for name, value in vars(self).items():
            if not value > 0:
                msg = f'Hyperparameter {name} must be positive, got {value!r}.'
                raise DomainError(msg)


@dataclass(frozen=True, eq=False)
class ThresholdLogMasses:
    """Normalized log prior masses over the supported indices, with the log normalizing constant."""

    indices: NDArray[np.int64]
    log_masses: NDArray[np.float64]
    log_normalizer: float

    def at(self, k: int) -> float:
        """Log mass of index ``k``; ``-inf`` outside the support."""
        position = k - int(self.indices[0])
        if 0 <= position < self.indices.size:
            return float(self.log_masses[position])
        return -np.inf


def _cache_key(value: float) -> float:
    return float(f'{value:.{CACHE_DIGITS - 1}e}')


@functools.lru_cache(maxsize=65536)
def _kl_adjacent_integral(xi: float, c: float) -> float:
    # Past u* = c^(-1/xi) the integrand leaves its logarithmic regime.
    kink = c ** (-1.0 / xi) if c > 1 else 1.0
    points = [kink] if 0 < kink < 1 else None
    integral, _ = integrate.quad(
        lambda u: np.log1p(c * u**xi),
        0.0,
        1.0,
        epsabs=KL_TOLERANCE,
        epsrel=KL_TOLERANCE,
        limit=200,
        points=points,
    )
    return (1.0 + xi) / xi * integral


def kl_adjacent_gpd(xi: float, c: float) -> float:
    """
    Kullback-Leibler divergence between GPDs whose thresholds are adjacent order statistics.

    With ``c = xi * (x^(k) - x^(k-1)) / sigma`` the divergence of the GPD at ``x^(k)`` from the GPD at ``x^(k-1)`` is
    ``((1 + xi) / xi) * (E[log(U^-xi + c)] - xi)`` for ``U`` uniform on (0, 1). Subtracting ``xi = E[log U^-xi]``
    leaves the bounded integrand ``log(1 + c u^xi)``, integrated adaptively to an absolute tolerance of 1e-10.

    :param xi: Positive GPD shape; the divergence is not defined for light tails.
    :param c: Non-negative scaled gap between the two thresholds.
    :returns: The non-negative divergence, strictly increasing in ``c``.
    :raises DomainError: If ``xi <= 0`` or ``c < 0``.
    """
    if not xi > 0:
        msg = f'The loss-based threshold prior requires xi > 0, got {xi!r}.'
        raise DomainError(msg)
    if not c >= 0:
        msg = f'The scaled threshold gap must be non-negative, got {c!r}.'
        raise DomainError(msg)
    if c == 0:
        return 0.0
    return _kl_adjacent_integral(_cache_key(xi), _cache_key(c))


@functools.lru_cache(maxsize=256)
def _kl_adjacent_integrals(xi: float, gaps: tuple[float, ...]) -> NDArray[np.float64]:
    c = np.array(gaps)
    integral, _ = integrate.quad_vec(
        lambda u: np.log1p(c * u**xi),
        0.0,
        1.0,
        epsabs=KL_TOLERANCE,
        epsrel=KL_TOLERANCE,
        norm='max',
        points=_QUADRATURE_POINTS,
    )
    result = (1.0 + xi) / xi * integral
    result.flags.writeable = False
    return result


def kl_adjacent_gpd_many(xi: float, c: ArrayLike) -> NDArray[np.float64]:
    """
    Vectorized :func:`kl_adjacent_gpd` over an array of scaled gaps.

    All distinct gaps are integrated together by one adaptive vector quadrature, memoized on the rounded inputs.
    """
    if not xi > 0:
        msg = f'The loss-based threshold prior requires xi > 0, got {xi!r}.'
        raise DomainError(msg)
    c = np.asarray(c, dtype=float)
    if np.any(~(c >= 0)):
        msg = 'Scaled threshold gaps must be non-negative.'
        raise DomainError(msg)
    out = np.zeros(c.shape)
    positive = c > 0
    if not positive.any():
        return out
    keys = np.array([_cache_key(value) for value in c[positive]])
    unique, inverse = np.unique(keys, return_inverse=True)
    out[positive] = _kl_adjacent_integrals(_cache_key(xi), tuple(unique.tolist()))[inverse]
    return out


def stable_log_expm1(k: ArrayLike) -> NDArray[np.float64] | np.float64:
    """
    Compute ``log(exp(K) - 1)`` without overflow or cancellation.

    ``-inf`` at ``K = 0``; above 30 the result is ``K + log1p(-exp(-K))``; below 1e-8 the series
    ``log K + K / 2 + K^2 / 24`` is used.
    """
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, -np.inf)
    large = k > 30  # noqa: PLR2004
    small = (k > 0) & (k < 1e-8)  # noqa: PLR2004
    middle = (k >= 1e-8) & ~large  # noqa: PLR2004
    out[large] = k[large] + np.log1p(-np.exp(-k[large]))
    out[small] = np.log(k[small]) + k[small] / 2 + k[small] ** 2 / 24
    out[middle] = np.log(np.expm1(k[middle]))
    return out[()]


def threshold_log_masses(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    xi: float,
    sigma: float,
) -> ThresholdLogMasses:
    """
    Normalized log prior masses of the threshold index ``k`` over the support of ``spec``.

    The uniform prior assigns equal mass to every supported index. The loss-based prior assigns mass proportional to
    ``expm1(D_k)``, with ``D_k`` the divergence between the GPDs at ``x^(k)`` and ``x^(k-1)``; tied order statistics
    therefore receive zero mass. Because these masses depend on ``(xi, sigma)``, the log normalizing constant is
    returned as well.

    :raises DomainError: If the loss-based prior is requested with ``xi <= 0``.
    :raises DegeneratePriorError: If every loss-based mass is zero.
    """
    indices = spec.indices(sample.n)
    if spec.kind is ThresholdPriorKind.UNIFORM:
        log_normalizer = float(np.log(indices.size))
        return ThresholdLogMasses(indices, np.full(indices.size, -log_normalizer), log_normalizer)

    gaps = sample.order_stats[indices - 1] - sample.order_stats[indices - 2]
    divergences = kl_adjacent_gpd_many(xi, xi * gaps / sigma)
    log_weights = np.atleast_1d(stable_log_expm1(divergences))
    log_normalizer = float(special.logsumexp(log_weights))
    if not np.isfinite(log_normalizer):
        msg = 'Every order statistic in the threshold support is tied with its predecessor.'
        raise DegeneratePriorError(msg)
    return ThresholdLogMasses(indices, log_weights - log_normalizer, log_normalizer)


def prior_mass_curve(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    xi: float,
    sigma: float,
    start_index: int | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Order-statistic values with their prior masses, for plotting.

    :param start_index: If given, keep only the indices ``k >= start_index`` and renormalize over them, which zooms in
        on the upper order statistics.
    :returns: A pair ``(values, masses)``.
    """
    masses = threshold_log_masses(sample, spec, xi, sigma)
    keep = masses.indices >= (start_index or 0)
    log_masses = masses.log_masses[keep]
    if start_index is not None:
        log_masses = log_masses - special.logsumexp(log_masses)
    return sample.order_stats[masses.indices[keep] - 1], np.exp(log_masses)


def jeffreys_log_prior(xi: float, sigma: float) -> float:
    """Jeffreys independent prior of the GPD, ``-log sigma - log(1 + xi) - log(1 + 2 xi) / 2``, up to a constant."""
    if not (xi > -0.5 and sigma > 0):  # noqa: PLR2004
        return -np.inf
    return float(-np.log(sigma) - np.log1p(xi) - 0.5 * np.log1p(2.0 * xi))


def inverse_gamma_log_density(x: ArrayLike, shape: float, scale: float) -> NDArray[np.float64] | np.float64:
    """Log density of the inverse gamma distribution."""
    x = np.asarray(x, dtype=float)
    return (shape * np.log(scale) - special.gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x)[()]


def gamma_log_density(x: ArrayLike, shape: float, rate: float) -> NDArray[np.float64] | np.float64:
    """Log density of the gamma distribution in the shape-rate parametrisation."""
    x = np.asarray(x, dtype=float)
    return (shape * np.log(rate) - special.gammaln(shape) + special.xlogy(shape - 1.0, x) - rate * x)[()]


def bulk_log_prior_from_arrays(
    weights: ArrayLike,
    means: ArrayLike,
    shapes: ArrayLike,
    h: HyperPriors,
) -> float:
    """
    Log prior of raw mixture parameters; ``-inf`` when the means are not strictly increasing.

    The sampler evaluates proposals with this function before a :class:`BulkMixture` is built.
    """
    weights, means, shapes = (np.asarray(values, dtype=float) for values in (weights, means, shapes))
    if np.any(means <= 0) or np.any(shapes <= 0) or np.any(weights <= 0) or np.any(np.diff(means) <= 0):
        return -np.inf
    r = weights.size
    concentration = h.weight_concentration
    dirichlet = (
        special.gammaln(r * concentration)
        - r * special.gammaln(concentration)
        + (concentration - 1.0) * np.log(weights).sum()
    )
    return float(
        inverse_gamma_log_density(means, h.mean_shape, h.mean_scale).sum()
        + gamma_log_density(shapes, h.shape_shape, h.shape_rate).sum()
        + dirichlet,
    )


def bulk_hyper_log_prior(m: BulkMixture, h: HyperPriors) -> float:
    """Log prior of the bulk mixture: inverse gamma on means, gamma on shapes, symmetric Dirichlet on weights."""
    return bulk_log_prior_from_arrays(m.weights, m.means, m.shapes, h)
