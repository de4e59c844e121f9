"""
Density, distribution, quantile and sampling primitives of the spliced model.

The bulk of the data is a finite mixture of gamma densities written in the mean-shape parametrisation, the tail above
the threshold is a generalised Pareto distribution (GPD). Every function accepts scalars or array-likes for ``x`` and
returns values of the same shape. Densities return ``-inf`` outside their support instead of raising, so that
Metropolis-Hastings ratios degrade gracefully.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import optimize, special

from gpd_threshold.exceptions import DomainError

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike, NDArray

XI_ZERO_TOLERANCE = 1e-10
WEIGHT_SUM_TOLERANCE = 1e-12
MIN_SAMPLE_SIZE = 3


def _frozen_array(values: ArrayLike) -> NDArray[np.float64]:
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


def _require_positive(x: NDArray[np.float64], what: str):
    if np.any(~(x > 0)):
        msg = f'{what} is defined for positive x only.'
        raise DomainError(msg)


@dataclass(frozen=True)
class GpdParams:
    """Shape, scale and threshold of a generalised Pareto distribution."""

    xi: float
    sigma: float
    threshold: float

    def __post_init__(self):
        """Reject non-positive scales and thresholds."""
        if not (np.isfinite(self.xi) and self.sigma > 0 and np.isfinite(self.sigma)):
            msg = f'Invalid GPD parameters: xi={self.xi!r}, sigma={self.sigma!r}.'
            raise DomainError(msg)
        if not (self.threshold > 0 and np.isfinite(self.threshold)):
            msg = f'The GPD threshold must be positive, got {self.threshold!r}.'
            raise DomainError(msg)

    @property
    def is_exponential(self) -> bool:
        """Whether the shape is close enough to zero to use the exponential limit."""
        return abs(self.xi) < XI_ZERO_TOLERANCE

    @property
    def upper_endpoint(self) -> float:
        """Right end of the support; finite for negative shapes only."""
        if self.xi < 0 and not self.is_exponential:
            return self.threshold - self.sigma / self.xi
        return np.inf


@dataclass(frozen=True)
class GammaComponent:
    """A gamma density parametrised by its mean and shape."""

    mean: float
    shape: float

    def __post_init__(self):
        """Reject non-positive parameters."""
        if not (self.mean > 0 and self.shape > 0 and np.isfinite(self.mean) and np.isfinite(self.shape)):
            msg = f'Gamma mean and shape must be positive, got mean={self.mean!r}, shape={self.shape!r}.'
            raise DomainError(msg)

    @property
    def rate(self) -> float:
        """Rate of the equivalent shape-rate parametrisation."""
        return self.shape / self.mean


@dataclass(frozen=True, eq=False)
class BulkMixture:
    """
    Finite mixture of mean-shape gamma densities.

    The component means must be strictly increasing; this is the identifiability constraint of the model and it is
    enforced at construction, never repaired by reordering.
    """

    weights: NDArray[np.float64]
    components: tuple[GammaComponent, ...]
    means: NDArray[np.float64] = field(init=False, repr=False)
    shapes: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        """Validate the simplex weights and the ordering of the means."""
        weights = _frozen_array(self.weights)
        components = tuple(self.components)
        if not components:
            msg = 'A bulk mixture needs at least one component.'
            raise DomainError(msg)
        if weights.shape != (len(components),):
            msg = f'Expected {len(components)} weights, got {weights.shape}.'
            raise DomainError(msg)
        if np.any(~(weights > 0)) or abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            msg = f'Mixture weights must be positive and sum to one, got {weights.tolist()}.'
            raise DomainError(msg)
        means = _frozen_array([component.mean for component in components])
        if np.any(np.diff(means) <= 0):
            msg = f'Component means must be strictly increasing, got {means.tolist()}.'
            raise DomainError(msg)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'components', components)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'shapes', _frozen_array([component.shape for component in components]))

    @classmethod
    def from_arrays(cls, weights: ArrayLike, means: ArrayLike, shapes: ArrayLike) -> BulkMixture:
        """Build a mixture from parallel arrays of weights, means and shapes."""
        components = tuple(GammaComponent(float(a), float(b)) for a, b in zip(means, shapes, strict=True))
        return cls(np.asarray(weights, dtype=float), components)

    @classmethod
    def from_shape_rate(cls, weights: ArrayLike, shapes: ArrayLike, rates: ArrayLike) -> BulkMixture:
        """Build a mixture from the usual shape-rate parametrisation (mean = shape / rate)."""
        shapes = np.asarray(shapes, dtype=float)
        return cls.from_arrays(weights, shapes / np.asarray(rates, dtype=float), shapes)

    @property
    def r(self) -> int:
        """Number of mixture components."""
        return len(self.components)

    @property
    def rates(self) -> NDArray[np.float64]:
        """Component rates of the shape-rate parametrisation."""
        return self.shapes / self.means


@dataclass(frozen=True)
class SpliceModel:
    """Gamma-mixture bulk below the threshold, GPD above it."""

    bulk: BulkMixture
    gpd: GpdParams

    def __post_init__(self):
        """Require a bulk mass strictly between zero and one at the threshold."""
        if not (bulk_cdf(self.gpd.threshold, self.bulk) > 0 and np.isfinite(self.log_tail_mass)):
            msg = f'The bulk mass at the threshold {self.gpd.threshold!r} must lie in (0, 1).'
            raise DomainError(msg)

    @property
    def bulk_mass(self) -> float:
        """Probability of an observation below the threshold, ``H(theta)``."""
        return float(bulk_cdf(self.gpd.threshold, self.bulk))

    @property
    def log_tail_mass(self) -> float:
        """Log-probability of an observation at or above the threshold, ``log(1 - H(theta))``."""
        return float(bulk_log_survival(self.gpd.threshold, self.bulk))


@dataclass(frozen=True, eq=False)
class OrderedSample:
    """A positive sample kept in its raw order together with its order statistics."""

    values: NDArray[np.float64]
    order_stats: NDArray[np.float64] = field(init=False)

    def __post_init__(self):
        """Validate the observations and sort them."""
        values = _frozen_array(np.ravel(self.values))
        if values.size < MIN_SAMPLE_SIZE:
            msg = f'At least {MIN_SAMPLE_SIZE} observations are needed, got {values.size}.'
            raise DomainError(msg)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            msg = 'The sample must contain finite positive values only.'
            raise DomainError(msg)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'order_stats', _frozen_array(np.sort(values, kind='stable')))

    @property
    def n(self) -> int:
        """Number of observations."""
        return int(self.values.size)

    def order_stat(self, k: int) -> float:
        """Return the k-th smallest observation, ``x^(k)``, with 1-based ``k``."""
        return float(self.order_stats[k - 1])


def gpd_log_density(x: ArrayLike, p: GpdParams) -> NDArray[np.float64] | np.float64:
    """Log density of the GPD; ``-inf`` outside the support."""
    x = np.asarray(x, dtype=float)
    z = (x - p.threshold) / p.sigma
    out = np.full(x.shape, -np.inf)
    if p.is_exponential:
        inside = z >= 0
        out[inside] = -np.log(p.sigma) - z[inside]
    else:
        inside = (z >= 0) & (1.0 + p.xi * z > 0)
        log_term = np.log1p(p.xi * z[inside])
        out[inside] = -np.log(p.sigma) - log_term - log_term / p.xi
    return out[()]


def gpd_log_survival(x: ArrayLike, p: GpdParams) -> NDArray[np.float64] | np.float64:
    """Log of ``1 - G(x)``."""
    x = np.asarray(x, dtype=float)
    z = np.maximum((x - p.threshold) / p.sigma, 0.0)
    if p.is_exponential:
        return (-z)[()]
    out = np.full(x.shape, -np.inf)
    inside = 1.0 + p.xi * z > 0
    out[inside] = -np.log1p(p.xi * z[inside]) / p.xi
    return out[()]


def gpd_cdf(x: ArrayLike, p: GpdParams) -> NDArray[np.float64] | np.float64:
    """Distribution function of the GPD."""
    return (-np.expm1(gpd_log_survival(x, p)))[()]


def gpd_quantile(q: ArrayLike, p: GpdParams) -> NDArray[np.float64] | np.float64:
    """Inverse of :func:`gpd_cdf` for ``q`` in ``[0, 1)``."""
    log_survival = np.log1p(-np.asarray(q, dtype=float))
    if p.is_exponential:
        return (p.threshold - p.sigma * log_survival)[()]
    return (p.threshold + p.sigma * np.expm1(-p.xi * log_survival) / p.xi)[()]


def gpd_sample(n: int, p: GpdParams, rng: np.random.Generator) -> NDArray[np.float64]:
    """Draw ``n`` i.i.d. GPD variates by quantile inversion."""
    if n < 0:
        msg = f'Sample size must be non-negative, got {n}.'
        raise DomainError(msg)
    return np.asarray(gpd_quantile(rng.random(n), p), dtype=float)


def gamma_ms_log_density(x: ArrayLike, c: GammaComponent) -> NDArray[np.float64] | np.float64:
    """Log density of the mean-shape gamma: ``b log(b/a) - lgamma(b) + (b-1) log x - x b / a``."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The gamma density')
    a, b = c.mean, c.shape
    return (b * np.log(b / a) - special.gammaln(b) + special.xlogy(b - 1.0, x) - x * b / a)[()]


def gamma_ms_cdf(x: ArrayLike, c: GammaComponent) -> NDArray[np.float64] | np.float64:
    """Distribution function of the mean-shape gamma via the regularized lower incomplete gamma."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The gamma distribution function')
    return special.gammainc(c.shape, x * c.rate)[()]


def _component_terms(x: NDArray[np.float64], m: BulkMixture) -> NDArray[np.float64]:
    """Matrix of ``log w_j + log f_j(x)`` with one row per component."""
    a = m.means[:, np.newaxis]
    b = m.shapes[:, np.newaxis]
    x = x[np.newaxis, :]
    return (
        np.log(m.weights)[:, np.newaxis]
        + b * np.log(b / a)
        - special.gammaln(b)
        + special.xlogy(b - 1.0, x)
        - x * b / a
    )


def bulk_log_density(x: ArrayLike, m: BulkMixture) -> NDArray[np.float64] | np.float64:
    """Log density ``log sum_j w_j f_j(x)`` of the gamma mixture, stabilized by the max-shift trick."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The bulk density')
    flat = np.atleast_1d(x).ravel()
    return special.logsumexp(_component_terms(flat, m), axis=0).reshape(x.shape)[()]


def bulk_cdf(x: ArrayLike, m: BulkMixture) -> NDArray[np.float64] | np.float64:
    """Distribution function ``H(x) = sum_j w_j F_j(x)`` of the gamma mixture."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The bulk distribution function')
    flat = np.atleast_1d(x).ravel()
    probabilities = special.gammainc(m.shapes[:, np.newaxis], flat[np.newaxis, :] * m.rates[:, np.newaxis])
    return (m.weights @ probabilities).reshape(x.shape)[()]


def bulk_log_survival(x: ArrayLike, m: BulkMixture) -> NDArray[np.float64] | np.float64:
    """
    Log of ``1 - H(x)`` computed from the upper incomplete gamma.

    Summing the complementary probabilities keeps full relative precision when ``H(x)`` is close to one.
    """
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The bulk survival function')
    flat = np.atleast_1d(x).ravel()
    survival = special.gammaincc(m.shapes[:, np.newaxis], flat[np.newaxis, :] * m.rates[:, np.newaxis])
    with np.errstate(divide='ignore'):
        return np.log(m.weights @ survival).reshape(x.shape)[()]


def bulk_sample(n: int, m: BulkMixture, rng: np.random.Generator) -> NDArray[np.float64]:
    """Draw ``n`` variates from the gamma mixture (component label first, then the gamma draw)."""
    if n < 0:
        msg = f'Sample size must be non-negative, got {n}.'
        raise DomainError(msg)
    labels = rng.choice(m.r, size=n, p=m.weights)
    return rng.gamma(shape=m.shapes[labels], scale=(m.means / m.shapes)[labels])


def bulk_quantile(q: float, m: BulkMixture) -> float:
    """Numeric inverse of :func:`bulk_cdf` by bracketing root-finding."""
    if not 0 < q < 1:
        msg = f'Quantile level must lie in (0, 1), got {q!r}.'
        raise DomainError(msg)
    upper = float(m.means.max())
    while bulk_cdf(upper, m) < q:
        upper *= 2.0
    return float(optimize.brentq(lambda x: bulk_cdf(x, m) - q, np.finfo(float).tiny, upper, xtol=1e-12, rtol=1e-14))


def splice_log_density(x: ArrayLike, s: SpliceModel) -> NDArray[np.float64] | np.float64:
    """Log density of the spliced model: bulk below the threshold, rescaled GPD at and above it."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The spliced density')
    below = x < s.gpd.threshold
    out = np.empty(x.shape)
    out[below] = bulk_log_density(x[below], s.bulk)
    out[~below] = s.log_tail_mass + gpd_log_density(x[~below], s.gpd)
    return out[()]


def splice_cdf(x: ArrayLike, s: SpliceModel) -> NDArray[np.float64] | np.float64:
    """Distribution function of the whole set of observations."""
    x = np.asarray(x, dtype=float)
    _require_positive(x, 'The spliced distribution function')
    below = x < s.gpd.threshold
    out = np.empty(x.shape)
    out[below] = bulk_cdf(x[below], s.bulk)
    out[~below] = s.bulk_mass + np.exp(s.log_tail_mass) * gpd_cdf(x[~below], s.gpd)
    return out[()]


def splice_sample(n: int, s: SpliceModel, rng: np.random.Generator) -> NDArray[np.float64]:
    """
    Draw ``n`` variates from the spliced model by composition.

    A bulk draw is kept when it falls below the threshold and replaced by a GPD draw otherwise, which reproduces the
    spliced density exactly without inverting its distribution function.
    """
    draws = bulk_sample(n, s.bulk, rng)
    exceed = draws >= s.gpd.threshold
    draws[exceed] = gpd_sample(int(exceed.sum()), s.gpd, rng)
    return draws
