"""Factories for creating test data."""

import factory
import numpy as np

from gpd_threshold.distributions import BulkMixture, GammaComponent, GpdParams, OrderedSample, SpliceModel
from gpd_threshold.inference import ModelState
from gpd_threshold.priors import HyperPriors, ThresholdPriorKind, ThresholdPriorSpec
from gpd_threshold.sampler import ChainConfig


class GpdParamsFactory(factory.Factory):
    """A Factory for GPD parameters."""

    class Meta:  # noqa: D106
        model = GpdParams

    xi = 0.4
    sigma = 2.0
    threshold = 9.0


class GammaComponentFactory(factory.Factory):
    """A Factory for mean-shape gamma components with increasing means."""

    class Meta:  # noqa: D106
        model = GammaComponent

    mean = factory.Sequence(lambda n: 2.0 + 6.0 * n)
    shape = 4.0


class BulkMixtureFactory(factory.Factory):
    """A Factory for the two-component bulk used by the simulation studies."""

    class Meta:  # noqa: D106
        model = BulkMixture

    weights = factory.LazyFunction(lambda: np.array([2.0 / 3.0, 1.0 / 3.0]))
    components = factory.LazyFunction(lambda: (GammaComponent(2.0, 4.0), GammaComponent(8.0, 8.0)))


class SpliceModelFactory(factory.Factory):
    """A Factory for spliced models."""

    class Meta:  # noqa: D106
        model = SpliceModel

    bulk = factory.SubFactory(BulkMixtureFactory)
    gpd = factory.SubFactory(GpdParamsFactory)


class OrderedSampleFactory(factory.Factory):
    """A Factory for samples drawn from the default spliced model."""

    class Meta:  # noqa: D106
        model = OrderedSample

    class Params:
        n = 200
        seed = 1

    values = factory.LazyAttribute(
        lambda o: np.random.default_rng(o.seed).gamma(4.0, 1.0, size=o.n),
    )


class ThresholdPriorSpecFactory(factory.Factory):
    """A Factory for threshold prior selectors."""

    class Meta:  # noqa: D106
        model = ThresholdPriorSpec

    kind = ThresholdPriorKind.KL
    support_lo = 2
    support_hi = None


class HyperPriorsFactory(factory.Factory):
    """A Factory for bulk hyperpriors."""

    class Meta:  # noqa: D106
        model = HyperPriors


class ModelStateFactory(factory.Factory):
    """A Factory for full parameter states."""

    class Meta:  # noqa: D106
        model = ModelState

    bulk = factory.SubFactory(BulkMixtureFactory)
    xi = 0.4
    sigma = 2.0
    k = 180


class ChainConfigFactory(factory.Factory):
    """A Factory for short sampler runs."""

    class Meta:  # noqa: D106
        model = ChainConfig

    iterations = 300
    burn_in = 100
    seed = 20240601
    chains = 2
