"""
Simulation studies: single-sample parameter recovery, repeated-sample coverage and error, and mixture-order selection.

Replications of the repeated-sample study are dispatched through the Celery task
:func:`gpd_threshold.tasks.run_replication_task`. Every replication derives its seeds from the master seed and its
``(cell, replication)`` counter, so results do not depend on the order or place in which replications run.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, Any

import numpy as np

from gpd_threshold.diagnostics import gelman_rubin_by_parameter
from gpd_threshold.distributions import (
    BulkMixture,
    GpdParams,
    OrderedSample,
    SpliceModel,
    bulk_quantile,
    splice_sample,
)
from gpd_threshold.exceptions import DomainError, GpdThresholdError
from gpd_threshold.priors import HyperPriors, ThresholdPriorKind, ThresholdPriorSpec, prior_mass_curve
from gpd_threshold.sampler import ChainConfig, run_chains, summarize_chains

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Iterable

    from gpd_threshold.sampler import SummaryStats

log = logging.getLogger(__name__)

TRUE_WEIGHTS = (2.0 / 3.0, 1.0 / 3.0)
TRUE_SHAPES = (4.0, 8.0)
TRUE_RATES = (2.0, 1.0)
WEIGHT_COLLAPSE_EPSILON = 0.01
FAILURE_FLAG_FRACTION = 0.1
EXTRA_SIGMA = 4.0
PRIOR_KINDS = (ThresholdPriorKind.UNIFORM, ThresholdPriorKind.KL)


def draw_seed() -> int:
    """Draw a master seed from system entropy and log it so that the run can be repeated."""
    seed = int(np.random.SeedSequence().entropy)
    log.info('No seed given; using seed %d drawn from system entropy.', seed)
    return seed


def single_sample_generator(
    theta: float = 9.0,
    xi: float = 0.4,
    sigma: float = 2.0,
) -> tuple[SpliceModel, dict[str, float]]:
    """
    Two-gamma bulk spliced with a GPD tail, with the table of true parameter values.

    The bulk components have shapes 4 and 8 and rates 2 and 1 (means 2 and 8) with weights 2/3 and 1/3.

    :returns: The model and a mapping from parameter names (as used in chain records) to true values.
    """
    bulk = BulkMixture.from_shape_rate(TRUE_WEIGHTS, TRUE_SHAPES, TRUE_RATES)
    model = SpliceModel(bulk, GpdParams(xi, sigma, theta))
    truth = {
        **{f'alpha_{j}': float(mean) for j, mean in enumerate(bulk.means, start=1)},
        **{f'beta_{j}': float(shape) for j, shape in enumerate(bulk.shapes, start=1)},
        **{f'omega_{j}': float(weight) for j, weight in enumerate(bulk.weights, start=1)},
        'theta': float(theta),
        'xi': float(xi),
        'sigma': float(sigma),
    }
    return model, truth


def replication_seed(master_seed: int, cell_index: int, replication: int) -> np.random.SeedSequence:
    """Seed sequence of one replication, derived from the master seed and the ``(cell, replication)`` counter."""
    return np.random.SeedSequence(master_seed, spawn_key=(cell_index, replication))


def _summary_to_dict(summary: SummaryStats) -> dict[str, Any]:
    return {
        'parameters': {name: asdict(value) for name, value in summary.parameters.items()},
        'threshold_posterior': {
            'values': summary.threshold_values.tolist(),
            'probabilities': summary.threshold_probabilities.tolist(),
        },
        'draws': summary.draws,
    }


@dataclass(frozen=True)
class RecoveryConfig:
    """
    Settings of the single-sample recovery study.

    :param threshold_quantile: Place the threshold at this quantile of the bulk mixture instead of at ``theta``;
        the bulk then holds exactly this fraction of the data.
    """

    n: int = 1000
    theta: float = 9.0
    xi: float = 0.4
    sigma: float = 2.0
    seed: int | None = None
    chain: ChainConfig = field(default_factory=ChainConfig)
    hyperpriors: HyperPriors = field(default_factory=HyperPriors)
    threshold_quantile: float | None = None

    def __post_init__(self):
        """Check the quantile level of the threshold."""
        if self.threshold_quantile is not None and not 0 < self.threshold_quantile < 1:
            msg = f'The threshold quantile level must lie in (0, 1), got {self.threshold_quantile!r}.'
            raise DomainError(msg)

    @property
    def resolved_theta(self) -> float:
        """The threshold: ``theta``, or the bulk quantile at ``threshold_quantile`` when that is set."""
        if self.threshold_quantile is None:
            return self.theta
        bulk = BulkMixture.from_shape_rate(TRUE_WEIGHTS, TRUE_SHAPES, TRUE_RATES)
        return bulk_quantile(self.threshold_quantile, bulk)


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    """Per-prior posterior summaries, convergence factors and credible-interval containment on one shared dataset."""

    truth: dict[str, float]
    seed: int
    summaries: dict[str, SummaryStats]
    gelman_rubin: dict[str, dict[str, float]]
    prior_curve: tuple[np.ndarray, np.ndarray]

    @property
    def containment(self) -> dict[str, dict[str, bool]]:
        """Whether each true value lies inside its 95 % credible interval, per prior."""
        return {
            prior: {name: summary[name].contains(value) for name, value in self.truth.items()}
            for prior, summary in self.summaries.items()
        }

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation."""
        values, masses = self.prior_curve
        return {
            'schema_version': 1,
            'truth': self.truth,
            'seed': self.seed,
            'summaries': {prior: _summary_to_dict(summary) for prior, summary in self.summaries.items()},
            'gelman_rubin': self.gelman_rubin,
            'containment': self.containment,
            'prior_curve': {'values': values.tolist(), 'masses': masses.tolist()},
        }


def run_recovery_study(config: RecoveryConfig) -> RecoveryReport:
    """
    Fit one simulated dataset under both threshold priors.

    Both priors see the same data; each prior gets its own chain seeds. The loss-based prior mass curve is evaluated
    at the true ``(xi, sigma)``.
    """
    seed = draw_seed() if config.seed is None else config.seed
    data_seed, *chain_seeds = np.random.SeedSequence(seed).spawn(1 + len(PRIOR_KINDS))
    model, truth = single_sample_generator(config.resolved_theta, config.xi, config.sigma)
    sample = OrderedSample(splice_sample(config.n, model, np.random.default_rng(data_seed)))

    summaries, factors = {}, {}
    for kind, chain_seed in zip(PRIOR_KINDS, chain_seeds, strict=True):
        log.info('Recovery study: fitting %d observations under the %s threshold prior.', sample.n, kind)
        spec = ThresholdPriorSpec(kind)
        chains = run_chains(sample, spec, config.hyperpriors, config.chain, seed_sequence=chain_seed)
        summaries[str(kind)] = summarize_chains(chains)
        factors[str(kind)] = gelman_rubin_by_parameter(chains) if len(chains) > 1 else {}

    curve = prior_mass_curve(sample, ThresholdPriorSpec(ThresholdPriorKind.KL), config.xi, config.sigma)
    return RecoveryReport(truth, seed, summaries, factors, curve)


@dataclass(frozen=True)
class StudyCell:
    """One combination of sample size and true tail parameters."""

    n: int
    theta: float
    sigma: float
    xi: float


@dataclass(frozen=True)
class StudyGrid:
    """
    Grid of the repeated-sample study.

    :param include_sigma_4: Add ``sigma = 4`` to the scale values.
    :param seed: Master seed; drawn from system entropy when omitted.
    """

    xi_values: tuple[float, ...] = (0.4, 0.8, 1.0, 2.0, 3.0, 4.0)
    sigma_values: tuple[float, ...] = (2.0,)
    theta_values: tuple[float, ...] = (7.0, 9.0)
    n_values: tuple[int, ...] = (1000, 5000)
    replications: int = 100
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(chains=1))
    hyperpriors: HyperPriors = field(default_factory=HyperPriors)
    seed: int | None = None
    include_sigma_4: bool = False

    def __post_init__(self):
        """Coerce sequences and nested mappings, then check that the grid is not empty."""
        for name in ('xi_values', 'sigma_values', 'theta_values', 'n_values'):
            values = tuple(getattr(self, name))
            if not values:
                msg = f'The study grid needs at least one value in {name}.'
                raise DomainError(msg)
            object.__setattr__(self, name, values)
        if isinstance(self.chain, dict):
            object.__setattr__(self, 'chain', ChainConfig(**self.chain))
        if isinstance(self.hyperpriors, dict):
            object.__setattr__(self, 'hyperpriors', HyperPriors(**self.hyperpriors))
        if self.replications < 1:
            msg = f'At least one replication per cell is required, got {self.replications}.'
            raise DomainError(msg)

    @property
    def cells(self) -> list[StudyCell]:
        """Grid cells in a fixed order; the position of a cell is its index in seed derivation."""
        sigmas = tuple(dict.fromkeys((*self.sigma_values, *((EXTRA_SIGMA,) if self.include_sigma_4 else ()))))
        return [
            StudyCell(n, theta, sigma, xi)
            for n, theta, sigma, xi in itertools.product(self.n_values, self.theta_values, sigmas, self.xi_values)
        ]


@dataclass(frozen=True)
class CellResult:
    """Coverage and error of the posterior threshold for one cell and one prior."""

    cell: StudyCell
    prior: str
    coverage: float
    mse: float
    replications: int
    failures: int

    @property
    def flagged(self) -> bool:
        """More than a tenth of the replications failed."""
        return self.failures > FAILURE_FLAG_FRACTION * self.replications


@dataclass(frozen=True)
class FrequentistResult:
    """Results of the repeated-sample study, one entry per cell and prior."""

    seed: int
    cells: list[CellResult]

    def lookup(self, cell: StudyCell, prior: str) -> CellResult:
        """The result of one cell under one prior."""
        for result in self.cells:
            if result.cell == cell and result.prior == prior:
                return result
        msg = f'No result for {cell} under the {prior} prior.'
        raise KeyError(msg)

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation."""
        return {
            'schema_version': 1,
            'seed': self.seed,
            'cells': [{**asdict(result), 'flagged': result.flagged} for result in self.cells],
        }


def _failed(error: str) -> dict[str, Any]:
    return {'failed': True, 'error': error}


def run_replication(payload: dict[str, Any]) -> dict[str, Any]:
    """
    Generate one dataset and fit it under both threshold priors.

    :param payload: Mapping with ``cell_index``, ``replication``, ``master_seed``, ``cell`` (keys of
        :class:`StudyCell`), ``chain`` (keys of :class:`ChainConfig`) and ``hyperpriors``.
    :returns: A record with the posterior mean and credible interval of the threshold per prior. Library errors are
        recorded in the record instead of being raised.
    """
    cell = StudyCell(**payload['cell'])
    chain = ChainConfig(**payload['chain'])
    hyp = HyperPriors(**payload['hyperpriors'])
    data_seed, *chain_seeds = replication_seed(
        payload['master_seed'],
        payload['cell_index'],
        payload['replication'],
    ).spawn(1 + len(PRIOR_KINDS))
    record = {'cell_index': payload['cell_index'], 'replication': payload['replication'], 'priors': {}}

    try:
        model, _ = single_sample_generator(cell.theta, cell.xi, cell.sigma)
        sample = OrderedSample(splice_sample(cell.n, model, np.random.default_rng(data_seed)))
    except GpdThresholdError as exc:
        log.exception('Replication %s of cell %s could not generate data.', record['replication'], cell)
        record['priors'] = {str(kind): _failed(str(exc)) for kind in PRIOR_KINDS}
        return record

    # Replications are tasks already; their chains run in process.
    for kind, chain_seed in zip(PRIOR_KINDS, chain_seeds, strict=True):
        try:
            chains = run_chains(sample, ThresholdPriorSpec(kind), hyp, chain, seed_sequence=chain_seed, dispatch=False)
            theta = summarize_chains(chains)['theta']
        except (GpdThresholdError, FloatingPointError) as exc:
            log.exception('Replication %s of cell %s failed under the %s prior.', record['replication'], cell, kind)
            record['priors'][str(kind)] = _failed(str(exc))
            continue
        record['priors'][str(kind)] = {
            'failed': False,
            'mean': theta.mean,
            'lower': theta.lower,
            'upper': theta.upper,
            'contains': theta.contains(cell.theta),
        }
    return record


def aggregate_replications(records: Iterable[dict[str, Any]], grid: StudyGrid, seed: int) -> FrequentistResult:
    """
    Aggregate replication records into per-cell coverage and mean squared error.

    Records are sorted by replication before summing, so the result does not depend on the order of ``records``.
    """
    grouped: dict[tuple[int, str], list[tuple[int, dict]]] = defaultdict(list)
    for record in records:
        for prior, outcome in record['priors'].items():
            grouped[record['cell_index'], prior].append((record['replication'], outcome))

    results = []
    for cell_index, cell in enumerate(grid.cells):
        for kind in PRIOR_KINDS:
            outcomes = [outcome for _, outcome in sorted(grouped[cell_index, str(kind)], key=lambda item: item[0])]
            succeeded = [outcome for outcome in outcomes if not outcome['failed']]
            if succeeded:
                coverage = float(np.mean([outcome['contains'] for outcome in succeeded]))
                mse = float(np.mean([(outcome['mean'] - cell.theta) ** 2 for outcome in succeeded]))
            else:
                coverage = mse = float('nan')
            result = CellResult(cell, str(kind), coverage, mse, len(outcomes), len(outcomes) - len(succeeded))
            if result.flagged:
                log.warning('Cell %s under the %s prior: %d of %d replications failed.', cell, kind,
                            result.failures, result.replications)
            results.append(result)
    return FrequentistResult(seed, results)


def run_frequentist_study(grid: StudyGrid) -> FrequentistResult:
    """
    Replicate generate, fit and summarize over every cell of the grid, under both priors.

    Each replication is a Celery task; with no broker configured they run eagerly in this process.
    """
    from gpd_threshold.tasks import run_replication_task  # Avoid circular imports.

    seed = draw_seed() if grid.seed is None else grid.seed
    chain = grid.chain.to_dict()
    hyperpriors = asdict(grid.hyperpriors)
    pending = []
    for cell_index, cell in enumerate(grid.cells):
        log.info('Dispatching %d replications of cell %s.', grid.replications, cell)
        for replication in range(grid.replications):
            payload = {
                'cell_index': cell_index,
                'replication': replication,
                'master_seed': seed,
                'cell': asdict(cell),
                'chain': chain,
                'hyperpriors': hyperpriors,
            }
            pending.append((cell_index, replication, run_replication_task.delay(payload)))

    records = []
    for cell_index, replication, result in pending:
        value = result.get(propagate=False)
        if result.failed() or not isinstance(value, dict):
            log.error('Replication %d of cell %d raised %r.', replication, cell_index, value)
            value = {
                'cell_index': cell_index,
                'replication': replication,
                'priors': {str(kind): _failed(repr(value)) for kind in PRIOR_KINDS},
            }
        records.append(value)
    return aggregate_replications(records, grid, seed)


@dataclass(frozen=True)
class OrderSelection:
    """Selected number of mixture components with the posterior mean weights of every fitted order."""

    selected: int
    weight_means: dict[int, list[float]]
    seed: int

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation."""
        return {
            'schema_version': 1,
            'selected': self.selected,
            'seed': self.seed,
            'weight_means': {str(r): means for r, means in self.weight_means.items()},
        }


def select_mixture_order(
    sample: OrderedSample,
    r_max: int,
    config: ChainConfig,
    spec: ThresholdPriorSpec | None = None,
    hyp: HyperPriors | None = None,
) -> OrderSelection:
    """
    Fit mixtures with ``1, ..., r_max`` components and keep the largest order whose weights do not collapse.

    A weight collapses when its posterior mean falls below ``WEIGHT_COLLAPSE_EPSILON``. Every order gets its own
    child of the master seed ``config.seed``, which is drawn from system entropy when omitted.

    :raises DomainError: If ``r_max`` is smaller than 1.
    """
    if r_max < 1:
        msg = f'r_max must be at least 1, got {r_max}.'
        raise DomainError(msg)
    spec = spec or ThresholdPriorSpec()
    hyp = hyp or HyperPriors()
    seed = draw_seed() if config.seed is None else config.seed
    order_seeds = np.random.SeedSequence(seed).spawn(r_max)
    weight_means = {}
    for r, order_seed in zip(range(1, r_max + 1), order_seeds, strict=True):
        fitted = replace(config, components=r, seed=seed)
        summary = summarize_chains(run_chains(sample, spec, hyp, fitted, seed_sequence=order_seed))
        weight_means[r] = [summary[f'omega_{j}'].mean for j in range(1, r + 1)]
        log.info('Posterior mean weights with %d components: %s', r, weight_means[r])
    selected = max(r for r, means in weight_means.items() if min(means) >= WEIGHT_COLLAPSE_EPSILON)
    return OrderSelection(selected, weight_means, seed)
