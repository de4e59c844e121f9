"""
Metropolis-within-Gibbs sampler over the bulk mixture, the GPD parameters and the threshold index.

Each iteration updates three blocks in a fixed order: the bulk mixture (means, shapes and weights, one coordinate at
a time), the GPD pair ``(xi, log sigma)`` jointly, and finally the threshold index ``k``.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import special

from gpd_threshold.distributions import BulkMixture, OrderedSample
from gpd_threshold.exceptions import DomainError, EmptySamplesError, GpdThresholdError, InitializationError
from gpd_threshold.inference import ModelState, log_posterior
from gpd_threshold.priors import (
    HyperPriors,
    ThresholdPriorKind,
    ThresholdPriorSpec,
    bulk_log_prior_from_arrays,
    threshold_log_masses,
)

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike, NDArray

    from gpd_threshold.priors import ThresholdLogMasses

log = logging.getLogger(__name__)

INITIAL_QUANTILE = 0.9
INITIAL_XI = 0.1
INITIAL_SHAPE = 2.0
CREDIBLE_LEVELS = (0.025, 0.5, 0.975)
ADAPTATION_DECAY = 0.6
BLOCKS = ('threshold', 'gpd', 'mean', 'shape', 'weights')


@dataclass(frozen=True)
class StepSizes:
    """Random-walk standard deviations of every proposal block."""

    log_sigma: float = 0.1
    xi: float = 0.1
    log_mean: float = 0.1
    log_shape: float = 0.1
    weight_logit: float = 0.1

    def __post_init__(self):
        """All step sizes must be positive."""
        for name, value in vars(self).items():
            if not value > 0:
                msg = f'Step size {name} must be positive, got {value!r}.'
                raise DomainError(msg)


@dataclass(frozen=True)
class ChainConfig:
    """
    Settings of a sampler run.

    :param components: Number of gamma components ``r`` in the bulk mixture.
    :param chains: Number of independent chains started by :func:`run_chains` when no count is passed.
    """

    iterations: int = 20000
    burn_in: int = 10000
    seed: int | None = None
    step_sizes: StepSizes = field(default_factory=StepSizes)
    k_step: int = 5
    adapt: bool = True
    target_acceptance: float = 0.3
    components: int = 2
    chains: int = 4

    def __post_init__(self):
        """Validate counts and coerce a mapping of step sizes."""
        if isinstance(self.step_sizes, dict):
            object.__setattr__(self, 'step_sizes', StepSizes(**self.step_sizes))
        if not 0 <= self.burn_in < self.iterations:
            msg = f'Burn-in must be smaller than the iteration count, got {self.burn_in} of {self.iterations}.'
            raise DomainError(msg)
        if self.k_step < 1 or self.components < 1 or self.chains < 1:
            msg = 'k_step, components and chains must all be at least 1.'
            raise DomainError(msg)
        if not 0 < self.target_acceptance < 1:
            msg = f'Target acceptance must lie in (0, 1), got {self.target_acceptance!r}.'
            raise DomainError(msg)

    def to_dict(self) -> dict:
        """Plain representation used when echoing the configuration in reports."""
        return asdict(self)


@dataclass(frozen=True)
class PosteriorTarget:
    """Everything the log posterior depends on besides the state."""

    sample: OrderedSample
    spec: ThresholdPriorSpec
    hyp: HyperPriors


@dataclass(frozen=True, eq=False)
class ChainPoint:
    """Current state of a chain with its cached log posterior and threshold log masses."""

    state: ModelState
    log_posterior: float
    masses: ThresholdLogMasses


@dataclass
class AcceptanceTally:
    """Accepted and proposed counts of one proposal block."""

    accepted: int = 0
    proposed: int = 0

    def record(self, accepted: bool):  # noqa: FBT001
        self.proposed += 1
        self.accepted += int(accepted)

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float('nan')


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """
    Post-burn-in draws of one chain.

    ``draws`` maps every parameter name to its trace; ``theta`` holds the order-statistic value ``x^(k)`` of each
    record and ``k`` the index itself.
    """

    draws: dict[str, NDArray]
    acceptance: dict[str, AcceptanceTally]
    config: ChainConfig
    spec: ThresholdPriorSpec
    sample: OrderedSample = field(repr=False)

    @property
    def parameter_names(self) -> list[str]:
        return list(self.draws)

    @property
    def size(self) -> int:
        return len(self.draws['k'])

    @property
    def components(self) -> int:
        return sum(name.startswith('omega_') for name in self.draws)

    def trace(self, name: str) -> NDArray:
        """The trace of a single parameter."""
        try:
            return self.draws[name]
        except KeyError as exc:
            msg = f'Unknown parameter {name!r}; expected one of {", ".join(self.draws)}.'
            raise DomainError(msg) from exc

    @property
    def acceptance_rates(self) -> dict[str, float]:
        return {block: tally.rate for block, tally in self.acceptance.items() if tally.proposed}

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly draws and acceptance counts, the form in which chains travel back from workers."""
        return {
            'draws': {name: trace.tolist() for name, trace in self.draws.items()},
            'acceptance': {block: [tally.accepted, tally.proposed] for block, tally in self.acceptance.items()},
        }

    @classmethod
    def from_dict(
        cls,
        data: dict[str, Any],
        config: ChainConfig,
        spec: ThresholdPriorSpec,
        sample: OrderedSample,
    ) -> PosteriorSamples:
        """Rebuild a chain from :meth:`to_dict` output and the inputs it was run with."""
        draws = {name: np.asarray(trace, dtype=float) for name, trace in data['draws'].items()}
        draws['k'] = draws['k'].astype(np.int64)
        acceptance = {block: AcceptanceTally(*counts) for block, counts in data['acceptance'].items()}
        return cls(draws, acceptance, config, spec.resolve(sample.n), sample)


@dataclass(frozen=True)
class ParameterSummary:
    """Mean, median and equal-tailed 95 % credible interval of a scalar parameter."""

    mean: float
    median: float
    lower: float
    upper: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class SummaryStats:
    """
    Posterior summaries of a run.

    ``threshold_values`` and ``threshold_probabilities`` give the posterior mass over the distinct order-statistic
    values visited by the threshold.
    """

    parameters: dict[str, ParameterSummary]
    threshold_values: NDArray[np.float64]
    threshold_probabilities: NDArray[np.float64]
    draws: int

    def __getitem__(self, name: str) -> ParameterSummary:
        return self.parameters[name]


def parameter_names(r: int) -> list[str]:
    """Column order of chain records for a mixture with ``r`` components."""
    return [
        *(f'alpha_{j}' for j in range(1, r + 1)),
        *(f'beta_{j}' for j in range(1, r + 1)),
        *(f'omega_{j}' for j in range(1, r + 1)),
        'theta',
        'xi',
        'sigma',
        'k',
    ]


def _masses_for(target: PosteriorTarget, xi: float, sigma: float) -> ThresholdLogMasses | None:
    if target.spec.kind is ThresholdPriorKind.KL and not xi > 0:
        return None
    return threshold_log_masses(target.sample, target.spec, xi, sigma)


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    return bool(np.isfinite(log_ratio) and np.log(rng.random()) < log_ratio)


def index_neighbourhood(k: int, lo: int, hi: int, k_step: int) -> NDArray[np.int64]:
    """Indices within ``k_step`` of ``k``, excluding ``k`` itself, that lie in ``{lo, ..., hi}``."""
    candidates = np.arange(max(lo, k - k_step), min(hi, k + k_step) + 1)
    return candidates[candidates != k]


def metropolis_index_step(
    k: int,
    log_target: Callable[[int], float],
    support: tuple[int, int],
    k_step: int,
    rng: np.random.Generator,
    current_log_target: float | None = None,
) -> tuple[int, float, bool]:
    """
    One Metropolis-Hastings move of an integer index on ``{lo, ..., hi}``.

    The proposal is uniform on the in-support neighbours of ``k``. Near the support edges the neighbourhoods have
    different sizes, which enters the acceptance ratio as a Hastings correction.

    :returns: The new index, its log target and whether the move was accepted.
    """
    lo, hi = support
    current = log_target(k) if current_log_target is None else current_log_target
    neighbours = index_neighbourhood(k, lo, hi, k_step)
    if neighbours.size == 0:
        return k, current, False
    proposal = int(rng.choice(neighbours))
    proposed = log_target(proposal)
    reverse = index_neighbourhood(proposal, lo, hi, k_step)
    log_ratio = proposed - current + np.log(neighbours.size) - np.log(reverse.size)
    if _accept(log_ratio, rng):
        return proposal, proposed, True
    return k, current, False


def step_threshold(
    point: ChainPoint,
    target: PosteriorTarget,
    rng: np.random.Generator,
    k_step: int,
) -> tuple[ChainPoint, bool]:
    """Update the threshold index with the other parameters held fixed; the threshold masses are reused."""
    spec = target.spec

    def log_target(k: int) -> float:
        return log_posterior(target.sample, replace(point.state, k=k), spec, target.hyp, point.masses)

    k, value, accepted = metropolis_index_step(
        point.state.k,
        log_target,
        (spec.support_lo, spec.support_hi),
        k_step,
        rng,
        current_log_target=point.log_posterior,
    )
    if not accepted:
        return point, False
    return ChainPoint(replace(point.state, k=k), value, point.masses), True


def step_gpd(
    point: ChainPoint,
    target: PosteriorTarget,
    rng: np.random.Generator,
    xi_step: float,
    log_sigma_step: float,
) -> tuple[ChainPoint, bool]:
    """
    Joint random-walk update of ``(xi, log sigma)``.

    Under the loss-based threshold prior the threshold masses, including their normalizing constant, are recomputed
    for the proposal, and a non-positive ``xi`` is rejected outright.
    """
    state = point.state
    xi = state.xi + xi_step * rng.standard_normal()
    log_sigma_delta = log_sigma_step * rng.standard_normal()
    sigma = state.sigma * np.exp(log_sigma_delta)
    if target.spec.kind is ThresholdPriorKind.KL and not xi > 0:
        return point, False
    if not (xi > -0.5 and np.isfinite(sigma) and sigma > 0):  # noqa: PLR2004
        return point, False
    try:
        masses = point.masses if target.spec.kind is ThresholdPriorKind.UNIFORM else _masses_for(target, xi, sigma)
    except GpdThresholdError:
        log.debug('Rejected GPD proposal xi=%s sigma=%s with a degenerate threshold prior.', xi, sigma)
        return point, False
    proposal = replace(state, xi=float(xi), sigma=float(sigma))
    value = log_posterior(target.sample, proposal, target.spec, target.hyp, masses)
    # Random walk on log sigma.
    if _accept(value - point.log_posterior + log_sigma_delta, rng):
        return ChainPoint(proposal, value, masses), True
    return point, False


def _propose_bulk(
    point: ChainPoint,
    target: PosteriorTarget,
    rng: np.random.Generator,
    weights: NDArray[np.float64],
    means: NDArray[np.float64],
    shapes: NDArray[np.float64],
    log_jacobian: float,
) -> tuple[ChainPoint, bool]:
    if bulk_log_prior_from_arrays(weights, means, shapes, target.hyp) == -np.inf:
        return point, False
    try:
        bulk = BulkMixture.from_arrays(weights, means, shapes)
    except DomainError:
        return point, False
    proposal = replace(point.state, bulk=bulk)
    value = log_posterior(target.sample, proposal, target.spec, target.hyp, point.masses)
    if _accept(value - point.log_posterior + log_jacobian, rng):
        return ChainPoint(proposal, value, point.masses), True
    return point, False


def step_bulk(
    point: ChainPoint,
    target: PosteriorTarget,
    rng: np.random.Generator,
    mean_step: float,
    shape_step: float,
    weight_step: float,
) -> tuple[ChainPoint, dict[str, list[bool]]]:
    """
    Update the bulk mixture coordinate by coordinate.

    Means and shapes move on the log scale, one component at a time; a proposal that breaks the ordering of the means
    is rejected. The weights move jointly by a random walk on the additive log-ratio scale relative to the last
    component, with the matching Jacobian in the acceptance ratio.

    :returns: The updated point and the acceptance outcomes of every sub-move, keyed by block.
    """
    outcomes: dict[str, list[bool]] = {'mean': [], 'shape': [], 'weights': []}
    for j in range(point.state.bulk.r):
        bulk = point.state.bulk
        delta = mean_step * rng.standard_normal()
        means = bulk.means.copy()
        means[j] *= np.exp(delta)
        point, accepted = _propose_bulk(point, target, rng, bulk.weights, means, bulk.shapes, delta)
        outcomes['mean'].append(accepted)
    for j in range(point.state.bulk.r):
        bulk = point.state.bulk
        delta = shape_step * rng.standard_normal()
        shapes = bulk.shapes.copy()
        shapes[j] *= np.exp(delta)
        point, accepted = _propose_bulk(point, target, rng, bulk.weights, bulk.means, shapes, delta)
        outcomes['shape'].append(accepted)
    bulk = point.state.bulk
    if bulk.r > 1:
        ratios = np.log(bulk.weights[:-1]) - np.log(bulk.weights[-1])
        ratios = ratios + weight_step * rng.standard_normal(ratios.size)
        weights = special.softmax(np.append(ratios, 0.0))
        log_jacobian = float(np.log(weights).sum() - np.log(bulk.weights).sum())
        weights = weights / weights.sum()
        point, accepted = _propose_bulk(point, target, rng, weights, bulk.means, bulk.shapes, log_jacobian)
        outcomes['weights'].append(accepted)
    return point, outcomes


def _strictly_increasing(values: NDArray[np.float64]) -> NDArray[np.float64]:
    out = values.copy()
    for j in range(1, out.size):
        out[j] = max(out[j], out[j - 1] * 1.05)
    return out


def _state_at(sample: OrderedSample, k: int, r: int) -> ModelState:
    x = sample.order_stats
    excesses = x[k - 1 :] - x[k - 1]
    sigma = float(np.std(excesses, ddof=1)) if excesses.size > 1 else 0.0
    if not sigma > 0:
        sigma = float(excesses.mean()) if excesses.mean() > 0 else 1.0
    below = x[: k - 1]
    levels = np.arange(1, r + 1) / (r + 1)
    means = _strictly_increasing(np.quantile(below, levels, method='linear'))
    bulk = BulkMixture.from_arrays(np.full(r, 1.0 / r), means, np.full(r, INITIAL_SHAPE))
    return ModelState(bulk, INITIAL_XI, sigma, k)


def initial_state(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    r: int,
    hyp: HyperPriors | None = None,
) -> ModelState:
    """
    Deterministic starting state of a chain.

    The threshold starts at the 90 % empirical quantile index clipped to the prior support, ``xi`` at 0.1, ``sigma``
    at the standard deviation of the excesses, the means at equally spaced quantiles of the data below the threshold,
    the shapes at 2 and the weights uniform. If that point has zero posterior density, the support ends are tried.

    :raises InitializationError: If no candidate has a finite log posterior.
    """
    spec = spec.resolve(sample.n)
    hyp = hyp or HyperPriors()
    position = int(np.floor((sample.n - 1) * INITIAL_QUANTILE)) + 1
    candidates = dict.fromkeys(
        [int(np.clip(position, spec.support_lo, spec.support_hi)), spec.support_hi, spec.support_lo],
    )
    for k in candidates:
        try:
            state = _state_at(sample, k, r)
        except DomainError:
            continue
        if np.isfinite(log_posterior(sample, state, spec, hyp)):
            return state
    msg = f'No starting state with a finite log posterior among threshold indices {list(candidates)}.'
    raise InitializationError(msg)


def _record(state: ModelState, sample: OrderedSample) -> list[float]:
    bulk = state.bulk
    return [*bulk.means, *bulk.shapes, *bulk.weights, sample.order_stat(state.k), state.xi, state.sigma, state.k]


def run_chain(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    hyp: HyperPriors,
    config: ChainConfig,
    rng: np.random.Generator | None = None,
) -> PosteriorSamples:
    """
    Run one chain and keep the records after burn-in.

    The chain is fully determined by ``config.seed`` (or by ``rng`` when given). During burn-in the step sizes of
    the continuous blocks are adapted towards the target acceptance rate; they are frozen afterwards.
    """
    spec = spec.resolve(sample.n)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    target = PosteriorTarget(sample, spec, hyp)
    state = initial_state(sample, spec, config.components, hyp)
    masses = _masses_for(target, state.xi, state.sigma)
    point = ChainPoint(state, log_posterior(sample, state, spec, hyp, masses), masses)
    log.debug('Starting chain at k=%d xi=%s sigma=%s.', state.k, state.xi, state.sigma)

    steps = config.step_sizes
    log_scale = dict.fromkeys(BLOCKS, 0.0)
    tallies = {block: AcceptanceTally() for block in BLOCKS}
    records = np.empty((config.iterations - config.burn_in, 3 * config.components + 4))

    for iteration in range(config.iterations):
        scale = {block: np.exp(value) for block, value in log_scale.items()}
        point, bulk_outcomes = step_bulk(
            point,
            target,
            rng,
            steps.log_mean * scale['mean'],
            steps.log_shape * scale['shape'],
            steps.weight_logit * scale['weights'],
        )
        point, gpd_accepted = step_gpd(point, target, rng, steps.xi * scale['gpd'], steps.log_sigma * scale['gpd'])
        point, threshold_accepted = step_threshold(point, target, rng, config.k_step)

        outcomes = {**bulk_outcomes, 'gpd': [gpd_accepted], 'threshold': [threshold_accepted]}
        for block, accepted in outcomes.items():
            for outcome in accepted:
                tallies[block].record(outcome)
            if config.adapt and iteration < config.burn_in and block != 'threshold' and accepted:
                rate = np.mean(accepted)
                log_scale[block] += (rate - config.target_acceptance) / (iteration + 1) ** ADAPTATION_DECAY
        if iteration == config.burn_in - 1:
            log.debug('Burn-in finished; step scales frozen at %s.', scale)
        if iteration >= config.burn_in:
            records[iteration - config.burn_in] = _record(point.state, sample)

    draws = {name: records[:, column] for column, name in enumerate(parameter_names(config.components))}
    draws['k'] = draws['k'].astype(np.int64)
    samples = PosteriorSamples(draws, tallies, config, spec, sample)
    log.info(
        'Chain finished: %d records, acceptance %s.',
        samples.size,
        {block: round(rate, 3) for block, rate in samples.acceptance_rates.items()},
    )
    return samples


def _chain_payload(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    hyp: HyperPriors,
    config: ChainConfig,
    seed: np.random.SeedSequence,
) -> dict[str, Any]:
    return {
        'sample': sample.values.tolist(),
        'spec': {'kind': str(spec.kind), 'support_lo': spec.support_lo, 'support_hi': spec.support_hi},
        'hyperpriors': asdict(hyp),
        'chain': config.to_dict(),
        'entropy': seed.entropy,
        'spawn_key': list(seed.spawn_key),
    }


def run_chain_from_payload(payload: dict[str, Any]) -> dict[str, Any]:
    """
    Run one chain described by a JSON-friendly payload and return :meth:`PosteriorSamples.to_dict` output.

    The random stream is rebuilt from the payload's ``entropy`` and ``spawn_key``, so the chain is identical to the
    one :func:`run_chains` would run in process.
    """
    seed = np.random.SeedSequence(payload['entropy'], spawn_key=tuple(payload['spawn_key']))
    samples = run_chain(
        OrderedSample(payload['sample']),
        ThresholdPriorSpec(**payload['spec']),
        HyperPriors(**payload['hyperpriors']),
        ChainConfig(**payload['chain']),
        rng=np.random.default_rng(seed),
    )
    return samples.to_dict()


def run_chains(
    sample: OrderedSample,
    spec: ThresholdPriorSpec,
    hyp: HyperPriors,
    config: ChainConfig,
    n_chains: int | None = None,
    seed_sequence: np.random.SeedSequence | None = None,
    *,
    dispatch: bool = True,
) -> list[PosteriorSamples]:
    """
    Run independent chains with child seeds spawned from ``config.seed`` (or from ``seed_sequence``).

    Each chain is a Celery task, so with a broker configured the chains run on separate workers; without one they
    run eagerly in this process. Callers that already run inside a task pass ``dispatch=False`` to run the chains
    in process instead of waiting on subtasks.

    :param n_chains: Number of chains; defaults to ``config.chains``.
    """
    from gpd_threshold.tasks import run_chain_task  # Avoid circular imports.

    n_chains = config.chains if n_chains is None else n_chains
    if seed_sequence is None:
        seed_sequence = np.random.SeedSequence(config.seed)
    children = seed_sequence.spawn(n_chains)
    if not dispatch:
        return [run_chain(sample, spec, hyp, config, rng=np.random.default_rng(child)) for child in children]

    log.info('Dispatching %d chains on %d observations.', n_chains, sample.n)
    pending = [run_chain_task.delay(_chain_payload(sample, spec, hyp, config, child)) for child in children]
    return [PosteriorSamples.from_dict(result.get(), config, spec, sample) for result in pending]


def summarize_trace(trace: ArrayLike) -> ParameterSummary:
    """Mean, median and 95 % equal-tailed interval with linearly interpolated empirical quantiles."""
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0:
        msg = 'Cannot summarize an empty trace.'
        raise EmptySamplesError(msg)
    lower, median, upper = np.quantile(trace, CREDIBLE_LEVELS, method='linear')
    return ParameterSummary(float(trace.mean()), float(median), float(lower), float(upper))


def _summarize_draws(draws: dict[str, NDArray], sample: OrderedSample) -> SummaryStats:
    if len(draws['k']) == 0:
        msg = 'The chain holds no post-burn-in records.'
        raise EmptySamplesError(msg)
    parameters = {name: summarize_trace(trace) for name, trace in draws.items() if name != 'k'}
    indices, counts = np.unique(draws['k'], return_counts=True)
    values = sample.order_stats[indices - 1]
    distinct, positions = np.unique(values, return_inverse=True)
    probabilities = np.bincount(positions, weights=counts) / counts.sum()
    return SummaryStats(parameters, distinct, probabilities, len(draws['k']))


def summarize(samples: PosteriorSamples) -> SummaryStats:
    """
    Posterior summaries of one chain.

    The threshold is summarized on the order-statistic values ``x^(k)`` rather than on the index.

    :raises EmptySamplesError: If the chain has no records.
    """
    return _summarize_draws(samples.draws, samples.sample)


def summarize_chains(chains: Sequence[PosteriorSamples]) -> SummaryStats:
    """Summaries over the pooled records of several chains run on the same sample."""
    if not chains:
        msg = 'No chains to summarize.'
        raise EmptySamplesError(msg)
    pooled = {name: np.concatenate([chain.draws[name] for chain in chains]) for name in chains[0].parameter_names}
    return _summarize_draws(pooled, chains[0].sample)
