"""
Command-line interface: ``gpd-threshold``.

Exit status is 0 on success, 1 on runtime errors, 2 on usage errors and 3 on data errors.
"""

from __future__ import annotations

import functools
import logging.config
from dataclasses import asdict
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
import numpy as np
import pandas as pd

from gpd_threshold import __version__
from gpd_threshold.compat import configure_celery
from gpd_threshold.config import load_config_file, merge_options, resolve
from gpd_threshold.diagnostics import effective_sample_size_by_parameter, gelman_rubin_by_parameter
from gpd_threshold.distributions import splice_sample
from gpd_threshold.exceptions import DataError, DomainError, GpdThresholdError
from gpd_threshold.experiments import (
    RecoveryConfig,
    StudyGrid,
    draw_seed,
    run_frequentist_study,
    run_recovery_study,
    select_mixture_order,
    single_sample_generator,
)
from gpd_threshold.fileio import (
    FLOAT_FORMAT,
    RunReport,
    SeriesFile,
    check_expected_rows,
    nasdaq_increments,
    read_prices,
    read_series,
    write_chain,
    write_document,
    write_report,
    write_series,
)
from gpd_threshold.priors import HyperPriors, ThresholdPriorKind, ThresholdPriorSpec, prior_mass_curve
from gpd_threshold.sampler import ChainConfig, run_chains, summarize_chains
from gpd_threshold.settings import logging_settings
from gpd_threshold.tasks import app

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Callable

    from gpd_threshold.sampler import PosteriorSamples

log = logging.getLogger(__name__)

PRIOR_CHOICES = click.Choice([kind.value for kind in ThresholdPriorKind])


class DataProblem(click.ClickException):
    """Input data could not be used."""

    exit_code = 3


def handle_errors(func: Callable) -> Callable:
    """Translate library exceptions into click exceptions carrying the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except DataError as exc:
            raise DataProblem(str(exc)) from exc
        except DomainError as exc:
            raise click.UsageError(str(exc)) from exc
        except (GpdThresholdError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def data_options(func: Callable) -> Callable:
    """Options selecting a numeric column of a delimited file."""
    decorators = [
        click.option('--data', required=True, type=click.Path(dir_okay=False), help='Delimited text file to read.'),
        click.option('--column', default='0', show_default=True, help='Zero-based column position or header name.'),
        click.option('--delimiter', default=',', show_default=True, help='Field delimiter.'),
        click.option('--header/--no-header', default=False, show_default=True, help='The first line names columns.'),
        click.option(
            '--dataset',
            type=click.Choice(['danish', 'nasdaq']),
            help='Known dataset name; warns when the row count differs from the documented one.',
        ),
    ]
    for decorator in reversed(decorators):
        func = decorator(func)
    return func


def _series_file(data: str, column: str, delimiter: str, header: bool) -> SeriesFile:  # noqa: FBT001
    return SeriesFile(data, int(column) if column.isdigit() else column, delimiter, header)


def _seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    seed = draw_seed()
    click.echo(f'Seed: {seed}', err=True)
    return seed


def _use_broker(config: dict[str, Any], broker: str | None):
    configure_celery(app, merge_options(config.get('celery', {}), {'broker_url': broker}))


def broker_option(func: Callable) -> Callable:
    """Option pointing the Celery app at a broker."""
    return click.option('--broker', help='Celery broker URL; tasks run in-process when omitted.')(func)


@click.group()
@click.version_option(__version__, prog_name='gpd-threshold')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='JSON configuration file.')
@click.option('--verbose', is_flag=True, help='Log debugging details.')
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: bool):  # noqa: FBT001
    """Bayesian threshold estimation for spliced gamma-mixture and generalized Pareto models."""
    logging.config.dictConfig(logging_settings(verbose))
    try:
        ctx.obj = load_config_file(config_path)
    except DomainError as exc:
        raise click.UsageError(str(exc)) from exc


def _pooled_acceptance(chains: list[PosteriorSamples]) -> dict[str, float]:
    totals: dict[str, list[int]] = {}
    for chain in chains:
        for block, tally in chain.acceptance.items():
            accepted, proposed = totals.setdefault(block, [0, 0])
            totals[block] = [accepted + tally.accepted, proposed + tally.proposed]
    return {block: accepted / proposed for block, (accepted, proposed) in totals.items() if proposed}


@main.command()
@data_options
@click.option('--prior', type=PRIOR_CHOICES, help='Threshold prior.  [default: kl]')
@click.option(
    '--support',
    type=click.Choice(['default', 'bulk-bounded']),
    default='default',
    show_default=True,
    help='Threshold support: all of {2, ..., n}, or {m + 1, ..., n - 2} with m bulk parameters.',
)
@click.option('--r', 'components', type=click.IntRange(min=1), help='Number of gamma components.  [default: 2]')
@click.option('--chains', type=click.IntRange(min=1), help='Independent chains.  [default: 4]')
@click.option('--iterations', type=click.IntRange(min=1), help='Iterations per chain.  [default: 20000]')
@click.option('--burn-in', type=click.IntRange(min=0), help='Discarded iterations per chain.  [default: 10000]')
@click.option('--k-step', type=click.IntRange(min=1), help='Largest threshold index jump.  [default: 5]')
@click.option('--adapt/--no-adapt', default=None, help='Adapt step sizes during burn-in.  [default: adapt]')
@click.option('--seed', type=int, help='Master seed; drawn from system entropy and printed when omitted.')
@click.option('--report', type=click.Path(dir_okay=False), default='report.json', show_default=True,
              help='Where to write the run report.')
@click.option('--chain-out', type=click.Path(dir_okay=False),
              help='Write post-burn-in records; with several chains a _<number> suffix is added per chain.')
@broker_option
@click.pass_obj
@handle_errors
def fit(config: dict[str, Any], data: str, column: str, delimiter: str, header: bool, dataset: str | None,  # noqa: FBT001, PLR0913
        prior: str | None, support: str, components: int | None, chains: int | None, iterations: int | None,
        burn_in: int | None, k_step: int | None, adapt: bool | None, seed: int | None, report: str,  # noqa: FBT001
        chain_out: str | None, broker: str | None):
    """Fit the spliced model to one data column and write a run report."""
    _use_broker(config, broker)
    sample = read_series(_series_file(data, column, delimiter, header))
    if dataset:
        check_expected_rows(dataset, sample.n)
    chain_options = config.get('chain', {})
    chain = resolve(
        ChainConfig,
        chain_options,
        components=components,
        chains=chains,
        iterations=iterations,
        burn_in=burn_in,
        k_step=k_step,
        adapt=adapt,
        seed=_seed(merge_options(chain_options, {'seed': seed}).get('seed')),
    )
    hyp = resolve(HyperPriors, config.get('hyperpriors'))
    spec = resolve(ThresholdPriorSpec, config.get('threshold_prior'), kind=prior)
    if support == 'bulk-bounded':
        spec = ThresholdPriorSpec.bounded_support(spec.kind, sample.n, 3 * chain.components - 1)
    spec = spec.resolve(sample.n)

    posterior = run_chains(sample, spec, hyp, chain)
    summary = summarize_chains(posterior)
    factors = gelman_rubin_by_parameter(posterior) if len(posterior) > 1 else {}
    curve = None
    xi, sigma = summary['xi'].mean, summary['sigma'].mean
    if spec.kind is ThresholdPriorKind.UNIFORM or xi > 0:
        values, masses = prior_mass_curve(sample, spec, xi, sigma)
        curve = {'values': values.tolist(), 'masses': masses.tolist(), 'xi': xi, 'sigma': sigma}

    run_report = RunReport(
        config={
            'data': {'path': str(data), 'column': column, 'delimiter': delimiter, 'header': header, 'n': sample.n},
            'chain': chain.to_dict(),
            'threshold_prior': {'kind': str(spec.kind), 'support_lo': spec.support_lo, 'support_hi': spec.support_hi},
            'hyperpriors': asdict(hyp),
            'version': __version__,
        },
        summaries={name: asdict(value) for name, value in summary.parameters.items()},
        acceptance=_pooled_acceptance(posterior),
        gelman_rubin=factors,
        threshold_posterior={
            'values': summary.threshold_values.tolist(),
            'probabilities': summary.threshold_probabilities.tolist(),
        },
        prior_curve=curve,
        effective_sample_size=effective_sample_size_by_parameter(posterior),
    )
    write_report(run_report, report)
    if chain_out:
        path = Path(chain_out)
        for number, samples in enumerate(posterior, start=1):
            target = path if len(posterior) == 1 else path.with_name(f'{path.stem}_{number}{path.suffix}')
            write_chain(samples, target)

    click.echo(f'{"parameter":<10} {"mean":>12} {"median":>12} {"2.5%":>12} {"97.5%":>12}')
    for name, value in summary.parameters.items():
        click.echo(f'{name:<10} {value.mean:>12.4f} {value.median:>12.4f} {value.lower:>12.4f} {value.upper:>12.4f}')
    click.echo(f'Report written to {report}.')


@main.command()
@click.option('--replications', type=click.IntRange(min=1), help='Replications per cell.  [default: 100]')
@click.option('--iterations', type=click.IntRange(min=1), help='Iterations per chain.  [default: 20000]')
@click.option('--burn-in', type=click.IntRange(min=0), help='Discarded iterations per chain.  [default: 10000]')
@click.option('--xi', 'xi_values', type=float, multiple=True, help='True GPD shape; repeat for several values.')
@click.option('--sigma', 'sigma_values', type=float, multiple=True, help='True GPD scale; repeatable.')
@click.option('--theta', 'theta_values', type=float, multiple=True, help='True threshold; repeatable.')
@click.option('--n', 'n_values', type=click.IntRange(min=3), multiple=True, help='Sample size; repeatable.')
@click.option('--include-sigma-4/--no-include-sigma-4', default=None, help='Add sigma = 4 to the grid.')
@click.option('--seed', type=int, help='Master seed; drawn from system entropy and printed when omitted.')
@broker_option
@click.option('--out', type=click.Path(dir_okay=False), default='study.json', show_default=True,
              help='Where to write the study results.')
@click.pass_obj
@handle_errors
def study(config: dict[str, Any], replications: int | None, iterations: int | None, burn_in: int | None,  # noqa: PLR0913
          xi_values: tuple[float, ...], sigma_values: tuple[float, ...], theta_values: tuple[float, ...],
          n_values: tuple[int, ...], include_sigma_4: bool | None, seed: int | None, broker: str | None, out: str):  # noqa: FBT001
    """Repeated-sample coverage and mean squared error of the threshold under both priors."""
    _use_broker(config, broker)
    chain = resolve(ChainConfig, merge_options({'chains': 1}, config.get('chain', {})),
                    iterations=iterations, burn_in=burn_in)
    study_options = config.get('study', {})
    grid = resolve(
        StudyGrid,
        study_options,
        replications=replications,
        xi_values=xi_values or None,
        sigma_values=sigma_values or None,
        theta_values=theta_values or None,
        n_values=n_values or None,
        include_sigma_4=include_sigma_4,
        chain=chain,
        hyperpriors=resolve(HyperPriors, config.get('hyperpriors')),
        seed=_seed(merge_options(study_options, {'seed': seed}).get('seed')),
    )
    result = run_frequentist_study(grid)
    write_document({**result.to_dict(), 'config': asdict(grid)}, out)
    for cell in result.cells:
        flag = '  FLAGGED' if cell.flagged else ''
        click.echo(f'{cell.cell} {cell.prior:<8} coverage={cell.coverage:.3f} mse={cell.mse:.4g}{flag}')
    click.echo(f'Results written to {out}.')


@main.command()
@click.option('--n', type=click.IntRange(min=3), default=1000, show_default=True, help='Sample size.')
@click.option('--iterations', type=click.IntRange(min=1), help='Iterations per chain.  [default: 20000]')
@click.option('--burn-in', type=click.IntRange(min=0), help='Discarded iterations per chain.  [default: 10000]')
@click.option('--chains', type=click.IntRange(min=1), help='Independent chains per prior.  [default: 4]')
@click.option('--threshold-quantile', type=click.FloatRange(0, 1, min_open=True, max_open=True),
              help='Place the threshold at this quantile of the bulk instead of at 9.')
@click.option('--seed', type=int, help='Master seed; drawn from system entropy and printed when omitted.')
@click.option('--out', type=click.Path(dir_okay=False), default='recovery.json', show_default=True,
              help='Where to write the recovery report.')
@broker_option
@click.pass_obj
@handle_errors
def recovery(config: dict[str, Any], n: int, iterations: int | None, burn_in: int | None, chains: int | None,  # noqa: PLR0913
             threshold_quantile: float | None, seed: int | None, out: str, broker: str | None):
    """Fit one simulated two-gamma and GPD sample under both priors and check parameter recovery."""
    _use_broker(config, broker)
    chain = resolve(ChainConfig, config.get('chain'), iterations=iterations, burn_in=burn_in, chains=chains)
    study_config = RecoveryConfig(
        n=n,
        seed=_seed(seed),
        chain=chain,
        hyperpriors=resolve(HyperPriors, config.get('hyperpriors')),
        threshold_quantile=threshold_quantile,
    )
    report = run_recovery_study(study_config)
    write_document({**report.to_dict(), 'config': asdict(study_config)}, out)
    for prior, contained in report.containment.items():
        missed = [name for name, inside in contained.items() if not inside]
        click.echo(f'{prior}: true values outside the 95% interval: {", ".join(missed) or "none"}')
    click.echo(f'Report written to {out}.')


@main.command()
@data_options
@click.option('--r-max', type=click.IntRange(min=1), default=6, show_default=True,
              help='Largest number of gamma components to fit.')
@click.option('--prior', type=PRIOR_CHOICES, help='Threshold prior.  [default: kl]')
@click.option('--chains', type=click.IntRange(min=1), help='Independent chains per order.  [default: 4]')
@click.option('--iterations', type=click.IntRange(min=1), help='Iterations per chain.  [default: 20000]')
@click.option('--burn-in', type=click.IntRange(min=0), help='Discarded iterations per chain.  [default: 10000]')
@click.option('--seed', type=int, help='Master seed; drawn from system entropy and printed when omitted.')
@click.option('--out', type=click.Path(dir_okay=False), default='order.json', show_default=True,
              help='Where to write the selection.')
@broker_option
@click.pass_obj
@handle_errors
def order(config: dict[str, Any], data: str, column: str, delimiter: str, header: bool, dataset: str | None,  # noqa: FBT001, PLR0913
          r_max: int, prior: str | None, chains: int | None, iterations: int | None, burn_in: int | None,
          seed: int | None, out: str, broker: str | None):
    """Pick the number of gamma components: the largest order whose posterior mean weights stay above 0.01."""
    _use_broker(config, broker)
    sample = read_series(_series_file(data, column, delimiter, header))
    if dataset:
        check_expected_rows(dataset, sample.n)
    chain_options = config.get('chain', {})
    chain = resolve(
        ChainConfig,
        chain_options,
        chains=chains,
        iterations=iterations,
        burn_in=burn_in,
        seed=_seed(merge_options(chain_options, {'seed': seed}).get('seed')),
    )
    hyp = resolve(HyperPriors, config.get('hyperpriors'))
    spec = resolve(ThresholdPriorSpec, config.get('threshold_prior'), kind=prior)
    selection = select_mixture_order(sample, r_max, chain, spec, hyp)
    write_document(
        {
            **selection.to_dict(),
            'config': {
                'data': {'path': str(data), 'column': column, 'delimiter': delimiter, 'header': header, 'n': sample.n},
                'chain': chain.to_dict(),
                'threshold_prior': {'kind': str(spec.kind), 'support_lo': spec.support_lo,
                                    'support_hi': spec.support_hi},
                'hyperpriors': asdict(hyp),
                'r_max': r_max,
                'version': __version__,
            },
        },
        out,
    )
    for r, means in selection.weight_means.items():
        click.echo(f'r={r}: posterior mean weights {", ".join(f"{mean:.4f}" for mean in means)}')
    click.echo(f'Selected r={selection.selected}. Results written to {out}.')


@main.command('prior-curve')
@data_options
@click.option('--xi', type=float, required=True, help='GPD shape at which to evaluate the prior.')
@click.option('--sigma', type=float, required=True, help='GPD scale at which to evaluate the prior.')
@click.option('--prior', type=PRIOR_CHOICES, default='kl', show_default=True, help='Threshold prior.')
@click.option('--from-index', type=click.IntRange(min=2), help='Keep indices k >= this value and renormalize.')
@click.option('--out', type=click.Path(dir_okay=False), help='CSV file to write; standard output when omitted.')
@handle_errors
def prior_curve(data: str, column: str, delimiter: str, header: bool, dataset: str | None, xi: float,  # noqa: FBT001, PLR0913
                sigma: float, prior: str, from_index: int | None, out: str | None):
    """Prior mass of each order statistic as a threshold, as value,mass rows."""
    sample = read_series(_series_file(data, column, delimiter, header))
    if dataset:
        check_expected_rows(dataset, sample.n)
    values, masses = prior_mass_curve(sample, ThresholdPriorSpec(prior), xi, sigma, start_index=from_index)
    frame = pd.DataFrame({'value': values, 'mass': masses})
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    if out:
        Path(out).write_text(text, encoding='utf-8', newline='\n')
    else:
        click.echo(text, nl=False)


@main.command()
@click.option('--input', 'input_path', required=True, type=click.Path(dir_okay=False), help='Price file.')
@click.option('--output', required=True, type=click.Path(dir_okay=False), help='Where to write the increments.')
@click.option('--column', default='0', show_default=True, help='Zero-based column position or header name.')
@click.option('--delimiter', default=',', show_default=True, help='Field delimiter.')
@click.option('--header/--no-header', default=False, show_default=True, help='The first line names columns.')
@click.option('--drop-zeros', is_flag=True, help='Leave out zero increments, which the positive model cannot fit.')
@handle_errors
def transform(input_path: str, output: str, column: str, delimiter: str, header: bool, drop_zeros: bool):  # noqa: FBT001
    """Turn daily prices into absolute percentage increments."""
    prices = read_prices(_series_file(input_path, column, delimiter, header))
    check_expected_rows('nasdaq', prices.size)
    increments = nasdaq_increments(prices)
    if drop_zeros:
        increments = increments[increments > 0]
    write_series(increments, output)
    click.echo(f'Wrote {increments.size} increments to {output}.')


@main.command()
@click.option('--n', type=click.IntRange(min=1), default=1000, show_default=True, help='Number of draws.')
@click.option('--xi', type=float, default=0.4, show_default=True, help='GPD shape.')
@click.option('--sigma', type=float, default=2.0, show_default=True, help='GPD scale.')
@click.option('--theta', type=float, default=9.0, show_default=True, help='Threshold.')
@click.option('--seed', type=int, help='Seed; drawn from system entropy and printed when omitted.')
@click.option('--output', required=True, type=click.Path(dir_okay=False), help='Where to write the draws.')
@handle_errors
def generate(n: int, xi: float, sigma: float, theta: float, seed: int | None, output: str):
    """Draw from the two-gamma bulk spliced with a GPD tail."""
    model, _ = single_sample_generator(theta, xi, sigma)
    draws = splice_sample(n, model, np.random.default_rng(_seed(seed)))
    write_series(draws, output)
    click.echo(f'Wrote {n} draws to {output}.')

