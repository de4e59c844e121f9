"""Tests for the ``gpd-threshold`` command-line interface."""

from __future__ import annotations

import json
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from gpd_threshold import __version__
from gpd_threshold.cli import main
from gpd_threshold.distributions import splice_sample
from gpd_threshold.fileio import read_chain, read_document, read_report, write_series
from test_utils.factories import SpliceModelFactory

SHORT_RUN = ['--iterations', '60', '--burn-in', '20', '--seed', '1']


@pytest.fixture(autouse=True)
def _keep_logging_configuration():
    """Invocations would otherwise point the package loggers at the runner's temporary streams."""
    with patch('logging.config.dictConfig') as mock_config:
        yield mock_config


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def data_file(tmp_path: Path) -> Path:
    """Two hundred draws from the default spliced model."""
    path = tmp_path / 'losses.csv'
    write_series(splice_sample(200, SpliceModelFactory(), np.random.default_rng(31)), path)
    return path


@pytest.mark.parametrize(
    ("command", "flags"),
    [
        (
            'fit',
            ['--data', '--column', '--delimiter', '--header', '--dataset', '--prior', '--support', '--r', '--chains',
             '--iterations', '--burn-in', '--k-step', '--adapt', '--seed', '--report', '--chain-out', '--broker'],
        ),
        (
            'study',
            ['--replications', '--iterations', '--burn-in', '--xi', '--sigma', '--theta', '--n', '--include-sigma-4',
             '--seed', '--broker', '--out'],
        ),
        (
            'recovery',
            ['--n', '--iterations', '--burn-in', '--chains', '--threshold-quantile', '--seed', '--out', '--broker'],
        ),
        (
            'order',
            ['--data', '--r-max', '--prior', '--chains', '--iterations', '--burn-in', '--seed', '--out', '--broker'],
        ),
        ('prior-curve', ['--data', '--xi', '--sigma', '--prior', '--from-index', '--out']),
        ('transform', ['--input', '--output', '--column', '--delimiter', '--header', '--drop-zeros']),
        ('generate', ['--n', '--xi', '--sigma', '--theta', '--seed', '--output']),
    ],
    ids=["fit", "study", "recovery", "order", "prior-curve", "transform", "generate"],
)
def test_help_lists_every_flag(runner: CliRunner, command: str, flags: list[str]):
    """Each subcommand documents all of its options."""
    result = runner.invoke(main, [command, '--help'])
    assert result.exit_code == 0
    for flag in flags:
        assert flag in result.output, flag


def test_version(runner: CliRunner):
    """The version option prints the package version."""
    result = runner.invoke(main, ['--version'])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_verbose_sets_debug_level(runner: CliRunner, data_file: Path, tmp_path: Path,
                                  _keep_logging_configuration):
    """``--verbose`` lowers the package log level."""
    runner.invoke(main, ['--verbose', 'generate', '--n', '5', '--seed', '1', '--output', str(tmp_path / 'x.csv')])
    settings = _keep_logging_configuration.call_args.args[0]
    assert settings['loggers']['gpd_threshold']['level'] == 'DEBUG'


def test_fit_writes_report_and_chains(runner: CliRunner, data_file: Path, tmp_path: Path):
    """A fit writes the report, one chain file per chain and a summary table."""
    report_path = tmp_path / 'report.json'
    result = runner.invoke(main, [
        'fit', '--data', str(data_file), '--prior', 'uniform', '--chains', '2', *SHORT_RUN,
        '--report', str(report_path), '--chain-out', str(tmp_path / 'chain.csv'),
    ])
    assert result.exit_code == 0, result.output
    assert 'parameter' in result.output

    report = read_report(report_path)
    assert report.config['chain']['seed'] == 1
    assert report.config['threshold_prior'] == {'kind': 'uniform', 'support_lo': 2, 'support_hi': 200}
    assert {'xi', 'sigma', 'theta', 'alpha_1', 'omega_2'} <= set(report.summaries)
    assert sum(report.threshold_posterior['probabilities']) == pytest.approx(1.0)
    assert 'theta' in report.gelman_rubin
    assert set(report.effective_sample_size) == set(report.gelman_rubin)
    assert all(size <= 2 * 40 for size in report.effective_sample_size.values() if not np.isnan(size))

    for number in (1, 2):
        traces = read_chain(tmp_path / f'chain_{number}.csv')
        assert traces['k'].size == 40


def test_fit_is_reproducible(runner: CliRunner, data_file: Path, tmp_path: Path):
    """The same seed gives byte-identical reports."""
    for name in ('first.json', 'second.json'):
        result = runner.invoke(main, [
            'fit', '--data', str(data_file), '--chains', '1', *SHORT_RUN, '--report', str(tmp_path / name),
        ])
        assert result.exit_code == 0, result.output
    assert (tmp_path / 'first.json').read_bytes() == (tmp_path / 'second.json').read_bytes()


def test_fit_bulk_bounded_support(runner: CliRunner, data_file: Path, tmp_path: Path):
    """The bulk-bounded support starts past the bulk parameters and stops two points short of the maximum."""
    report_path = tmp_path / 'report.json'
    result = runner.invoke(main, [
        'fit', '--data', str(data_file), '--support', 'bulk-bounded', '--r', '2', '--chains', '1', *SHORT_RUN,
        '--report', str(report_path),
    ])
    assert result.exit_code == 0, result.output
    prior = read_report(report_path).config['threshold_prior']
    assert (prior['support_lo'], prior['support_hi']) == (6, 198)


def test_fit_reads_configuration_file(runner: CliRunner, data_file: Path, tmp_path: Path):
    """Configuration file values apply unless a flag overrides them."""
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps({'chain': {'iterations': 50, 'burn_in': 10, 'k_step': 3, 'seed': 4}}))
    report_path = tmp_path / 'report.json'
    result = runner.invoke(main, [
        '--config', str(config_path), 'fit', '--data', str(data_file), '--chains', '1', '--burn-in', '30',
        '--report', str(report_path),
    ])
    assert result.exit_code == 0, result.output
    chain = read_report(report_path).config['chain']
    assert (chain['iterations'], chain['burn_in'], chain['k_step'], chain['seed']) == (50, 30, 3, 4)


@pytest.mark.parametrize(
    ("content", "exit_code"),
    [
        (None, 3),
        ("1\nabc\n3\n", 3),
        ("1\n-2\n3\n", 3),
        ("1\n2\n", 3),
    ],
    ids=["missing file", "unparsable value", "negative value", "too few rows"],
)
def test_fit_data_errors(runner: CliRunner, tmp_path: Path, content: str | None, exit_code: int):
    """Problems with the input data exit with status 3."""
    path = tmp_path / 'data.csv'
    if content is not None:
        path.write_text(content)
    result = runner.invoke(main, ['fit', '--data', str(path), *SHORT_RUN])
    assert result.exit_code == exit_code
    assert 'Error' in result.output


def test_fit_parse_error_names_line(runner: CliRunner, tmp_path: Path):
    """The parse error message points at the offending line."""
    path = tmp_path / 'data.csv'
    path.write_text("1\nabc\n3\n")
    result = runner.invoke(main, ['fit', '--data', str(path), *SHORT_RUN])
    assert 'data.csv:2:' in result.output
    assert 'abc' in result.output


@pytest.mark.parametrize(
    "arguments",
    [
        ['--iterations', '10', '--burn-in', '10'],
        ['--prior', 'flat'],
    ],
    ids=["burn-in not below iterations", "unknown prior"],
)
def test_fit_usage_errors(runner: CliRunner, data_file: Path, arguments: list[str]):
    """Invalid settings exit with status 2."""
    result = runner.invoke(main, ['fit', '--data', str(data_file), *arguments])
    assert result.exit_code == 2


def test_unknown_configuration_section(runner: CliRunner, data_file: Path, tmp_path: Path):
    """A configuration file with an unknown section is a usage error."""
    config_path = tmp_path / 'config.json'
    config_path.write_text('{"sampler": {}}')
    result = runner.invoke(main, ['--config', str(config_path), 'fit', '--data', str(data_file)])
    assert result.exit_code == 2
    assert 'sampler' in result.output


def test_study_writes_results(runner: CliRunner, tmp_path: Path):
    """A one-cell study runs both priors in-process and writes its results."""
    out = tmp_path / 'study.json'
    result = runner.invoke(main, [
        'study', '--replications', '1', '--iterations', '40', '--burn-in', '10', '--xi', '0.4', '--theta', '9',
        '--n', '120', '--seed', '3', '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    document = read_document(out)
    assert document['seed'] == 3
    assert [cell['prior'] for cell in document['cells']] == ['uniform', 'kl']
    assert document['config']['chain']['chains'] == 1
    assert all(cell['coverage'] in (0.0, 1.0) for cell in document['cells'])


def test_study_uses_broker(runner: CliRunner, tmp_path: Path):
    """A broker URL is handed to the Celery app before dispatching."""
    with (
        patch('gpd_threshold.cli.configure_celery') as mock_configure,
        patch('gpd_threshold.cli.run_frequentist_study') as mock_study,
    ):
        mock_study.return_value.to_dict.return_value = {}
        mock_study.return_value.cells = []
        result = runner.invoke(main, [
            'study', '--seed', '1', '--broker', 'redis://queue:6379/0', '--out', str(tmp_path / 'study.json'),
        ])
    assert result.exit_code == 0, result.output
    assert mock_configure.call_args.args[1] == {'broker_url': 'redis://queue:6379/0'}
    grid = mock_study.call_args.args[0]
    assert grid.seed == 1
    assert grid.replications == 100


def test_recovery_writes_report(runner: CliRunner, tmp_path: Path):
    """The recovery study reports containment for both priors."""
    out = tmp_path / 'recovery.json'
    result = runner.invoke(main, [
        'recovery', '--n', '150', '--iterations', '50', '--burn-in', '20', '--chains', '2', '--seed', '5',
        '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    document = read_document(out)
    assert set(document['containment']) == {'uniform', 'kl'}
    assert document['truth']['theta'] == 9.0
    assert 'uniform:' in result.output


def test_recovery_threshold_quantile(runner: CliRunner, tmp_path: Path):
    """The threshold can be placed at a quantile of the bulk; a level outside (0, 1) is a usage error."""
    out = tmp_path / 'recovery.json'
    result = runner.invoke(main, [
        'recovery', '--n', '150', '--iterations', '50', '--burn-in', '20', '--chains', '2', '--seed', '5',
        '--threshold-quantile', '0.9', '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    document = read_document(out)
    assert document['config']['threshold_quantile'] == 0.9
    assert 8.5 < document['truth']['theta'] < 9.5

    result = runner.invoke(main, ['recovery', '--threshold-quantile', '1', '--out', str(out)])
    assert result.exit_code == 2


@pytest.mark.parametrize('command', ['fit', 'recovery', 'order'])
def test_commands_use_broker(runner: CliRunner, data_file: Path, command: str):
    """Commands that run chains hand a broker URL to the Celery app."""
    arguments = {
        'fit': ['--data', str(data_file)],
        'recovery': [],
        'order': ['--data', str(data_file)],
    }[command]
    with patch('gpd_threshold.cli.configure_celery', side_effect=RuntimeError('stop')) as mock_configure:
        runner.invoke(main, [command, *arguments, '--seed', '1', '--broker', 'redis://queue:6379/0'])
    assert mock_configure.call_args.args[1] == {'broker_url': 'redis://queue:6379/0'}


def test_order_writes_selection(runner: CliRunner, data_file: Path, tmp_path: Path):
    """Order selection fits every order up to ``--r-max`` and records the seed it used."""
    out = tmp_path / 'order.json'
    result = runner.invoke(main, [
        'order', '--data', str(data_file), '--r-max', '2', '--chains', '1', *SHORT_RUN, '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    document = read_document(out)
    assert document['seed'] == 1
    assert document['config']['chain']['seed'] == 1
    assert document['config']['r_max'] == 2
    assert set(document['weight_means']) == {'1', '2'}
    assert document['weight_means']['1'] == [1.0]
    assert document['selected'] in (1, 2)
    assert f'Selected r={document["selected"]}' in result.output


def test_order_without_seed_prints_it(runner: CliRunner, data_file: Path, tmp_path: Path):
    """Without a seed one is drawn, printed and written with the selection."""
    out = tmp_path / 'order.json'
    result = runner.invoke(main, [
        'order', '--data', str(data_file), '--r-max', '1', '--chains', '1', '--iterations', '40', '--burn-in', '10',
        '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    seed = read_document(out)['seed']
    assert f'Seed: {seed}' in result.output


def test_order_rejects_zero_r_max(runner: CliRunner, data_file: Path):
    """At least one component must be fitted."""
    result = runner.invoke(main, ['order', '--data', str(data_file), '--r-max', '0'])
    assert result.exit_code == 2


def test_prior_curve_to_stdout(runner: CliRunner, data_file: Path):
    """The prior curve is printed as value,mass rows that sum to one."""
    result = runner.invoke(main, ['prior-curve', '--data', str(data_file), '--xi', '0.4', '--sigma', '2'])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(StringIO(result.output))
    assert list(frame.columns) == ['value', 'mass']
    assert len(frame) == 199
    assert frame['mass'].sum() == pytest.approx(1.0)
    assert frame['value'].is_monotonic_increasing


def test_prior_curve_zoom_to_file(runner: CliRunner, data_file: Path, tmp_path: Path):
    """Keeping the upper order statistics renormalizes the curve."""
    out = tmp_path / 'curve.csv'
    result = runner.invoke(main, [
        'prior-curve', '--data', str(data_file), '--xi', '0.4', '--sigma', '2', '--from-index', '151',
        '--out', str(out),
    ])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 50
    assert frame['mass'].sum() == pytest.approx(1.0)


def test_prior_curve_kl_needs_positive_shape(runner: CliRunner, data_file: Path):
    """The loss-based prior is undefined for a non-positive shape."""
    result = runner.invoke(main, ['prior-curve', '--data', str(data_file), '--xi', '-0.1', '--sigma', '2'])
    assert result.exit_code == 2


@pytest.mark.parametrize(
    ("prices", "arguments", "expected"),
    [
        ("100\n102\n101\n", [], [2.0, 100.0 / 102.0]),
        ("10\n10\n11\n", [], [0.0, 10.0]),
        ("10\n10\n11\n", ['--drop-zeros'], [10.0]),
    ],
    ids=["rise and fall", "zero increment kept", "zero increment dropped"],
)
def test_transform(runner: CliRunner, tmp_path: Path, prices: str, arguments: list[str], expected: list[float]):
    """Prices become absolute percentage increments."""
    source, target = tmp_path / 'prices.csv', tmp_path / 'increments.csv'
    source.write_text(prices)
    result = runner.invoke(main, ['transform', '--input', str(source), '--output', str(target), *arguments])
    assert result.exit_code == 0, result.output
    np.testing.assert_allclose(np.atleast_1d(np.loadtxt(target)), expected)


def test_transform_rejects_non_positive_prices(runner: CliRunner, tmp_path: Path):
    """A zero price cannot be turned into an increment."""
    source = tmp_path / 'prices.csv'
    source.write_text("100\n0\n101\n")
    result = runner.invoke(main, ['transform', '--input', str(source), '--output', str(tmp_path / 'out.csv')])
    assert result.exit_code == 3


def test_transform_missing_file_is_a_data_error(runner: CliRunner, tmp_path: Path):
    """A missing price file exits with the data error status."""
    arguments = ['transform', '--input', str(tmp_path / 'missing.csv'), '--output', str(tmp_path / 'out.csv')]
    result = runner.invoke(main, arguments)
    assert result.exit_code == 3
    assert 'no such data file' in result.output


def test_generate_is_reproducible(runner: CliRunner, tmp_path: Path):
    """The same seed writes the same draws."""
    for name in ('first.csv', 'second.csv'):
        result = runner.invoke(main, ['generate', '--n', '50', '--seed', '9', '--output', str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    first = (tmp_path / 'first.csv').read_bytes()
    assert first == (tmp_path / 'second.csv').read_bytes()
    assert len(first.splitlines()) == 50


def test_generate_without_seed_prints_it(runner: CliRunner, tmp_path: Path):
    """A drawn seed is reported so that the run can be repeated."""
    result = runner.invoke(main, ['generate', '--n', '5', '--output', str(tmp_path / 'draws.csv')])
    assert result.exit_code == 0
    assert 'Seed: ' in result.output
