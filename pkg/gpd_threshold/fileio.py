"""
Reading data series and writing run artifacts.

Every float written by this module uses the ``%.16e`` format (17 significant digits, lowercase scientific), so that
artifacts are byte-deterministic and re-read without loss. The formats are documented in ``docs/references``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from gpd_threshold.distributions import OrderedSample
from gpd_threshold.exceptions import (
    DataError,
    NonPositiveValueError,
    ReportFormatError,
    SeriesParseError,
    TooFewRowsError,
)

if TYPE_CHECKING:  # pragma: no cover
    from numpy.typing import ArrayLike, NDArray

    from gpd_threshold.sampler import PosteriorSamples

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = '%.16e'
MIN_ROWS = 3
EXPECTED_ROWS = {'danish': 2167, 'nasdaq': 4394}
_FLOAT_PATTERN = re.compile(r'^-?\d\.\d{16}e[+-]\d{2,3}$|^-?inf$|^nan$')


@dataclass(frozen=True)
class SeriesFile:
    """
    A numeric column of a delimited text file.

    :param column: Zero-based column position, or a column name when the file has a header row.
    """

    path: str | Path
    column: int | str = 0
    delimiter: str = ','
    header: bool = False


def _select_column(frame: pd.DataFrame, source: SeriesFile) -> pd.Series:
    column = source.column
    if isinstance(column, str) and column.isdigit():
        column = int(column)
    if isinstance(column, int):
        if not 0 <= column < frame.shape[1]:
            msg = f'{source.path}: column {column} requested but the file has {frame.shape[1]} column(s).'
            raise DataError(msg)
        return frame.iloc[:, column]
    if column not in frame.columns:
        msg = f'{source.path}: no column named {column!r}; found {", ".join(map(str, frame.columns))}.'
        raise DataError(msg)
    return frame[column]


def _read_column(source: SeriesFile) -> NDArray[np.float64]:
    """
    Read one column as finite reals in file order.

    Blank lines are skipped; both LF and CRLF line endings are accepted.

    :raises DataError: If the file is missing or the column does not exist.
    :raises SeriesParseError: At the first cell that is not a finite real, with its line number.
    """
    path = Path(source.path)
    try:
        frame = pd.read_csv(
            path,
            sep=source.delimiter,
            header=0 if source.header else None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as exc:
        msg = f'{path}: no such data file.'
        raise DataError(msg) from exc
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    except pd.errors.ParserError as exc:
        msg = f'{path}: {exc}'
        raise DataError(msg) from exc

    if frame.empty:
        raw = pd.Series([], dtype=str)
    else:
        blank = frame.apply(lambda column: column.fillna('').str.strip() == '').all(axis=1)
        raw = _select_column(frame[~blank], source).str.strip()
    values = pd.to_numeric(raw, errors='coerce').to_numpy(dtype=float)

    first_line = 2 if source.header else 1
    invalid = ~np.isfinite(values)
    if invalid.any():
        position = int(np.argmax(invalid))
        raise SeriesParseError(int(raw.index[position]) + first_line, raw.iloc[position], str(path))
    return values


def read_series(source: SeriesFile) -> OrderedSample:
    """
    Read, validate and sort one column of positive reals.

    Blank lines are skipped; both LF and CRLF line endings are accepted.

    :raises DataError: If the file is missing or the column does not exist.
    :raises SeriesParseError: At the first cell that is not a finite real, with its line number.
    :raises NonPositiveValueError: If any value is zero or negative.
    :raises TooFewRowsError: For fewer than three values.
    """
    values = _read_column(source)
    if (values <= 0).any():
        raise NonPositiveValueError(values[values <= 0].tolist(), str(source.path))
    if values.size < MIN_ROWS:
        msg = f'{source.path}: at least {MIN_ROWS} values are required, found {values.size}.'
        raise TooFewRowsError(msg)
    log.info('Read %d values from %s.', values.size, source.path)
    return OrderedSample(values)


def check_expected_rows(name: str, n: int) -> bool:
    """
    Warn when a known dataset has an unexpected number of rows.

    :returns: ``False`` if ``name`` is known and ``n`` differs from its documented row count.
    """
    expected = EXPECTED_ROWS.get(name)
    if expected is None or expected == n:
        return True
    log.warning('The %s dataset is documented with %d rows but %d were read.', name, expected, n)
    return False


def nasdaq_increments(prices: ArrayLike) -> NDArray[np.float64]:
    """
    Absolute daily percentage changes ``|p_t / p_{t-1} - 1| * 100``.

    Zero increments are kept and reported in a warning: tied values get no mass under the loss-based threshold prior
    and cannot be fitted by the positive-valued model.

    :raises TooFewRowsError: For fewer than two prices.
    :raises NonPositiveValueError: If any price is zero or negative.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.size < 2:  # noqa: PLR2004
        msg = f'At least two prices are required, got {prices.size}.'
        raise TooFewRowsError(msg)
    if not (prices > 0).all():
        raise NonPositiveValueError(prices[~(prices > 0)].tolist(), 'prices')
    increments = np.abs(prices[1:] / prices[:-1] - 1.0) * 100.0
    zeros = int((increments == 0).sum())
    if zeros:
        log.warning('%d of %d increments are exactly zero.', zeros, increments.size)
    return increments


def read_prices(source: SeriesFile) -> NDArray[np.float64]:
    """
    Read a price column in file order, without the sorting and positivity checks of :func:`read_series`.

    :raises DataError: If the file is missing or the column does not exist.
    :raises SeriesParseError: At the first cell that is not a finite real, with its line number.
    """
    return _read_column(source)


def write_series(values: ArrayLike, path: str | Path):
    """Write one value per line."""
    np.savetxt(path, np.asarray(values, dtype=float), fmt=FLOAT_FORMAT, newline='\n')


def encode_floats(value: Any) -> Any:  # noqa: ANN401
    """Recursively replace floats (including numpy scalars and arrays) with their fixed-format strings."""
    if isinstance(value, dict):
        return {str(key): encode_floats(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [encode_floats(item) for item in value]
    if isinstance(value, np.ndarray):
        return encode_floats(value.tolist())
    if isinstance(value, bool | np.bool_):
        return bool(value)
    if isinstance(value, int | np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        return FLOAT_FORMAT % value
    return value


def decode_floats(value: Any) -> Any:  # noqa: ANN401
    """Inverse of :func:`encode_floats`."""
    if isinstance(value, dict):
        return {key: decode_floats(item) for key, item in value.items()}
    if isinstance(value, list):
        return [decode_floats(item) for item in value]
    if isinstance(value, str) and _FLOAT_PATTERN.match(value):
        return float(value)
    return value


def write_document(document: dict[str, Any], path: str | Path):
    """Write a JSON document with sorted keys, two-space indentation and fixed-format floats."""
    text = json.dumps(encode_floats(document), sort_keys=True, indent=2)
    Path(path).write_text(text + '\n', encoding='utf-8', newline='\n')


def read_document(path: str | Path) -> dict[str, Any]:
    """Read a document written by :func:`write_document`."""
    try:
        document = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        msg = f'{path}: not a JSON document ({exc}).'
        raise ReportFormatError(msg) from exc
    return decode_floats(document)


@dataclass
class RunReport:
    """
    Everything needed to interpret and reproduce a fit.

    ``config`` echoes the fully resolved configuration, including the seed. ``summaries`` maps parameter names to
    their mean, median and interval bounds. ``effective_sample_size`` sums the per-chain effective sizes of each
    parameter.
    """

    config: dict[str, Any]
    summaries: dict[str, dict[str, float]]
    acceptance: dict[str, float]
    gelman_rubin: dict[str, float]
    threshold_posterior: dict[str, list[float]]
    prior_curve: dict[str, list[float]] | None = None
    effective_sample_size: dict[str, float] = field(default_factory=dict)
    schema_version: int = field(default=SCHEMA_VERSION)

    def to_dict(self) -> dict[str, Any]:
        return {
            'schema_version': self.schema_version,
            'config': self.config,
            'summaries': self.summaries,
            'acceptance': self.acceptance,
            'gelman_rubin': self.gelman_rubin,
            'threshold_posterior': self.threshold_posterior,
            'prior_curve': self.prior_curve,
            'effective_sample_size': self.effective_sample_size,
        }


def write_report(report: RunReport, path: str | Path):
    """Write a run report; filesystem errors propagate unchanged."""
    write_document(report.to_dict(), path)


def read_report(path: str | Path) -> RunReport:
    """
    Read a run report written by :func:`write_report`.

    :raises ReportFormatError: For malformed files or an unknown schema version.
    """
    document = read_document(path)
    version = document.pop('schema_version', None)
    if version != SCHEMA_VERSION:
        msg = f'{path}: unsupported report schema version {version!r}; expected {SCHEMA_VERSION}.'
        raise ReportFormatError(msg)
    try:
        return RunReport(**document, schema_version=version)
    except TypeError as exc:
        msg = f'{path}: unexpected report layout ({exc}).'
        raise ReportFormatError(msg) from exc


def write_chain(samples: PosteriorSamples, path: str | Path):
    """Write the post-burn-in records of a chain, one row per iteration, columns named by parameter."""
    frame = pd.DataFrame({name: samples.trace(name) for name in samples.parameter_names})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def read_chain(path: str | Path) -> dict[str, NDArray]:
    """Read a chain file back into parameter traces."""
    frame = pd.read_csv(path, dtype={'k': np.int64})
    return {name: frame[name].to_numpy() for name in frame.columns}
