"""Custom exceptions for the gpd-threshold package."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:  # pragma: no cover
    from collections.abc import Sequence


class GpdThresholdError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GpdThresholdError, ValueError):
    """Raised when an argument lies outside the mathematical domain of an operation."""


class DegeneratePriorError(GpdThresholdError):
    """Raised when every order statistic receives zero mass under the threshold prior."""


class InitializationError(GpdThresholdError):
    """Raised when no starting state with a finite log posterior can be built for a chain."""


class DegenerateVarianceError(GpdThresholdError):
    """Raised when the within-chain variance of the Gelman-Rubin diagnostic is zero."""


class EmptySamplesError(GpdThresholdError):
    """Raised when summaries are requested from a chain without stored records."""


class DataError(GpdThresholdError):
    """Base class for problems with user-supplied data files."""


class SeriesParseError(DataError):
    """Raised when a value of the selected column cannot be parsed as a finite real number."""

    def __init__(self, line: int, raw: str, path: str):
        self.line = line
        self.raw = raw
        super().__init__(f'{path}:{line}: cannot parse {raw!r} as a finite real number.')


class NonPositiveValueError(DataError):
    """Raised when the data contains values that are not strictly positive."""

    def __init__(self, offenders: Sequence[float], source: str):
        self.offenders = list(offenders)
        shown = ', '.join(repr(value) for value in self.offenders[:10])
        suffix = ', ...' if len(self.offenders) > 10 else ''  # noqa: PLR2004
        super().__init__(f'{source}: the model requires positive values, found {shown}{suffix}.')


class TooFewRowsError(DataError):
    """Raised when a data file holds fewer observations than the model needs."""


class ReportFormatError(DataError):
    """Raised when a report or chain file does not follow a known schema."""
