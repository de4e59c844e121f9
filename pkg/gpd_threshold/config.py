"""
Configuration file loading and option merging.

A configuration file is a JSON object with optional sections ``chain``, ``threshold_prior``, ``hyperpriors``,
``study`` and ``celery``. Options are resolved by merging dataclass defaults, file values and command-line flags, with
later sources winning.
"""

from __future__ import annotations

import json
import logging
from dataclasses import fields
from pathlib import Path
from typing import Any, TypeVar

from gpd_threshold.exceptions import DomainError

log = logging.getLogger(__name__)

SECTIONS = ('chain', 'threshold_prior', 'hyperpriors', 'study', 'celery')

T = TypeVar('T')


def load_config_file(path: str | Path | None) -> dict[str, dict[str, Any]]:
    """
    Read a configuration file; ``None`` gives an empty configuration.

    :raises DomainError: If the file is not a JSON object or has unknown sections.
    """
    if path is None:
        return {}
    try:
        document = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        msg = f'{path}: the configuration file is not valid JSON ({exc}).'
        raise DomainError(msg) from exc
    if not isinstance(document, dict):
        msg = f'{path}: the configuration file must contain a JSON object.'
        raise DomainError(msg)
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        msg = f'{path}: unknown configuration sections {unknown}; expected some of {list(SECTIONS)}.'
        raise DomainError(msg)
    log.debug('Loaded configuration sections %s from %s.', sorted(document), path)
    return document


def merge_options(*sources: dict[str, Any]) -> dict[str, Any]:
    """Merge option mappings, later ones winning; ``None`` values mean "not given" and are skipped."""
    merged: dict[str, Any] = {}
    for source in sources:
        merged = {**merged, **{key: value for key, value in source.items() if value is not None}}
    return merged


def resolve(cls: type[T], file_options: dict[str, Any] | None = None, **flag_options: Any) -> T:  # noqa: ANN401
    """
    Build a configuration dataclass from defaults, file values and flags.

    :raises DomainError: If the file or the flags name a field that ``cls`` does not have.
    """
    names = {item.name for item in fields(cls)}
    options = merge_options(file_options or {}, flag_options)
    unknown = sorted(set(options) - names)
    if unknown:
        msg = f'Unknown {cls.__name__} options {unknown}; expected some of {sorted(names)}.'
        raise DomainError(msg)
    return cls(**options)
