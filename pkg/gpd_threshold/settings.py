"""Logging settings of the command-line interface."""

from __future__ import annotations

import copy

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'console',
            'stream': 'ext://sys.stderr',
        },
    },
    'loggers': {
        'gpd_threshold': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'celery': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}


def logging_settings(verbose: bool = False) -> dict:  # noqa: FBT001, FBT002
    """Return the logging configuration, with package loggers at ``DEBUG`` when ``verbose`` is set."""
    settings = copy.deepcopy(LOGGING)
    if verbose:
        settings['loggers']['gpd_threshold']['level'] = 'DEBUG'
    return settings
