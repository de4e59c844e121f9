"""
Access to the Celery application that runs simulation replications.

Without a configured broker, tasks run eagerly in the calling process, which keeps tests and single-machine studies
free of any queue infrastructure.
"""

from __future__ import annotations

from typing import Any

from celery import Celery

APP_NAME = 'gpd_threshold'


def get_celery_app(broker_url: str | None = None, result_backend: str | None = None) -> Celery:
    """Get the Celery app; eager unless a broker URL is given."""
    if not broker_url:
        return Celery(APP_NAME, task_always_eager=True)
    return Celery(APP_NAME, broker=broker_url, backend=result_backend or broker_url)


def configure_celery(app: Celery, options: dict[str, Any]):
    """
    Point an existing app at a broker, or back to eager execution.

    :param options: The ``celery`` configuration section; ``broker_url`` and ``result_backend`` are recognised, other
        keys are passed to ``app.conf`` unchanged.
    """
    options = dict(options)
    broker_url = options.pop('broker_url', None)
    result_backend = options.pop('result_backend', None)
    if broker_url:
        app.conf.update(
            broker_url=broker_url,
            result_backend=result_backend or broker_url,
            task_always_eager=False,
            **options,
        )
    else:
        app.conf.update(task_always_eager=True, **options)
