"""Asynchronous Celery tasks."""

from __future__ import annotations

import logging

from gpd_threshold.compat import get_celery_app
from gpd_threshold.experiments import run_replication
from gpd_threshold.sampler import run_chain_from_payload

app = get_celery_app()
log = logging.getLogger(__name__)


@app.task
def run_chain_task(payload: dict) -> dict:
    """
    Celery task for one independent chain of a fit.

    :param payload: Sample values, prior settings, chain settings and the chain's seed; see
        :func:`gpd_threshold.sampler.run_chain_from_payload`.
    :returns: The post-burn-in draws and acceptance counts.
    """
    log.debug('Running a chain on %d observations.', len(payload['sample']))
    return run_chain_from_payload(payload)


@app.task
def run_replication_task(payload: dict) -> dict:
    """
    Celery task for one replication of the frequentist study.

    The payload is JSON-friendly so that it can travel through any broker; see
    :func:`gpd_threshold.experiments.run_replication` for its keys.

    :param payload: Cell parameters, replication counter, master seed and sampler settings.
    :returns: The replication record.
    """
    log.debug('Running replication %s of cell %s.', payload['replication'], payload['cell_index'])
    return run_replication(payload)
