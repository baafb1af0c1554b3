"""
Celery tasks for curio.
"""

import logging
from celery import shared_task
from sentry_sdk import capture_exception, set_context

logger = logging.getLogger(__name__)


def load_experiment(world_path, checkpoint_path):
    """Load a world and a trained checkpoint into a ready classifier."""
    from acquisition.embedding_space import Projection
    from acquisition.object_classifier import ObjectClassifier
    from acquisition.world_generator import World

    world = World.load(world_path)
    classifier = ObjectClassifier(Projection.load(checkpoint_path), world.concepts)
    return world, classifier


def execute_comparison(run):
    """Run a recorded ``compare`` to completion, writing the report files and episode rows."""
    from acquisition.experiment_harness import EpisodeConfig, compare_policies, write_report

    run.mark_running()
    try:
        world, classifier = load_experiment(run.world_path, run.checkpoint_path)
        reports = compare_policies(world, classifier, run.seeds, EpisodeConfig.from_dict(run.config))
        paths = write_report(reports, run.out_dir)
    except Exception as e:
        logger.error(f"Comparison run {run.pk} failed: {e}", exc_info=True)
        set_context("experiment_run", {"id": run.pk, "world": run.world_path, "seeds": run.seeds})
        capture_exception(e)
        run.mark_failed(e)
        raise
    run.mark_completed(reports)
    logger.info(f"Comparison run {run.pk} completed: {len(reports)} rows written to {paths['report_csv']}")
    return reports


@shared_task(queue="experiments", bind=True)
def run_comparison(self, run_id):
    """
    Execute a pending ``compare`` run outside the terminal.

    Enqueued by ``manage.py compare --background``; writes the same files and
    records as the foreground command.
    """
    from acquisition.models import ExperimentRun

    try:
        run = ExperimentRun.objects.get(pk=run_id)
    except ExperimentRun.DoesNotExist:
        logger.warning(f"Experiment run {run_id} no longer exists")
        return {"status": "missing", "run_id": run_id}

    if run.status != "pending":
        logger.warning(f"Experiment run {run_id} is {run.status}, not pending; skipping")
        return {"status": "skipped", "run_id": run_id}

    reports = execute_comparison(run)
    return {"status": "completed", "run_id": run_id, "rows": len(reports)}
