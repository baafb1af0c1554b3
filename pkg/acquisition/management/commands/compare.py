import logging

from django.core.management.base import CommandError
from sentry_sdk import add_breadcrumb, capture_exception, set_context, start_transaction

from acquisition.experiment_harness import MIN_RANDOM_SEEDS, compare_policies, report_csv, write_report
from acquisition.management.commands.base import ExperimentCommand
from acquisition.models import ExperimentRun
from acquisition.tasks import execute_comparison, run_comparison

logger = logging.getLogger(__name__)


def parse_seeds(value):
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise CommandError(f"--seeds must be comma-separated integers, got {value!r}")


class Command(ExperimentCommand):
    help = "Compare the baseline and every question policy; the random policy is averaged over the seeds"

    def add_arguments(self, parser):
        parser.add_argument("world", help="World file written by gen_world")
        parser.add_argument("checkpoint", help="Projection checkpoint written by train")
        parser.add_argument("--seeds", default="7,13,29", help="Comma-separated seeds; the random policy needs 3+")
        parser.add_argument("--out", help="Output directory (default CURIO_OUTPUT_DIR)")
        parser.add_argument("--no-record", action="store_true", help="Do not store the run in the database")
        parser.add_argument(
            "--background", action="store_true", help="Record the run and execute it on a Celery worker"
        )
        self.add_config_argument(parser)
        self.add_episode_arguments(parser)

    def handle(self, *args, **options):
        with start_transaction(op="cli.command", name="compare"):
            seeds = parse_seeds(options["seeds"])
            if len(seeds) < MIN_RANDOM_SEEDS:
                raise CommandError(
                    f"compare needs at least {MIN_RANDOM_SEEDS} seeds: the random policy is run once per seed "
                    f"and reported as mean and std (got {len(seeds)})"
                )
            if options["background"] and options["no_record"]:
                raise CommandError("--background needs the run recorded; drop --no-record")
            config = self.episode_config(options)
            out_dir = self.output_dir(options)

            if options["no_record"]:
                world, classifier = self.load_inputs(options)
                try:
                    reports = compare_policies(world, classifier, seeds, config)
                    write_report(reports, out_dir)
                except Exception as exc:
                    logger.error("Comparison failed: %s", exc, exc_info=True)
                    set_context("comparison", {"seeds": seeds, "world": options["world"]})
                    capture_exception(exc)
                    raise CommandError(f"Comparison failed: {exc}")
                self._write_table(reports, out_dir)
                return

            self.load_inputs(options)  # fail fast on unreadable inputs before recording anything
            run = ExperimentRun.objects.create(
                command="compare",
                world_path=str(options["world"]),
                checkpoint_path=str(options["checkpoint"]),
                out_dir=str(out_dir),
                config=config.to_dict(),
                seeds=seeds,
            )
            add_breadcrumb(category="cli", message="Comparison recorded", level="info", data={"run_id": run.pk})

            if options["background"]:
                run_comparison.delay(run.pk)
                self.stdout.write(self.style.SUCCESS(f"Comparison run #{run.pk} queued"))
                return

            try:
                reports = execute_comparison(run)
            except Exception as exc:
                raise CommandError(f"Comparison failed: {exc}")
            self._write_table(reports, out_dir)

    def _write_table(self, reports, out_dir):
        self.stdout.write(report_csv(reports), ending="")
        self.stdout.write(self.style.SUCCESS(f"Report written to {out_dir}"))
