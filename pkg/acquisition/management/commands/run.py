import logging

from django.core.management.base import CommandError
from django.utils import timezone
from sentry_sdk import add_breadcrumb, capture_exception, set_context, set_tag, start_transaction

from acquisition.experiment_harness import run_baseline, run_episode, write_episode
from acquisition.management.commands.base import ExperimentCommand
from acquisition.models import ExperimentRun
from acquisition.question_policy import POLICIES, PolicyError, build_policy

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Run one acquisition episode and write the report, audit log and expanded knowledge"

    def add_arguments(self, parser):
        parser.add_argument("world", help="World file written by gen_world")
        parser.add_argument("checkpoint", help="Projection checkpoint written by train")
        parser.add_argument("--policy", default="ours", help=f"Question policy: {', '.join(POLICIES)}")
        parser.add_argument("--seed", type=int, default=7, help="Episode seed")
        parser.add_argument("--out", help="Output directory (default CURIO_OUTPUT_DIR)")
        parser.add_argument("--no-record", action="store_true", help="Do not store the run in the database")
        self.add_config_argument(parser)
        self.add_episode_arguments(parser)

    def handle(self, *args, **options):
        with start_transaction(op="cli.command", name="run"):
            set_tag("policy", options["policy"])
            config = self.episode_config(options)
            try:
                policy = build_policy(options["policy"], seed=options["seed"], global_mode=config.global_mode)
            except PolicyError as exc:
                raise CommandError(str(exc))
            world, classifier = self.load_inputs(options)
            out_dir = self.output_dir(options)

            run = None
            if not options["no_record"]:
                run = ExperimentRun.objects.create(
                    command="run",
                    world_path=str(options["world"]),
                    checkpoint_path=str(options["checkpoint"]),
                    out_dir=str(out_dir),
                    config={"policy": policy.name, **config.to_dict()},
                    seeds=[options["seed"]],
                )
                run.mark_running()

            start_time = timezone.now()
            add_breadcrumb(category="cli", message="Episode started", level="info",
                           data={"policy": policy.name, "seed": options["seed"]})
            try:
                baseline = run_baseline(world, classifier)
                result = run_episode(world, classifier, policy, options["seed"], config)
                paths = write_episode(result, out_dir, baseline=baseline)
            except Exception as exc:
                logger.error("Episode failed: %s", exc, exc_info=True)
                set_context("episode", {"policy": policy.name, "seed": options["seed"], "world": options["world"]})
                capture_exception(exc)
                if run is not None:
                    run.mark_failed(exc)
                raise CommandError(f"Episode failed: {exc}")

            if run is not None:
                run.mark_completed([baseline, result.report])
            self._write_summary(baseline, result.report, paths, start_time)

    def _write_summary(self, baseline, report, paths, start_time):
        duration = (timezone.now() - start_time).total_seconds()
        zero_shot, tuned = report.zero_shot, report.fine_tune
        self.stdout.write(self.style.SUCCESS(f"\nEpisode complete ({report.label}) in {duration:.1f}s"))
        self.stdout.write(f"  Valid questions:    {report.n_valid_q}")
        self.stdout.write(f"  Acquired knowledge: {report.n_knowledge}")
        self.stdout.write(f"  Baseline overall:   {baseline.zero_shot.overall:.4f}")
        self.stdout.write(f"  Zero-shot overall:  {zero_shot.overall:.4f}")
        self.stdout.write(f"  Fine-tune overall:  {tuned.overall:.4f}")
        for name, path in paths.items():
            self.stdout.write(f"  {name}: {path}")
