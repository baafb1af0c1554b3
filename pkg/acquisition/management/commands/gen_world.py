import logging

from django.core.management.base import CommandError
from sentry_sdk import add_breadcrumb, capture_exception, set_context, start_transaction

from acquisition.management.commands.base import ExperimentCommand
from acquisition.world_generator import InvalidWorldConfig, WorldConfig, generate

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Generate a seeded synthetic world (heads, oracle knowledge, images, splits) and write it as JSON"

    def add_arguments(self, parser):
        self.add_config_argument(parser)
        parser.add_argument("--seed", type=int, help="World seed (default 7)")
        parser.add_argument("--novel-fraction", type=float, help="Fraction of heads held out of the train split")
        parser.add_argument("--images", type=int, dest="n_images", help="Number of images")
        parser.add_argument("--out", help="World file path (default <CURIO_OUTPUT_DIR>/world.json)")

    def handle(self, *args, **options):
        with start_transaction(op="cli.command", name="gen_world"):
            data = self.load_config(options, "world")
            for key, flag in (("seed", "seed"), ("novel_fraction", "novel_fraction"), ("n_images", "n_images")):
                if options.get(flag) is not None:
                    data[key] = options[flag]
            try:
                config = WorldConfig.from_dict(data)
            except (InvalidWorldConfig, TypeError) as exc:
                raise CommandError(f"Invalid world configuration: {exc}")

            add_breadcrumb(category="cli", message="World generation started", level="info", data={"seed": config.seed})
            try:
                world = generate(config)
            except Exception as exc:
                logger.error("World generation failed: %s", exc, exc_info=True)
                set_context("world_config", config.to_dict())
                capture_exception(exc)
                raise CommandError(f"World generation failed: {exc}")

            path = options.get("out") or self.output_dir(options) / "world.json"
            world.save(path)

            summary = world.summary()
            self.stdout.write(self.style.SUCCESS(f"World written to {path}"))
            self.stdout.write(f"  Heads:        {summary['heads']} ({summary['novel_heads']} novel)")
            self.stdout.write(f"  Images:       {summary['images']}")
            self.stdout.write(f"  Objects:      {summary['objects']}")
            self.stdout.write(f"  Triplets:     {summary['triplets']}")
            self.stdout.write(
                f"  Splits:       train={summary['train_objects']} query={summary['query_objects']} "
                f"test={summary['test_objects']}"
            )
