import logging
from pathlib import Path

from django.core.management.base import CommandError
from sentry_sdk import add_breadcrumb, capture_exception, set_context, start_transaction

from acquisition.embedding_space import EmbeddingError
from acquisition.management.commands.base import ExperimentCommand
from acquisition.object_classifier import ObjectClassifier, TrainingConfig
from acquisition.world_generator import World, WorldFileError, train_knowledge

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Train the object projection on the train split against the training knowledge"

    def add_arguments(self, parser):
        parser.add_argument("world", help="World file written by gen_world")
        self.add_config_argument(parser)
        parser.add_argument("--epochs", type=int, help="Training epochs")
        parser.add_argument("--lr", type=float, dest="learning_rate", help="Learning rate")
        parser.add_argument("--batch-size", type=int, help="Objects per gradient step")
        parser.add_argument("--temperature", type=float, help="Initial score temperature")
        parser.add_argument("--negatives", type=int, help="Sampled negatives per positive (default: all pairs)")
        parser.add_argument("--seed", type=int, help="Initialisation and shuffling seed")
        parser.add_argument("--out", help="Checkpoint path (default <CURIO_OUTPUT_DIR>/projection.ckpt)")

    def handle(self, *args, **options):
        with start_transaction(op="cli.command", name="train"):
            if not Path(options["world"]).exists():
                raise CommandError(f"World file not found: {options['world']}")
            try:
                world = World.load(options["world"])
            except WorldFileError as exc:
                raise CommandError(str(exc))

            data = self.load_config(options, "training")
            for key in ("epochs", "learning_rate", "batch_size", "temperature", "negatives", "seed"):
                if options.get(key) is not None:
                    data[key] = options[key]
            try:
                config = TrainingConfig.from_dict(data)
            except (TypeError, ValueError) as exc:
                raise CommandError(f"Invalid training configuration: {exc}")

            add_breadcrumb(category="cli", message="Training started", level="info", data=config.to_dict())
            try:
                classifier, losses = ObjectClassifier.train(
                    world.split_objects("train"), train_knowledge(world), world.concepts, config
                )
            except EmbeddingError as exc:
                logger.error("Training aborted: %s", exc, exc_info=True)
                set_context("training_config", config.to_dict())
                capture_exception(exc)
                raise CommandError(f"Training aborted: {exc}")

            for epoch, loss in enumerate(losses, start=1):
                self.stdout.write(f"  epoch {epoch:3d}  loss {loss:.6f}")

            path = options.get("out") or self.output_dir(options) / "projection.ckpt"
            classifier.projection.save(path)
            self.stdout.write(
                self.style.SUCCESS(
                    f"Checkpoint written to {path} (temperature {classifier.projection.temperature:.4f})"
                )
            )
