"""Base command classes: JSON-logging aware stdout plus the shared experiment flags."""

import json
import os
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError


class SilentStdoutCommand(BaseCommand):
    """
    Base command that suppresses stdout.write() when LOG_FORMAT=json.

    With JSON logging only structured records should reach the log pipeline;
    the self.stdout.write() calls are human-facing progress output. Result
    files are written either way.

    Usage:
        from acquisition.management.commands.base import SilentStdoutCommand

        class Command(SilentStdoutCommand):
            def handle(self, *args, **options):
                self.stdout.write("This will be suppressed with JSON logging")
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)

        if os.environ.get("LOG_FORMAT", "text").lower() == "json":
            self.stdout = type(self).NullOutput()

    class NullOutput:
        """A no-op output class that discards all writes."""

        def write(self, msg, *args, **kwargs):
            pass

        def flush(self):
            pass

        class style:
            @staticmethod
            def SUCCESS(msg):
                return msg

            @staticmethod
            def WARNING(msg):
                return msg

            @staticmethod
            def ERROR(msg):
                return msg

            @staticmethod
            def NOTICE(msg):
                return msg


class ExperimentCommand(SilentStdoutCommand):
    """
    Shared flags for commands that run the acquisition pipeline.

    A ``--config`` JSON file may hold ``world``, ``training`` and ``episode``
    sections; explicit flags override the file.
    """

    def add_config_argument(self, parser):
        parser.add_argument("--config", type=Path, help="JSON config file with world/training/episode sections")

    def add_episode_arguments(self, parser):
        parser.add_argument("--p-conf", type=float, help="Corruption probability for confirmation questions")
        parser.add_argument("--p-exp", type=float, help="Corruption probability for exploration questions")
        parser.add_argument("--head-eps", type=float, help="Oracle head-gate label error rate")
        parser.add_argument(
            "--tail-fallback",
            action="store_true",
            default=None,
            help="Answer confirmation questions with an unknown tail using every triplet of the head and relation",
        )
        parser.add_argument("--rounds", type=int, help="Question rounds per episode")
        parser.add_argument(
            "--global-mode",
            action="store_true",
            default=None,
            help="Let the expected-utility policy pick one mode for the whole query set",
        )
        parser.add_argument(
            "--replay", action="store_true", default=None, help="Also fine-tune on the train split"
        )

    def load_config(self, options, section):
        path = options.get("config")
        if not path:
            return {}
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise CommandError(f"Cannot read config file {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise CommandError(f"Config file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict) or not isinstance(data.get(section, {}), dict):
            raise CommandError(f"Config file {path} must map section {section!r} to an object")
        return dict(data.get(section, {}))

    def episode_config(self, options):
        from acquisition.experiment_harness import EpisodeConfig

        data = self.load_config(options, "episode")
        noise = dict(data.get("noise", {}))
        oracle = dict(data.get("oracle", {}))
        overrides = (
            (noise, "p_confirmation", options.get("p_conf")),
            (noise, "p_exploration", options.get("p_exp")),
            (oracle, "head_error_rate", options.get("head_eps")),
            (oracle, "confirmation_tail_fallback", options.get("tail_fallback")),
            (data, "rounds", options.get("rounds")),
            (data, "global_mode", options.get("global_mode")),
            (data, "replay", options.get("replay")),
        )
        for target, key, value in overrides:
            if value is not None:
                target[key] = value
        data["noise"], data["oracle"] = noise, oracle
        try:
            return EpisodeConfig.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise CommandError(f"Invalid episode configuration: {exc}")

    def output_dir(self, options):
        return Path(options.get("out") or settings.CURIO_OUTPUT_DIR)

    def load_inputs(self, options):
        from acquisition.embedding_space import CheckpointError
        from acquisition.tasks import load_experiment
        from acquisition.world_generator import WorldFileError

        for key in ("world", "checkpoint"):
            if not Path(options[key]).exists():
                raise CommandError(f"{key.capitalize()} file not found: {options[key]}")
        try:
            return load_experiment(options["world"], options["checkpoint"])
        except (WorldFileError, CheckpointError) as exc:
            raise CommandError(str(exc))
