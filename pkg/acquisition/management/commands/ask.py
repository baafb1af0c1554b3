import json
import logging
import sys
from pathlib import Path

from django.core.management.base import CommandError
from sentry_sdk import add_breadcrumb, start_transaction

from acquisition.experiment_harness import audit_jsonl, plan_questions
from acquisition.knowledge_store import InvalidTriplet, Triplet
from acquisition.management.commands.base import ExperimentCommand
from acquisition.oracle_answerer import ChannelClosed, audit_record, interactive_answer
from acquisition.question_policy import POLICIES, PolicyContext, PolicyError, build_policy
from acquisition.world_generator import World, WorldFileError, train_knowledge

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Ask a person the questions of one episode and merge the accepted knowledge"

    # lets tests and wrappers hand in the answer stream through call_command()
    stealth_options = ("stdin",)

    def add_arguments(self, parser):
        parser.add_argument("world", help="World file written by gen_world")
        parser.add_argument("checkpoint", nargs="?", help="Projection checkpoint (needed with --interactive)")
        parser.add_argument("--interactive", action="store_true", help="Read answers from standard input")
        parser.add_argument("--replay-transcript", type=Path, help="Rebuild K+ from a previous session's transcript")
        parser.add_argument("--policy", default="ours", help=f"Question policy: {', '.join(POLICIES)}")
        parser.add_argument("--seed", type=int, default=7, help="Session seed")
        parser.add_argument("--limit", type=int, help="Ask at most this many questions")
        parser.add_argument("--out", help="Output directory (default CURIO_OUTPUT_DIR)")
        self.add_config_argument(parser)
        self.add_episode_arguments(parser)

    def handle(self, *args, **options):
        if options["interactive"] == bool(options.get("replay_transcript")):
            raise CommandError("Choose exactly one of --interactive or --replay-transcript")
        with start_transaction(op="cli.command", name="ask"):
            if options.get("replay_transcript"):
                self._replay(options)
            else:
                self._interactive(options)

    def _write(self, text):
        self.stderr.write(text, ending="")

    def _interactive(self, options):
        if not options.get("checkpoint"):
            raise CommandError("--interactive needs a checkpoint")
        config = self.episode_config(options)
        try:
            policy = build_policy(options["policy"], seed=options["seed"], global_mode=config.global_mode)
        except PolicyError as exc:
            raise CommandError(str(exc))
        world, classifier = self.load_inputs(options)
        train_kb = train_knowledge(world)
        ctx = PolicyContext.from_training(classifier, world.split_objects("train"), train_kb, seed=options["seed"])
        questions = plan_questions(world, classifier, train_kb, policy, ctx, config.noise, options["seed"])
        if options.get("limit") is not None:
            questions = questions[:options["limit"]]

        stdin = options.get("stdin") or sys.stdin
        knowledge = train_kb.copy()
        transcript = []
        add_breadcrumb(category="cli", message="Interactive session started", level="info",
                       data={"questions": len(questions)})
        try:
            for _, question in questions:
                outcome = interactive_answer(question, stdin.readline, self._write, vocabulary=world.oracle_kb.vocabulary)
                record = audit_record(question, outcome)
                record.pop("gates")
                transcript.append(record)
                if outcome.valid:
                    knowledge.merge(outcome.triplets)
        except ChannelClosed as exc:
            paths = self._flush(knowledge, transcript, options)
            logger.warning("Session ended early after %d answers; partial results in %s", len(transcript),
                           paths["transcript"])
            raise CommandError(f"{exc}; partial knowledge and transcript written to {paths['transcript'].parent}")

        paths = self._flush(knowledge, transcript, options)
        accepted = len(knowledge) - len(train_kb)
        self.stdout.write(self.style.SUCCESS(f"Session complete: {len(transcript)} questions, {accepted} new triplets"))
        self.stdout.write(f"  transcript: {paths['transcript']}")
        self.stdout.write(f"  knowledge:  {paths['knowledge']}")

    def _replay(self, options):
        path = options["replay_transcript"]
        try:
            world = World.load(options["world"])
        except (OSError, WorldFileError) as exc:
            raise CommandError(f"Cannot load world: {exc}")
        knowledge = train_knowledge(world)
        transcript = []
        line_number = 0
        try:
            with open(path, encoding="utf-8") as handle:
                for line_number, line in enumerate(handle, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    transcript.append(record)
                    if record.get("outcome") == "answer":
                        knowledge.merge(
                            Triplet.create(*fields, vocabulary=world.oracle_kb.vocabulary)
                            for fields in record["triplets"]
                        )
        except OSError as exc:
            raise CommandError(f"Cannot read transcript: {exc}")
        except (ValueError, KeyError, TypeError, InvalidTriplet) as exc:
            raise CommandError(f"Malformed transcript at line {line_number}: {exc}")
        paths = self._flush(knowledge, transcript, options, name="replayed")
        self.stdout.write(self.style.SUCCESS(f"Replayed {len(transcript)} answers into {paths['knowledge']}"))

    def _flush(self, knowledge, transcript, options, name="session"):
        out_dir = self.output_dir(options)
        out_dir.mkdir(parents=True, exist_ok=True)
        transcript_path = out_dir / f"{name}_transcript.jsonl"
        with open(transcript_path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(audit_jsonl(transcript))
        return {"transcript": transcript_path, "knowledge": knowledge.save(out_dir / f"{name}_knowledge.tsv")}
