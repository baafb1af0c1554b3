"""Episodes and policy comparison.

An episode asks one question per query object, answers it with the oracle,
merges every returned triplet into ``K⁺`` and evaluates the test split twice:
zero-shot with the frozen projection, then after fine-tuning on the acquired
pairs. The scoring and answering phase only reads ``K``; the merge is a
single write at the end of each round.
"""
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sentry_sdk import add_breadcrumb, capture_exception

from .knowledge_store import KnowledgeSource
from .object_classifier import FINE_TUNE_CONFIG, AccuracyReport, ObjectClassifier, TrainingConfig
from .oracle_answerer import HEAD_STREAM, OracleConfig, Rejection, answer, audit_record
from .question_policy import PolicyContext, QuestionPolicy, build_policy
from .question_realizer import REALIZE_STREAM, NoiseParams, realize
from .world_generator import World, train_knowledge

logger = logging.getLogger(__name__)

REPORT_FORMAT = "curio-report"
REPORT_VERSION = 1
MIN_RANDOM_SEEDS = 3

ROW_LABELS = {
    "baseline": "CLIP-Ret",
    "all-conf": "All Conf.",
    "all-exp": "All Exp.",
    "random": "Random",
    "ours": "Ours",
}
METRIC_COLUMNS = (
    "overall_zs", "overall_ft", "known_zs", "known_ft", "novel_zs", "novel_ft", "n_valid_q", "n_knowledge",
)
REPORT_COLUMNS = ("policy", "label", *METRIC_COLUMNS, "seeds", *(f"{c}_std" for c in METRIC_COLUMNS))


class ExperimentError(Exception):
    """Raised when an experiment cannot run as configured."""


@dataclass(frozen=True)
class EpisodeConfig:
    noise: NoiseParams = NoiseParams()
    oracle: OracleConfig = OracleConfig()
    fine_tune: TrainingConfig = FINE_TUNE_CONFIG
    rounds: int = 1
    global_mode: bool = False
    replay: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("an episode needs at least one round")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeConfig":
        data = dict(data)
        nested = {"noise": NoiseParams, "oracle": OracleConfig, "fine_tune": TrainingConfig}
        for key, kind in nested.items():
            if isinstance(data.get(key), dict):
                data[key] = kind(**data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown episode config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpisodeReport:
    policy: str
    zero_shot: AccuracyReport
    fine_tune: AccuracyReport | None = None
    n_valid_q: float = 0
    n_knowledge: float = 0
    seeds: tuple = ()
    std: dict = field(default_factory=dict)  # metric column -> std, aggregated rows only

    @property
    def label(self):
        return ROW_LABELS.get(self.policy, self.policy)

    def metrics(self) -> dict:
        tuned = self.fine_tune
        return {
            "overall_zs": self.zero_shot.overall,
            "overall_ft": tuned.overall if tuned else None,
            "known_zs": self.zero_shot.known,
            "known_ft": tuned.known if tuned else None,
            "novel_zs": self.zero_shot.novel,
            "novel_ft": tuned.novel if tuned else None,
            "n_valid_q": self.n_valid_q,
            "n_knowledge": self.n_knowledge,
        }

    def to_row(self) -> dict:
        row = {"policy": self.policy, "label": self.label, **self.metrics(), "seeds": list(self.seeds)}
        row.update({f"{column}_std": self.std.get(column) for column in METRIC_COLUMNS})
        return row


@dataclass
class EpisodeResult:
    report: EpisodeReport
    audit: list
    knowledge: KnowledgeSource
    classifier: ObjectClassifier
    acquired: list = field(default_factory=list)  # (object, triplet) pairs


def run_baseline(world: World, classifier: ObjectClassifier) -> EpisodeReport:
    """Test-split accuracy against the training knowledge only; no questions asked."""
    if classifier.projection.steps == 0:
        logger.warning("Baseline evaluated with an untrained projection")
    source = train_knowledge(world)
    report = classifier.evaluate(world.split_objects("test"), source, world.known_heads)
    logger.info("Baseline: overall=%.4f known=%s novel=%s", report.overall, report.known, report.novel)
    return EpisodeReport(policy="baseline", zero_shot=report)


def _resolve_policy(policy, seed, config: EpisodeConfig) -> QuestionPolicy:
    if isinstance(policy, QuestionPolicy):
        return policy
    return build_policy(policy, seed=seed, global_mode=config.global_mode)


def _error_record(question_id, obj, exc) -> dict:
    return {
        "question": {"id": question_id, "target_object_id": obj.id, "image_id": obj.image_id},
        "gates": None,
        "outcome": "rejection",
        "reason": f"error: {type(exc).__name__}",
        "triplets": [],
    }


def realize_question(world: World, obj, mode, target, noise: NoiseParams, seed: int, index: int, question_id: str):
    """Realise instance ``index``'s question on its own sampling stream."""
    rng = np.random.default_rng([seed, REALIZE_STREAM, index])
    return realize(target, obj, world.image_of(obj), mode, noise, rng, question_id=question_id)


def plan_round(world: World, classifier: ObjectClassifier, knowledge: KnowledgeSource, policy: QuestionPolicy,
               ctx: PolicyContext, round_index: int = 0):
    """``(object, mode, target, index, question_id)`` per query object; indexes continue across rounds."""
    query = world.split_objects("query")
    start = round_index * len(query)
    plan = policy.plan(classifier.top_predictions(query, knowledge), ctx, start=start)
    return [
        (obj, mode, target, start + offset, f"q{round_index}-{obj.id}")
        for offset, (obj, (mode, target)) in enumerate(zip(query, plan))
    ]


def plan_questions(world: World, classifier: ObjectClassifier, knowledge: KnowledgeSource, policy: QuestionPolicy,
                   ctx: PolicyContext, noise: NoiseParams, seed: int, round_index: int = 0):
    """Questions for every query object in one round, as ``(object, question)`` pairs."""
    return [
        (obj, realize_question(world, obj, mode, target, noise, seed, index, question_id))
        for obj, mode, target, index, question_id in plan_round(world, classifier, knowledge, policy, ctx, round_index)
    ]


def run_episode(world: World, classifier: ObjectClassifier, policy, seed: int,
                config: EpisodeConfig = EpisodeConfig()) -> EpisodeResult:
    """One acquisition episode; identical inputs give identical reports and audit records."""
    policy = _resolve_policy(policy, seed, config)
    train_kb = train_knowledge(world)
    knowledge = train_kb.copy()
    frozen = classifier.projection.copy()
    query = world.split_objects("query")
    ctx = PolicyContext.from_training(classifier, world.split_objects("train"), train_kb, seed=seed)
    oracle_config = replace(config.oracle, seed=seed)

    audit, acquired = [], []
    n_valid = 0
    for round_index in range(config.rounds):
        add_breadcrumb(category="episode", message=f"{policy.name} round {round_index + 1}", level="info")
        answered = []
        for obj, mode, target, index, question_id in plan_round(world, classifier, knowledge, policy, ctx, round_index):
            try:
                question = realize_question(world, obj, mode, target, config.noise, seed, index, question_id)
                outcome = answer(question, world.oracle_kb, world, oracle_config,
                                 rng=np.random.default_rng([seed, HEAD_STREAM, index]))
            except Exception as exc:
                logger.error("Question %s failed; counted as a rejection", question_id, exc_info=True)
                capture_exception(exc)
                audit.append(_error_record(question_id, obj, exc))
                continue
            audit.append(audit_record(question, outcome))
            if isinstance(outcome, Rejection):
                continue
            n_valid += 1
            for triplet in sorted(outcome.triplets):
                answered.append(triplet)
                acquired.append((obj, triplet))
        knowledge.merge(answered)

    n_knowledge = len(knowledge.entries - train_kb.entries)
    if not classifier.projection.same_as(frozen):
        raise ExperimentError("projection changed before zero-shot evaluation")
    test = world.split_objects("test")
    zero_shot = classifier.evaluate(test, knowledge, world.known_heads)

    pairs = list(acquired)
    if pairs and config.replay:
        pairs += [(obj, t) for obj in world.split_objects("train") for t in sorted(train_kb.triplets_for(obj.truth_head))]
    if pairs:
        tuned = classifier.fine_tune(pairs, knowledge, replace(config.fine_tune, seed=seed))
        fine_tuned = tuned.evaluate(test, knowledge, world.known_heads)
    else:
        logger.warning("Policy %s acquired no knowledge; fine-tune results repeat zero-shot", policy.name)
        tuned, fine_tuned = classifier, zero_shot

    report = EpisodeReport(
        policy=policy.name,
        zero_shot=zero_shot,
        fine_tune=fine_tuned,
        n_valid_q=n_valid,
        n_knowledge=n_knowledge,
        seeds=(seed,),
    )
    logger.info(
        "Episode %s seed=%d: valid=%d/%d knowledge=%d zero-shot=%.4f fine-tune=%.4f",
        policy.name, seed, n_valid, len(query) * config.rounds, n_knowledge, zero_shot.overall, fine_tuned.overall,
    )
    return EpisodeResult(report, audit, knowledge, tuned, acquired)


def aggregate(reports, policy: str) -> EpisodeReport:
    """Mean row with sample standard deviations (``ddof=1``) over seeded reports."""
    reports = list(reports)
    if not reports:
        raise ExperimentError("nothing to aggregate")
    metrics = [report.metrics() for report in reports]

    def mean(column):
        values = [m[column] for m in metrics if m[column] is not None]
        return float(np.mean(values)) if values else None

    def std(column):
        values = [m[column] for m in metrics if m[column] is not None]
        return float(np.std(values, ddof=1)) if len(values) > 1 else (0.0 if values else None)

    first = reports[0]
    zero_shot = AccuracyReport(mean("overall_zs"), mean("known_zs"), mean("novel_zs"),
                               first.zero_shot.n_known, first.zero_shot.n_novel)
    fine_tune = AccuracyReport(mean("overall_ft"), mean("known_ft"), mean("novel_ft"),
                               first.zero_shot.n_known, first.zero_shot.n_novel)
    return EpisodeReport(
        policy=policy,
        zero_shot=zero_shot,
        fine_tune=fine_tune,
        n_valid_q=mean("n_valid_q"),
        n_knowledge=mean("n_knowledge"),
        seeds=tuple(s for report in reports for s in report.seeds),
        std={column: std(column) for column in METRIC_COLUMNS},
    )


def compare_policies(world: World, classifier: ObjectClassifier, seeds,
                     config: EpisodeConfig = EpisodeConfig()) -> list[EpisodeReport]:
    """Baseline, all-conf, all-exp, random (mean and std over ``seeds``) and ours, in that order.

    Single-seed rows use the first seed.
    """
    seeds = [int(seed) for seed in seeds]
    if len(seeds) < MIN_RANDOM_SEEDS:
        raise ExperimentError(
            f"the random policy needs at least {MIN_RANDOM_SEEDS} seeds to report mean and std, got {len(seeds)}"
        )
    first = seeds[0]
    rows = [run_baseline(world, classifier)]
    rows.append(run_episode(world, classifier, "all-conf", first, config).report)
    rows.append(run_episode(world, classifier, "all-exp", first, config).report)
    rows.append(aggregate((run_episode(world, classifier, "random", seed, config).report for seed in seeds), "random"))
    rows.append(run_episode(world, classifier, "ours", first, config).report)
    return rows


# ======================================================================
# Artefacts
# ======================================================================


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    if isinstance(value, float):
        return f"{value:.6f}" if math.isfinite(value) else ""
    return str(value)


def report_csv(reports) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for report in reports:
        row = report.to_row()
        writer.writerow([_cell(row[column]) for column in REPORT_COLUMNS])
    return buffer.getvalue()


def report_document(reports) -> str:
    document = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "rows": [r.to_row() for r in reports]}
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def audit_jsonl(records) -> str:
    return "".join(json.dumps(record, sort_keys=True) + "\n" for record in records)


def _write(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return path


def write_report(reports, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {
        "report_csv": _write(out_dir / "report.csv", report_csv(reports)),
        "report_json": _write(out_dir / "report.json", report_document(reports)),
    }


def write_episode(result: EpisodeResult, out_dir, baseline: EpisodeReport | None = None) -> dict:
    """Report files (baseline row first when given), the audit log and the ``K⁺`` triplet file."""
    out_dir = Path(out_dir)
    rows = [baseline, result.report] if baseline is not None else [result.report]
    paths = write_report(rows, out_dir)
    paths["audit"] = _write(out_dir / "audit.jsonl", audit_jsonl(result.audit))
    paths["knowledge"] = result.knowledge.save(out_dir / "knowledge.tsv")
    return paths
