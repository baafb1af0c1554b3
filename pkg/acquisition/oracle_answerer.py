"""Oracle answering: parse a question, run the validity gates, look up knowledge.

A question is valid when three gates pass: the head predicted for the claimed
region matches the target object's label, the parsed relation matches the
target relation, and the claimed region covers the target region with IoBB
above the threshold. Valid questions are answered from the oracle knowledge
source only, so the oracle never invents knowledge.
"""
import logging
import math
import re
import zlib
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .knowledge_store import DEFAULT_RELATIONS, InvalidTriplet, KnowledgeSource, Triplet, normalize_phrase
from .question_policy import Mode
from .question_realizer import REGION_REF, TEMPLATES, Question

if TYPE_CHECKING:
    from .world_generator import World

logger = logging.getLogger(__name__)

REGION_THRESHOLD = 0.4
HEAD_STREAM = 601
MAX_ATTEMPTS = 3


class OracleError(Exception):
    """Base class for oracle failures."""


class ParseError(OracleError):
    """Raised when a surface matches no template frame, or more than one."""


class EmptyImage(OracleError):
    """Raised when the head gate is asked about an image without objects."""


class ChannelClosed(OracleError):
    """Raised when the interactive channel reaches end of input."""


class InvalidBox(OracleError, ValueError):
    pass


@dataclass(frozen=True)
class RegionBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise InvalidBox(f"box has a non-finite coordinate: {values}")
        if self.x < 0 or self.y < 0:
            raise InvalidBox(f"box origin must be non-negative: {values}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBox(f"box sides must be positive: {values}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self):
        return self.x, self.y, self.w, self.h

    def within(self, width, height) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def translated(self, dx, dy) -> "RegionBox":
        return RegionBox(self.x + dx, self.y + dy, self.w, self.h)


def _overlap(start, size, other_start, other_size) -> float:
    """Length shared by two intervals; exact when one contains the other."""
    end, other_end = start + size, other_start + other_size
    if start <= other_start and other_end <= end:
        return other_size
    if other_start <= start and end <= other_end:
        return size
    return max(0.0, min(end, other_end) - max(start, other_start))


def iobb(predicted: RegionBox, target: RegionBox) -> float:
    """Intersection area over the target box area."""
    if predicted == target:
        return 1.0
    overlap_w = _overlap(predicted.x, predicted.w, target.x, target.w)
    overlap_h = _overlap(predicted.y, predicted.h, target.y, target.h)
    if overlap_w <= 0 or overlap_h <= 0:
        return 0.0
    return min(1.0, (overlap_w * overlap_h) / target.area)


def region_gate(predicted: RegionBox, target: RegionBox, threshold: float = REGION_THRESHOLD):
    value = iobb(predicted, target)
    return value, value > threshold


def relation_gate(parsed_relation: str, target_relation: str) -> bool:
    return parsed_relation == target_relation


# ======================================================================
# Parsing
# ======================================================================


@dataclass(frozen=True)
class Parsed:
    mode: Mode
    relation: str
    tail: str | None
    region_id: str


def _frame_pattern(frame: str) -> re.Pattern:
    prefix, _, suffix = REGION_REF.partition("{region_id}")
    region = re.escape(prefix) + r"(?P<region>[^\s?]+)" + re.escape(suffix)
    parts = re.split(r"(\{tail\}|\{region\})", frame)
    pieces = []
    for part in parts:
        if part == "{tail}":
            pieces.append(r"(?P<tail>.+?)")
        elif part == "{region}":
            pieces.append(region)
        else:
            pieces.append(re.escape(part))
    return re.compile("^" + "".join(pieces) + "$")


FRAME_PATTERNS = [
    (mode, relation, _frame_pattern(frame))
    for relation, frames in sorted(TEMPLATES.items())
    for mode, frame in zip((Mode.CONFIRMATION, Mode.EXPLORATION), frames)
]


def parse(surface: str) -> Parsed:
    surface = " ".join(str(surface).split())
    matches = []
    for mode, relation, pattern in FRAME_PATTERNS:
        found = pattern.match(surface)
        if found:
            tail = found.group("tail") if mode is Mode.CONFIRMATION else None
            matches.append(Parsed(mode, relation, tail, found.group("region")))
    if not matches:
        raise ParseError(f"no question frame matches {surface!r}")
    if len(matches) > 1:
        raise ParseError(f"ambiguous question {surface!r} matches {len(matches)} frames")
    return matches[0]


# ======================================================================
# Gates and answers
# ======================================================================


@dataclass(frozen=True)
class OracleConfig:
    head_error_rate: float = 0.02
    region_threshold: float = REGION_THRESHOLD
    confirmation_tail_fallback: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.head_error_rate <= 1.0:
            raise ValueError(f"head_error_rate must lie in [0, 1], got {self.head_error_rate}")
        if not 0.0 <= self.region_threshold < 1.0:
            raise ValueError("region_threshold must lie in [0, 1)")


@dataclass(frozen=True)
class GateReport:
    head_valid: bool = False
    relation_valid: bool = False
    region_valid: bool = False
    predicted_head: str | None = None
    predicted_relation: str | None = None
    iobb: float | None = None  # None when the question did not parse

    @property
    def valid(self):
        return self.head_valid and self.relation_valid and self.region_valid

    def failed_gates(self) -> list[str]:
        return [name for name in ("head", "relation", "region") if not getattr(self, f"{name}_valid")]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Answer:
    # A valid confirmation about an unknown tail answers with no triplets unless the tail fallback is on.
    question_id: str
    triplets: frozenset = field(default_factory=frozenset)
    report: GateReport | None = None

    valid = True


@dataclass(frozen=True)
class Rejection:
    question_id: str
    reason: str
    report: GateReport | None = None

    valid = False


def head_gate(objects, claimed: RegionBox, target_head: str, labels, error_rate: float, rng):
    """Label of the object whose region is ``claimed``, else the one it covers best; flipped with probability ``error_rate``.

    Returns ``(predicted head, valid)``; valid iff it equals ``target_head``.
    """
    objects = list(objects)
    if not objects:
        raise EmptyImage("head gate needs an image with at least one object")
    exact = [i for i, obj in enumerate(objects) if obj.region == claimed]
    if exact:
        best = exact[0]
    else:
        best = max(
            range(len(objects)),
            key=lambda i: (iobb(claimed, objects[i].region), iobb(objects[i].region, claimed), -i),
        )
    predicted = objects[best].truth_head
    if rng.random() < error_rate:
        wrong = sorted(set(labels) - {predicted})
        if wrong:
            predicted = wrong[int(rng.integers(len(wrong)))]
    return predicted, predicted == target_head


def _question_rng(config: OracleConfig, question_id: str):
    return np.random.default_rng([config.seed, HEAD_STREAM, zlib.crc32(question_id.encode("utf-8"))])


def answer(question: Question, oracle_kb: KnowledgeSource, world: "World",
           config: OracleConfig = OracleConfig(), rng=None):
    """Answer ``question`` from ``oracle_kb`` or reject it with the gate report."""
    rng = rng if rng is not None else _question_rng(config, question.id)
    try:
        parsed = parse(question.surface)
    except ParseError as exc:
        logger.debug("Rejecting %s: %s", question.id, exc)
        return Rejection(question.id, "parse", GateReport())

    image = world.images[question.image_id]
    target = world.objects[question.target_object_id]
    try:
        claimed = image.region(parsed.region_id).box
    except KeyError:
        return Rejection(question.id, "parse", GateReport(predicted_relation=parsed.relation))

    try:
        predicted_head, head_valid = head_gate(
            world.objects_in(image), claimed, target.truth_head, world.heads, config.head_error_rate, rng
        )
    except EmptyImage:
        logger.error("Head gate failed for %s", question.id, exc_info=True)
        predicted_head, head_valid = None, False
    value, region_valid = region_gate(claimed, target.region, config.region_threshold)
    report = GateReport(
        head_valid=head_valid,
        relation_valid=relation_gate(parsed.relation, question.target.relation),
        region_valid=region_valid,
        predicted_head=predicted_head,
        predicted_relation=parsed.relation,
        iobb=value,
    )
    if not report.valid:
        return Rejection(question.id, "+".join(report.failed_gates()), report)

    head = target.truth_head
    by_relation = {t for t in oracle_kb.triplets_for(head) if t.relation == parsed.relation}
    if parsed.mode is Mode.CONFIRMATION:
        asked = Triplet(head, parsed.relation, normalize_phrase(parsed.tail))
        if asked in oracle_kb:
            triplets = {asked}
        else:
            triplets = by_relation if config.confirmation_tail_fallback else set()
    else:
        triplets = by_relation
    return Answer(question.id, frozenset(triplets), report)


def audit_record(question: Question, outcome) -> dict:
    """One audit line: the question, its gate report, the outcome and any returned knowledge."""
    report = outcome.report or GateReport()
    triplets = sorted(outcome.triplets) if outcome.valid else []
    return {
        "question": question.to_record(),
        "gates": report.to_dict(),
        "outcome": "answer" if outcome.valid else "rejection",
        "reason": None if outcome.valid else outcome.reason,
        "triplets": [[t.head, t.relation, t.tail] for t in triplets],
    }


# ======================================================================
# Human oracle
# ======================================================================


def interactive_answer(question: Question, read: Callable[[], str], write: Callable[[str], object],
                       vocabulary=DEFAULT_RELATIONS, max_attempts: int = MAX_ATTEMPTS):
    """Ask a person. ``read`` follows ``readline`` semantics: ``""`` means end of input."""
    x, y, w, h = question.region_box.as_tuple()
    write(f"[{question.id}] {question.surface}\n")
    write(f"  image {question.image_id}, region {question.region_id} at x={x:g} y={y:g} w={w:g} h={h:g}\n")
    for attempt in range(1, max_attempts + 1):
        write("  answer as head<TAB>relation<TAB>tail, or 'reject': ")
        line = read()
        if line == "" or line is None:
            raise ChannelClosed(f"input closed while answering {question.id}")
        line = line.rstrip("\r\n")
        if line.strip().lower() == "reject":
            return Rejection(question.id, "rejected")
        fields = line.split("\t")
        if len(fields) == 3:
            try:
                triplet = Triplet.create(*fields, vocabulary=vocabulary)
                return Answer(question.id, frozenset({triplet}))
            except InvalidTriplet as exc:
                problem = str(exc)
        else:
            problem = f"expected 3 tab-separated fields, found {len(fields)}"
        write(f"  invalid answer ({problem}); attempt {attempt} of {max_attempts}\n")
    return Rejection(question.id, "malformed")
