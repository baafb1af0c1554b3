"""Knowledge source: a set of ⟨head, relation, tail⟩ triplets with pattern indexes.

The classifier's knowledge source ``K`` and the world's oracle knowledge base are
both ``KnowledgeSource`` instances. Reads (``lookup_heads``, ``match``,
``relation_frequencies``) never mutate; ``insert`` and ``merge`` need exclusive
access, which the experiment harness guarantees by running a read-only scoring
phase before a single-writer expansion phase.
"""
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

MASK = "[MASK]"

DEFAULT_RELATIONS = ("UsedFor", "IsA", "MadeOf", "AtLocation", "HasA", "CapableOf")


class KnowledgeError(Exception):
    """Base class for knowledge source failures."""


class InvalidTriplet(KnowledgeError):
    """Raised when a triplet has an empty field or a relation outside the vocabulary."""


class EmptyKnowledgeSource(KnowledgeError):
    """Raised when an operation needs at least one triplet."""


class KnowledgeFileError(KnowledgeError):
    """Raised when a triplet file line cannot be parsed."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def normalize_phrase(value) -> str:
    """Trim, collapse internal whitespace and lowercase."""
    return " ".join(str(value or "").split()).lower()


def canonical_relation(relation, vocabulary=DEFAULT_RELATIONS) -> str:
    """Return the vocabulary spelling of ``relation`` (matched case-insensitively)."""
    wanted = normalize_phrase(relation)
    for candidate in vocabulary:
        if candidate.lower() == wanted:
            return candidate
    raise InvalidTriplet(f"relation {relation!r} is not in the vocabulary ({', '.join(vocabulary)})")


@dataclass(frozen=True, order=True)
class Triplet:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            if not getattr(self, name):
                raise InvalidTriplet(f"triplet field {name!r} is empty")

    @classmethod
    def create(cls, head, relation, tail, vocabulary=DEFAULT_RELATIONS) -> "Triplet":
        """Build a normalised triplet, validating the relation against ``vocabulary``."""
        head, tail = normalize_phrase(head), normalize_phrase(tail)
        if not head or not tail or not normalize_phrase(relation):
            raise InvalidTriplet(f"triplet has an empty field: ({head!r}, {relation!r}, {tail!r})")
        return cls(head, canonical_relation(relation, vocabulary), tail)

    @property
    def pair(self):
        return self.relation, self.tail

    def __str__(self):
        return f"<{self.head}, {self.relation}, {self.tail}>"


@dataclass(frozen=True)
class MaskedTriplet:
    """Question target with the head masked: ``[MASK, r, t]`` or ``[MASK, r, MASK]``.

    ``tail`` is ``None`` for the exploration pattern.
    """

    relation: str
    tail: str | None = None

    @property
    def head(self):
        return MASK

    @property
    def is_exploration(self):
        return self.tail is None

    @classmethod
    def confirmation(cls, relation, tail) -> "MaskedTriplet":
        if not tail:
            raise InvalidTriplet("confirmation pattern needs an unmasked tail")
        return cls(relation, tail)

    @classmethod
    def exploration(cls, relation) -> "MaskedTriplet":
        return cls(relation, None)

    @property
    def pair(self):
        return self.relation, self.tail

    def __str__(self):
        return f"[{MASK}, {self.relation}, {self.tail if self.tail is not None else MASK}]"


@dataclass(frozen=True)
class MergeStats:
    added: int
    duplicates: int


class KnowledgeSource:
    """Set of triplets plus ``(relation, tail) -> heads`` and ``head -> triplets`` indexes."""

    def __init__(self, triplets: Iterable[Triplet] = (), vocabulary=DEFAULT_RELATIONS):
        self.vocabulary = tuple(vocabulary)
        self.entries: set[Triplet] = set()
        self.index_rt: dict[tuple[str, str], set[str]] = defaultdict(set)
        self.index_head: dict[str, set[Triplet]] = defaultdict(set)
        # bumped on every mutation; readers use it to invalidate derived caches
        self.version = 0
        for triplet in triplets:
            self.insert(triplet)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, triplet):
        return triplet in self.entries

    def __iter__(self):
        return iter(sorted(self.entries))

    def __eq__(self, other):
        if not isinstance(other, KnowledgeSource):
            return NotImplemented
        return self.entries == other.entries

    def __repr__(self):
        return f"KnowledgeSource({len(self.entries)} triplets, {len(self.index_head)} heads)"

    @property
    def heads(self) -> set[str]:
        return set(self.index_head)

    def pairs(self) -> list[tuple[str, str]]:
        """Distinct ``(relation, tail)`` pairs in canonical order."""
        return sorted(self.index_rt)

    def copy(self) -> "KnowledgeSource":
        return KnowledgeSource(self.entries, vocabulary=self.vocabulary)

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def validate(self, triplet: Triplet) -> Triplet:
        """Return the canonical form of ``triplet`` or raise ``InvalidTriplet``."""
        if not isinstance(triplet, Triplet):
            raise InvalidTriplet(f"expected a Triplet, got {type(triplet).__name__}")
        return Triplet.create(triplet.head, triplet.relation, triplet.tail, self.vocabulary)

    def insert(self, triplet: Triplet) -> bool:
        triplet = self.validate(triplet)
        if triplet in self.entries:
            return False
        self.entries.add(triplet)
        self.index_rt[triplet.pair].add(triplet.head)
        self.index_head[triplet.head].add(triplet)
        self.version += 1
        return True

    def merge(self, acquired: Iterable[Triplet]) -> MergeStats:
        """K⁺ = K ∪ K′. Any invalid triplet aborts the merge before anything is written."""
        canonical = {self.validate(triplet) for triplet in acquired}
        duplicates = len(canonical & self.entries)
        for triplet in sorted(canonical - self.entries):
            self.insert(triplet)
        stats = MergeStats(added=len(canonical) - duplicates, duplicates=duplicates)
        logger.info("Merged acquired knowledge: added=%d duplicates=%d total=%d",
                    stats.added, stats.duplicates, len(self.entries))
        return stats

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def lookup_heads(self, relation, tail) -> set[str]:
        try:
            relation = canonical_relation(relation, self.vocabulary)
        except InvalidTriplet:
            return set()
        return set(self.index_rt.get((relation, normalize_phrase(tail)), ()))

    def match(self, pattern: MaskedTriplet) -> set[Triplet]:
        try:
            relation = canonical_relation(pattern.relation, self.vocabulary)
        except InvalidTriplet:
            return set()
        if pattern.is_exploration:
            return {t for t in self.entries if t.relation == relation}
        tail = normalize_phrase(pattern.tail)
        return {Triplet(head, relation, tail) for head in self.lookup_heads(relation, tail)}

    def triplets_for(self, head) -> set[Triplet]:
        return set(self.index_head.get(normalize_phrase(head), ()))

    def relation_frequencies(self) -> dict[str, float]:
        if not self.entries:
            raise EmptyKnowledgeSource("relation frequencies are undefined for an empty knowledge source")
        counts = Counter(t.relation for t in self.entries)
        total = len(self.entries)
        return {relation: counts[relation] / total for relation in sorted(counts)}

    # ------------------------------------------------------------------
    # Triplet file
    # ------------------------------------------------------------------

    def dumps(self) -> str:
        return "".join(f"{t.head}\t{t.relation}\t{t.tail}\n" for t in sorted(self.entries))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str, vocabulary=DEFAULT_RELATIONS) -> "KnowledgeSource":
        source = cls(vocabulary=vocabulary)
        duplicates = 0
        for line_number, line in enumerate(text.split("\n"), start=1):
            line = line.rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KnowledgeFileError(line_number, f"expected 3 tab-separated fields, found {len(fields)}")
            try:
                triplet = Triplet.create(*fields, vocabulary=vocabulary)
            except InvalidTriplet as exc:
                raise KnowledgeFileError(line_number, str(exc)) from exc
            if not source.insert(triplet):
                duplicates += 1
        if duplicates:
            logger.warning("Deduplicated %d repeated triplet line(s) while loading knowledge", duplicates)
        return source

    @classmethod
    def load(cls, path, vocabulary=DEFAULT_RELATIONS) -> "KnowledgeSource":
        with open(path, encoding="utf-8") as handle:
            return cls.loads(handle.read(), vocabulary=vocabulary)
