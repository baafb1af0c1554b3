"""Knowledge-retrieval object classifier.

Recognition scores every ``(relation, tail)`` pair in the knowledge source
against the projected object feature, then resolves the best pair to a head
label by lookup. Labels are therefore limited to ``heads(K)``: growing ``K``
is the only way to recognise new objects.
"""
import logging
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .embedding_space import (
    DEFAULT_TEMPERATURE,
    ConceptTable,
    DegenerateProjection,
    Projection,
    TrainingBatch,
    encode_objects,
    loss_and_gradient,
    sigmoid,
    train_step,
)
from .knowledge_store import KnowledgeSource, MaskedTriplet, Triplet

if TYPE_CHECKING:
    from .world_generator import ObjectInstance

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 301
NEGATIVE_STREAM = 302


class ClassifierError(Exception):
    """Base class for recognition failures."""


class NoKnowledgeToScore(ClassifierError):
    def __init__(self):
        super().__init__("no knowledge to score")


class UnresolvableKnowledge(ClassifierError):
    def __init__(self):
        super().__init__("knowledge source unresolvable")


class EmptyDataset(ClassifierError):
    """Raised when evaluation or training receives no objects."""


@dataclass(frozen=True)
class KnowledgePrediction:
    masked: MaskedTriplet
    sim: float
    conf: float
    rank: int

    @property
    def relation(self):
        return self.masked.relation

    @property
    def tail(self):
        return self.masked.tail


@dataclass(frozen=True)
class LabelPrediction:
    head: str
    candidates: frozenset
    score: float
    rank: int = 1  # rank of the knowledge prediction that resolved


@dataclass(frozen=True)
class AccuracyReport:
    """Accuracy over a labelled set; a partition with no members reports ``None``."""

    overall: float
    known: float | None
    novel: float | None
    n_known: int
    n_novel: int

    @property
    def size(self):
        return self.n_known + self.n_novel

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 25
    learning_rate: float = 0.05
    batch_size: int = 32
    temperature: float = DEFAULT_TEMPERATURE
    negatives: int | None = None  # negatives per positive; None scores every other pair
    max_grad_norm: float | None = 5.0
    init_scale: float = 0.05
    balance: bool = True  # positives and negatives carry equal weight per object
    select_best: bool = True  # keep the epoch (the start included) that recognises the training objects best
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.negatives is not None and self.negatives < 1:
            raise ValueError("negatives must be a positive ratio or None")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive or None")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)


FINE_TUNE_CONFIG = TrainingConfig(epochs=20, learning_rate=0.01, negatives=5)


class ObjectClassifier:
    """Projection plus concept table; stateless with respect to the knowledge source."""

    def __init__(self, projection: Projection, concepts: ConceptTable):
        self.projection = projection
        self.concepts = concepts
        self._cached_source = None
        self._cached_version = None
        self._cached_pairs = None
        self._cached_matrix = None

    def _knowledge(self, source: KnowledgeSource):
        if not len(source):
            raise NoKnowledgeToScore()
        if self._cached_source is not source or self._cached_version != source.version:
            self._cached_pairs = source.pairs()
            self._cached_matrix = self.concepts.matrix(self._cached_pairs)
            self._cached_source = source
            self._cached_version = source.version
        return self._cached_pairs, self._cached_matrix

    def similarities(self, objects: Sequence["ObjectInstance"], source: KnowledgeSource):
        """Return ``(pairs, sims)`` with ``sims[i, j] = sim(f_oi, f_kj)``; pairs in canonical order."""
        pairs, matrix = self._knowledge(source)
        features = encode_objects(self.projection, [obj.raw for obj in objects])
        return pairs, features @ matrix.T

    # ------------------------------------------------------------------
    # Recognition
    # ------------------------------------------------------------------

    def score_all(self, obj: "ObjectInstance", source: KnowledgeSource) -> list[KnowledgePrediction]:
        pairs, sims = self.similarities([obj], source)
        return self._rank(pairs, sims[0])

    def top_prediction(self, obj: "ObjectInstance", source: KnowledgeSource) -> KnowledgePrediction:
        return self.top_predictions([obj], source)[0]

    def top_predictions(self, objects, source: KnowledgeSource) -> list[KnowledgePrediction]:
        """Rank-1 prediction per object; ``argmax`` keeps the first of tied pairs, which is canonical order."""
        if not objects:
            return []
        pairs, sims = self.similarities(objects, source)
        best = np.argmax(sims, axis=1)
        return [self._prediction(pairs[j], float(sims[i, j]), 1) for i, j in enumerate(best)]

    def predict_label(self, obj: "ObjectInstance", source: KnowledgeSource) -> LabelPrediction:
        return self.predict_labels([obj], source)[0]

    def predict_labels(self, objects, source: KnowledgeSource) -> list[LabelPrediction]:
        pairs, sims = self.similarities(objects, source)
        return [self._resolve(pairs, row, source) for row in sims]

    def _prediction(self, pair, sim, rank) -> KnowledgePrediction:
        conf = float(sigmoid(self.projection.temperature * sim))
        return KnowledgePrediction(MaskedTriplet.confirmation(*pair), sim, conf, rank)

    def _rank(self, pairs, sims) -> list[KnowledgePrediction]:
        order = sorted(range(len(pairs)), key=lambda j: (-sims[j], pairs[j]))
        return [self._prediction(pairs[j], float(sims[j]), rank) for rank, j in enumerate(order, start=1)]

    def _resolve(self, pairs, sims, source: KnowledgeSource) -> LabelPrediction:
        column = {pair: j for j, pair in enumerate(pairs)}
        confidences = sigmoid(self.projection.temperature * sims)
        order = sorted(range(len(pairs)), key=lambda j: (-sims[j], pairs[j]))
        for rank, j in enumerate(order, start=1):
            candidates = source.lookup_heads(*pairs[j])
            if not candidates:
                continue
            if len(candidates) == 1:
                (head,) = candidates
                return LabelPrediction(head, frozenset(candidates), float(confidences[j]), rank)
            scores = {
                head: float(sum(confidences[column[t.pair]] for t in source.triplets_for(head)))
                for head in candidates
            }
            head = min(candidates, key=lambda h: (-scores[h], h))
            return LabelPrediction(head, frozenset(candidates), scores[head], rank)
        raise UnresolvableKnowledge()

    def evaluate(self, dataset, source: KnowledgeSource, known_heads) -> AccuracyReport:
        dataset = list(dataset)
        if not dataset:
            raise EmptyDataset("cannot evaluate on an empty dataset")
        known_heads = set(known_heads)
        try:
            predictions = self.predict_labels(dataset, source)
        except (ClassifierError, DegenerateProjection):
            logger.warning("Batch prediction failed; falling back to per-object prediction", exc_info=True)
            predictions = [self._safe_predict(obj, source) for obj in dataset]

        hits = {"known": 0, "novel": 0}
        counts = {"known": 0, "novel": 0}
        for obj, prediction in zip(dataset, predictions):
            partition = "known" if obj.truth_head in known_heads else "novel"
            counts[partition] += 1
            if prediction is not None and prediction.head == obj.truth_head:
                hits[partition] += 1

        def rate(partition):
            return hits[partition] / counts[partition] if counts[partition] else None

        return AccuracyReport(
            overall=(hits["known"] + hits["novel"]) / len(dataset),
            known=rate("known"),
            novel=rate("novel"),
            n_known=counts["known"],
            n_novel=counts["novel"],
        )

    def _safe_predict(self, obj, source):
        try:
            return self.predict_label(obj, source)
        except (ClassifierError, DegenerateProjection):
            return None

    # ------------------------------------------------------------------
    # Training
    # ------------------------------------------------------------------

    @classmethod
    def train(cls, objects, source: KnowledgeSource, concepts: ConceptTable,
              config: TrainingConfig = TrainingConfig(), projection: Projection | None = None):
        """Train a projection on ``objects`` labelled through ``source``; returns ``(classifier, epoch losses)``."""
        objects = list(objects)
        if not objects:
            raise EmptyDataset("cannot train on an empty dataset")
        if projection is None:
            projection = Projection.initialize(
                len(objects[0].raw), concepts.dim, seed=config.seed,
                temperature=config.temperature, scale=config.init_scale,
            )
        examples = [(obj, [t.pair for t in source.triplets_for(obj.truth_head)]) for obj in objects]
        projection, losses = fit(projection, examples, source, concepts, config)
        return cls(projection, concepts), losses

    def fine_tune(self, acquired: Iterable[tuple["ObjectInstance", Triplet]], source: KnowledgeSource,
                  config: TrainingConfig = FINE_TUNE_CONFIG) -> "ObjectClassifier":
        """New classifier trained further on ``(object, acquired triplet)`` pairs; ``self`` is untouched."""
        projection = fine_tune(self.projection, acquired, source, self.concepts, config)
        return ObjectClassifier(projection, self.concepts)


def fine_tune(proj: Projection, acquired, source: KnowledgeSource, concepts: ConceptTable,
              config: TrainingConfig = FINE_TUNE_CONFIG) -> Projection:
    """Acquired triplets are positives for their object; negatives exclude every pair of the object's head."""
    acquired = list(acquired)
    if not acquired:
        raise EmptyDataset("fine-tuning needs at least one acquired (object, triplet) pair")
    grouped, objects = {}, {}
    for obj, triplet in acquired:
        objects[obj.id] = obj
        grouped.setdefault(obj.id, set()).add(triplet)
    examples = []
    for object_id in sorted(grouped):
        triplets = grouped[object_id]
        excluded = {t.pair for triplet in triplets for t in source.triplets_for(triplet.head)}
        examples.append((objects[object_id], sorted(t.pair for t in triplets), excluded))
    projection, _ = fit(proj, examples, source, concepts, config)
    return projection


def fit(proj: Projection, examples, source: KnowledgeSource, concepts: ConceptTable, config: TrainingConfig):
    """Mini-batch gradient descent over ``(object, positive pairs[, excluded pairs])`` examples.

    With ``config.negatives`` unset every non-positive pair of ``source`` is a
    negative; otherwise ``negatives × positives`` are drawn per object and batch.
    With ``config.select_best`` the returned projection is the one, starting
    point included, with the best recognition accuracy on the example objects
    (lower weighted loss breaks ties). Returns ``(projection, epoch losses)``.
    """
    pairs = source.pairs()
    if not pairs:
        raise NoKnowledgeToScore()
    column = {pair: j for j, pair in enumerate(pairs)}
    objects = [example[0] for example in examples]
    raw = np.vstack([np.asarray(obj.raw, dtype=float) for obj in objects])
    labels = np.zeros((len(examples), len(pairs)))
    allowed = np.ones_like(labels, dtype=bool)
    for row, example in enumerate(examples):
        positives = [column[pair] for pair in example[1] if pair in column]
        labels[row, positives] = 1.0
        if len(example) > 2:
            for pair in example[2]:
                if pair in column:
                    allowed[row, column[pair]] = False
        allowed[row, positives] = False

    full_weights = loss_weights(labels, np.maximum(labels, allowed.astype(float)), config.balance)
    selection = TrainingBatch(raw, pairs, labels, full_weights)

    def score(candidate):
        accuracy = ObjectClassifier(candidate, concepts).evaluate(objects, source, known_heads=()).overall
        return accuracy, -loss_and_gradient(candidate, selection, concepts)[0]

    best, best_epoch = proj, 0
    best_score = score(proj) if config.select_best and config.epochs else None
    losses = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, SHUFFLE_STREAM, epoch]).permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            mask = _loss_mask(labels[rows], allowed[rows], config,
                              np.random.default_rng([config.seed, NEGATIVE_STREAM, epoch, start]))
            batch = TrainingBatch(raw[rows], pairs, labels[rows], loss_weights(labels[rows], mask, config.balance))
            proj, loss = train_step(proj, batch, concepts, config.learning_rate, config.max_grad_norm)
            total += loss * len(rows)
        losses.append(total / len(examples))
        logger.info("Epoch %d/%d: loss=%.6f temperature=%.4f", epoch + 1, config.epochs, losses[-1],
                    proj.temperature)
        if best_score is not None:
            current = score(proj)
            if current > best_score:
                best, best_epoch, best_score = proj, epoch + 1, current

    if best_score is None:
        return proj, losses
    logger.info("Selected epoch %d/%d: training accuracy=%.4f", best_epoch, config.epochs, best_score[0])
    return best, losses


def loss_weights(labels, mask, balance: bool = True) -> np.ndarray:
    """Per-entry loss weights; balanced rows split their weight evenly between positives and negatives."""
    mask = np.asarray(mask, dtype=float)
    if not balance:
        return mask
    positive = mask * labels
    negative = mask * (1.0 - labels)
    n_positive = positive.sum(axis=1, keepdims=True)
    n_negative = negative.sum(axis=1, keepdims=True)
    return positive / np.maximum(n_positive, 1.0) + negative / np.maximum(n_negative, 1.0)


def _loss_mask(labels, allowed, config: TrainingConfig, rng) -> np.ndarray:
    mask = labels.copy()
    if config.negatives is None:
        return np.maximum(mask, allowed.astype(float))
    for row in range(len(labels)):
        candidates = np.flatnonzero(allowed[row])
        wanted = min(len(candidates), config.negatives * max(1, int(labels[row].sum())))
        if wanted:
            mask[row, rng.choice(candidates, size=wanted, replace=False)] = 1.0
    return mask
