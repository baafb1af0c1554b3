"""Shared vector space for objects and knowledge.

Object features come from a trainable linear ``Projection`` of raw region
features; knowledge features come from a seeded ``ConceptTable`` keyed by the
head-masked ``(relation, tail)`` pair, so ``<dog, IsA, mammal>`` and
``[MASK, IsA, mammal]`` encode identically. Scores are
``σ(τ · cosine(f_o, f_k))`` with a trained temperature ``τ``.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .knowledge_store import MaskedTriplet, Triplet

logger = logging.getLogger(__name__)

DEFAULT_DIM = 32
DEFAULT_TEMPERATURE = 10.0
MIN_TEMPERATURE = 1e-3
LOG_CLAMP = 1e-12
CHECKPOINT_HEADER = "# curio-projection v1"

# seed-sequence tag of the projection initialiser
INIT_STREAM = 101


class EmbeddingError(Exception):
    """Base class for embedding space failures."""


class ZeroVectorError(EmbeddingError, ValueError):
    """Raised when a direction is requested for a zero vector."""


class UndefinedKnowledgeFeature(EmbeddingError):
    """Raised when a pattern has no tail to encode."""


class DegenerateProjection(EmbeddingError):
    """Raised when the projected object feature is the zero vector."""


class NonFiniteGradient(EmbeddingError):
    """Raised when a training step produces NaN or infinite gradients."""


class CheckpointError(EmbeddingError):
    """Raised when a projection checkpoint cannot be parsed."""


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    norm_u = np.linalg.norm(u)
    norm_v = np.linalg.norm(v)
    if norm_u == 0.0 or norm_v == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    return float(np.dot(u, v) / (norm_u * norm_v))


def sigmoid(x):
    """Numerically stable logistic function over scalars or arrays."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    positive = flat >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-flat[positive]))
    exp_x = np.exp(flat[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out.reshape(x.shape)


def confidence(sim, temperature) -> float:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return float(sigmoid(temperature * float(sim)))


def binary_cross_entropy(probabilities, labels) -> float:
    """Summed BCE over items, with log arguments clamped to ``LOG_CLAMP``."""
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=float)
    losses = -(y * np.log(np.maximum(p, LOG_CLAMP)) + (1.0 - y) * np.log(np.maximum(1.0 - p, LOG_CLAMP)))
    return float(np.sum(losses))


# ======================================================================
# Knowledge side
# ======================================================================


class ConceptTable:
    """Deterministic unit vectors per ``(relation, tail)``.

    The vector for a pair depends only on ``(seed, dim, relation, tail)``: the
    pair is hashed with SHA-256 (stable across processes) into the seed
    sequence of its own generator.
    """

    def __init__(self, seed: int, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("concept dimension must be positive")
        self.seed = int(seed)
        self.dim = int(dim)
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._fixed = False

    @classmethod
    def from_vectors(cls, vectors: dict, seed: int = 0) -> "ConceptTable":
        """Table with explicit vectors (normalised); unknown pairs raise ``KeyError``."""
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError("all concept vectors must share one dimension")
        table = cls(seed, dims.pop())
        for pair, vector in vectors.items():
            vector = np.asarray(vector, dtype=float)
            norm = np.linalg.norm(vector)
            if norm == 0.0:
                raise ZeroVectorError(f"concept vector for {pair} is zero")
            table._cache[tuple(pair)] = _readonly(vector / norm)
        table._fixed = True
        return table

    def vector(self, relation: str, tail: str) -> np.ndarray:
        key = (relation, tail)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if self._fixed:
            raise KeyError(f"no concept vector for {key}")
        digest = hashlib.sha256(f"{relation}\t{tail}".encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        rng = np.random.default_rng([self.seed, self.dim, *words])
        raw = rng.standard_normal(self.dim)
        vector = _readonly(raw / np.linalg.norm(raw))
        self._cache[key] = vector
        return vector

    def matrix(self, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
        if not pairs:
            return np.zeros((0, self.dim))
        return np.vstack([self.vector(relation, tail) for relation, tail in pairs])


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def encode_knowledge(concepts: ConceptTable, k: MaskedTriplet | Triplet) -> np.ndarray:
    """Feature of the head-masked sentence form; the head never contributes."""
    if k.tail is None:
        raise UndefinedKnowledgeFeature("knowledge feature undefined for fully masked pattern")
    return concepts.vector(k.relation, k.tail)


# ======================================================================
# Object side
# ======================================================================


@dataclass
class Projection:
    """Linear map ``raw (d_raw) -> feature (d)`` plus the score temperature."""

    weights: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE
    steps: int = 0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("projection weights must be a d_raw x d matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("projection weights must be finite")
        self.temperature = float(self.temperature)
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ValueError("temperature must be a positive finite number")

    @property
    def d_raw(self):
        return self.weights.shape[0]

    @property
    def d(self):
        return self.weights.shape[1]

    @classmethod
    def identity(cls, d_raw: int, d: int | None = None, temperature=DEFAULT_TEMPERATURE) -> "Projection":
        return cls(np.eye(d_raw, d if d is not None else d_raw), temperature)

    @classmethod
    def initialize(cls, d_raw: int, d: int, seed: int, temperature=DEFAULT_TEMPERATURE,
                   scale: float = 0.05) -> "Projection":
        """Identity plus seeded gaussian jitter."""
        rng = np.random.default_rng([int(seed), INIT_STREAM])
        return cls(np.eye(d_raw, d) + scale * rng.standard_normal((d_raw, d)), temperature)

    def copy(self) -> "Projection":
        return Projection(self.weights.copy(), self.temperature, self.steps)

    def same_as(self, other: "Projection") -> bool:
        """Bit-identical weights and temperature."""
        return (
            self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
            and self.temperature == other.temperature
        )

    # ------------------------------------------------------------------
    # Checkpoint file
    # ------------------------------------------------------------------

    def dumps(self) -> str:
        lines = [
            CHECKPOINT_HEADER,
            f"d_raw={self.d_raw} d={self.d} temperature={self.temperature:.17g} steps={self.steps}",
        ]
        lines.extend(" ".join(f"{value:.17g}" for value in row) for row in self.weights)
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str) -> "Projection":
        lines = text.splitlines()
        if len(lines) < 2 or lines[0].strip() != CHECKPOINT_HEADER:
            raise CheckpointError(f"missing checkpoint header {CHECKPOINT_HEADER!r}")
        try:
            header = dict(item.split("=", 1) for item in lines[1].split())
            d_raw, d = int(header["d_raw"]), int(header["d"])
            temperature = float(header["temperature"])
            steps = int(header.get("steps", 0))
            rows = [[float(value) for value in line.split()] for line in lines[2:] if line.strip()]
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc
        weights = np.array(rows, dtype=float)
        if weights.shape != (d_raw, d):
            raise CheckpointError(f"checkpoint declares {d_raw}x{d} weights but holds {weights.shape}")
        return cls(weights, temperature, steps)

    @classmethod
    def load(cls, path) -> "Projection":
        with open(path, encoding="utf-8") as handle:
            return cls.loads(handle.read())


def encode_objects(proj: Projection, raws) -> np.ndarray:
    """Row-wise L2-normalised ``raw @ W``."""
    raws = np.atleast_2d(np.asarray(raws, dtype=float))
    if raws.shape[1] != proj.d_raw:
        raise ValueError(f"raw features have length {raws.shape[1]}, projection expects {proj.d_raw}")
    projected = raws @ proj.weights
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateProjection("projection maps an object feature to the zero vector")
    return projected / norms


def encode_object(proj: Projection, raw) -> np.ndarray:
    return encode_objects(proj, raw)[0]


# ======================================================================
# Training objective
# ======================================================================


@dataclass
class TrainingBatch:
    """Objects scored against a shared list of knowledge pairs.

    ``labels[b, i]`` is 1 when pair ``i`` is true of object ``b``;
    ``mask[b, i]`` selects which pairs enter that object's loss term.
    """

    raw: np.ndarray
    pairs: list
    labels: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.raw = np.atleast_2d(np.asarray(self.raw, dtype=float))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=float))
        if self.mask is None:
            self.mask = np.ones_like(self.labels)
        self.mask = np.atleast_2d(np.asarray(self.mask, dtype=float))
        if len(self.raw) == 0:
            raise ValueError("training batch is empty")
        expected = (len(self.raw), len(self.pairs))
        if self.labels.shape != expected or self.mask.shape != expected:
            raise ValueError(f"labels and mask must have shape {expected}")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be binary")

    @classmethod
    def from_examples(cls, examples: Iterable[tuple]) -> "TrainingBatch":
        """Build from ``(raw, [(Triplet | MaskedTriplet, label), ...])`` examples."""
        examples = list(examples)
        pairs = sorted({item.pair for _, knowledge in examples for item, _ in knowledge})
        column = {pair: i for i, pair in enumerate(pairs)}
        labels = np.zeros((len(examples), len(pairs)))
        mask = np.zeros_like(labels)
        for row, (_, knowledge) in enumerate(examples):
            for item, label in knowledge:
                labels[row, column[item.pair]] = label
                mask[row, column[item.pair]] = 1.0
        return cls(np.vstack([np.asarray(raw, dtype=float) for raw, _ in examples]), pairs, labels, mask)


def bce_loss(proj: Projection, raw, knowledge: Sequence[tuple], concepts: ConceptTable) -> float:
    """Summed BCE of one object over labelled knowledge items."""
    if not knowledge:
        raise ValueError("bce_loss needs at least one knowledge item")
    for item, _ in knowledge:
        if item.tail is None:
            raise UndefinedKnowledgeFeature("knowledge feature undefined for fully masked pattern")
    batch = TrainingBatch.from_examples([(raw, knowledge)])
    loss, _, _ = loss_and_gradient(proj, batch, concepts)
    return loss


def loss_and_gradient(proj: Projection, batch: TrainingBatch, concepts: ConceptTable):
    """Return ``(mean per-object loss, dL/dW, dL/dτ)``.

    The clamp only binds when ``τ·sim < -27``; the gradient ignores it.
    """
    knowledge = concepts.matrix(batch.pairs)
    projected = batch.raw @ proj.weights
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateProjection("projection maps an object feature to the zero vector")
    features = projected / norms
    sims = features @ knowledge.T
    probabilities = sigmoid(proj.temperature * sims)

    size = len(batch.raw)
    y = batch.labels
    entry_losses = -(
        y * np.log(np.maximum(probabilities, LOG_CLAMP))
        + (1.0 - y) * np.log(np.maximum(1.0 - probabilities, LOG_CLAMP))
    )
    loss = float(np.sum(batch.mask * entry_losses) / size)

    d_logits = batch.mask * (probabilities - y) / size
    grad_temperature = float(np.sum(d_logits * sims))
    d_features = (proj.temperature * d_logits) @ knowledge
    radial = np.sum(d_features * features, axis=1, keepdims=True)
    d_projected = (d_features - radial * features) / norms
    grad_weights = batch.raw.T @ d_projected
    return loss, grad_weights, grad_temperature


def numerical_gradient(proj: Projection, batch: TrainingBatch, concepts: ConceptTable, step: float = 1e-5):
    """Central finite differences of the batch loss, for checking ``loss_and_gradient``."""
    grad_weights = np.zeros_like(proj.weights)
    for index in np.ndindex(proj.weights.shape):
        plus, minus = proj.copy(), proj.copy()
        plus.weights[index] += step
        minus.weights[index] -= step
        grad_weights[index] = (
            loss_and_gradient(plus, batch, concepts)[0] - loss_and_gradient(minus, batch, concepts)[0]
        ) / (2 * step)
    plus, minus = proj.copy(), proj.copy()
    plus.temperature += step
    minus.temperature -= step
    grad_temperature = (
        loss_and_gradient(plus, batch, concepts)[0] - loss_and_gradient(minus, batch, concepts)[0]
    ) / (2 * step)
    return grad_weights, grad_temperature


def train_step(proj: Projection, batch: TrainingBatch, concepts: ConceptTable, learning_rate: float,
               max_grad_norm: float | None = None):
    """One gradient-descent step; returns ``(updated projection, pre-update loss)``."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    loss, grad_weights, grad_temperature = loss_and_gradient(proj, batch, concepts)
    if not (np.all(np.isfinite(grad_weights)) and np.isfinite(grad_temperature) and np.isfinite(loss)):
        raise NonFiniteGradient(
            f"non-finite gradient at step {proj.steps} (loss={loss}, temperature={proj.temperature})"
        )
    if max_grad_norm is not None:
        total = float(np.sqrt(np.sum(grad_weights ** 2) + grad_temperature ** 2))
        if total > max_grad_norm:
            grad_weights = grad_weights * (max_grad_norm / total)
            grad_temperature = grad_temperature * (max_grad_norm / total)
    updated = Projection(
        proj.weights - learning_rate * grad_weights,
        max(proj.temperature - learning_rate * grad_temperature, MIN_TEMPERATURE),
        proj.steps + 1,
    )
    return updated, loss
