"""Question-mode policies.

The expected-utility policy compares, per instance, the confirmation utility
``conf + sim`` with the exploration utility ``1 + E[I]`` and asks a
confirmation question on ties. The fixed and random policies are the
comparison baselines.
"""
import enum
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .knowledge_store import KnowledgeSource, MaskedTriplet

logger = logging.getLogger(__name__)

RELATION_STREAM = 401
RANDOM_POLICY_STREAM = 402


class PolicyError(ValueError):
    """Raised for an unknown policy name or an invalid policy context."""


class Mode(str, enum.Enum):
    CONFIRMATION = "confirmation"
    EXPLORATION = "exploration"

    @property
    def label(self):
        return self.value.capitalize()


@dataclass(frozen=True)
class PolicyContext:
    mean_sim: float
    relation_dist: dict = field(hash=False)
    seed: int = 0

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.mean_sim <= 1.0 + 1e-9:
            raise PolicyError(f"mean similarity must lie in [-1, 1], got {self.mean_sim}")
        if not self.relation_dist:
            raise PolicyError("relation distribution is empty")
        if any(weight < 0 for weight in self.relation_dist.values()):
            raise PolicyError("relation distribution has a negative weight")
        if abs(sum(self.relation_dist.values()) - 1.0) > 1e-6:
            raise PolicyError("relation distribution must sum to 1")
        object.__setattr__(self, "relation_dist", dict(sorted(self.relation_dist.items())))

    @classmethod
    def from_training(cls, classifier, train_objects, source: KnowledgeSource, seed: int = 0) -> "PolicyContext":
        """E[I] from the train split, relation proportions from the training knowledge."""
        return cls(
            mean_sim=estimate_mean_similarity(train_objects, source, classifier),
            relation_dist=source.relation_frequencies(),
            seed=seed,
        )

    def sample_relation(self, index: int) -> str:
        """r* for instance ``index``; each index owns its own sampling stream."""
        relations = list(self.relation_dist)
        weights = np.array([self.relation_dist[r] for r in relations])
        rng = np.random.default_rng([self.seed, RELATION_STREAM, index])
        return relations[int(rng.choice(len(relations), p=weights / weights.sum()))]


def estimate_mean_similarity(train_objects, source: KnowledgeSource, classifier) -> float:
    """Mean rank-1 similarity over the train split."""
    train_objects = list(train_objects)
    if not train_objects:
        raise PolicyError("cannot estimate mean similarity from an empty train set")
    predictions = classifier.top_predictions(train_objects, source)
    mean = float(np.mean([prediction.sim for prediction in predictions]))
    logger.info("Estimated mean training similarity %.6f over %d objects", mean, len(train_objects))
    return mean


def utility(mode: Mode, conf: float, sim: float, ctx: PolicyContext) -> float:
    """Correctness plus informativeness; exploration correctness is fixed at 1."""
    if mode is Mode.CONFIRMATION:
        return conf + sim
    return 1.0 + ctx.mean_sim


def select_mode(prediction, ctx: PolicyContext, index: int = 0):
    """Return ``(mode, target)`` maximising utility for one rank-1 prediction."""
    confirm = utility(Mode.CONFIRMATION, prediction.conf, prediction.sim, ctx)
    explore = utility(Mode.EXPLORATION, prediction.conf, prediction.sim, ctx)
    mode = Mode.CONFIRMATION if confirm >= explore else Mode.EXPLORATION
    return mode, build_target(mode, prediction, ctx, index)


def build_target(mode: Mode, prediction, ctx: PolicyContext, index: int) -> MaskedTriplet:
    if mode is Mode.CONFIRMATION:
        return MaskedTriplet.confirmation(prediction.relation, prediction.tail)
    return MaskedTriplet.exploration(ctx.sample_relation(index))


class QuestionPolicy(ABC):
    name = ""

    @abstractmethod
    def decide(self, prediction, ctx: PolicyContext, index: int) -> Mode:
        """Mode for instance ``index``."""

    def plan(self, predictions, ctx: PolicyContext, start: int = 0) -> list[tuple[Mode, MaskedTriplet]]:
        """``(mode, target)`` per rank-1 prediction, in input order; instance indexes begin at ``start``."""
        plan = []
        for index, prediction in enumerate(predictions, start=start):
            mode = self.decide(prediction, ctx, index)
            plan.append((mode, build_target(mode, prediction, ctx, index)))
        return plan

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class ExpectedUtilityPolicy(QuestionPolicy):
    """Per-instance argmax of the branch utilities, or one mode for the whole set with ``global_mode``."""

    name = "ours"

    def __init__(self, global_mode: bool = False):
        self.global_mode = global_mode

    def decide(self, prediction, ctx, index):
        return select_mode(prediction, ctx, index)[0]

    def plan(self, predictions, ctx, start=0):
        predictions = list(predictions)
        if not self.global_mode or not predictions:
            return super().plan(predictions, ctx, start)
        confirm = float(np.mean([utility(Mode.CONFIRMATION, p.conf, p.sim, ctx) for p in predictions]))
        explore = utility(Mode.EXPLORATION, 0.0, 0.0, ctx)
        mode = Mode.CONFIRMATION if confirm >= explore else Mode.EXPLORATION
        logger.info("Global mode %s (confirmation=%.4f exploration=%.4f)", mode.value, confirm, explore)
        return [(mode, build_target(mode, p, ctx, index)) for index, p in enumerate(predictions, start=start)]


class FixedModePolicy(QuestionPolicy):
    def __init__(self, mode: Mode):
        self.mode = Mode(mode)
        self.name = "all-conf" if self.mode is Mode.CONFIRMATION else "all-exp"

    def decide(self, prediction, ctx, index):
        return self.mode


class RandomModePolicy(QuestionPolicy):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def decide(self, prediction, ctx, index):
        draw = np.random.default_rng([self.seed, RANDOM_POLICY_STREAM, index]).random()
        return Mode.CONFIRMATION if draw < 0.5 else Mode.EXPLORATION


def forced_mode(mode, seed: int = 0) -> QuestionPolicy:
    """Baseline policy: a fixed ``Mode``, or ``"random"`` for a seeded fair coin per instance."""
    if mode == "random":
        return RandomModePolicy(seed)
    try:
        return FixedModePolicy(Mode(mode))
    except ValueError as exc:
        raise PolicyError(f"unknown forced mode {mode!r}") from exc


POLICIES = {
    "ours": lambda seed, global_mode: ExpectedUtilityPolicy(global_mode=global_mode),
    "all-conf": lambda seed, global_mode: FixedModePolicy(Mode.CONFIRMATION),
    "all-exp": lambda seed, global_mode: FixedModePolicy(Mode.EXPLORATION),
    "random": lambda seed, global_mode: RandomModePolicy(seed),
}


def build_policy(name: str, seed: int = 0, global_mode: bool = False) -> QuestionPolicy:
    try:
        factory = POLICIES[name]
    except KeyError:
        raise PolicyError(f"unknown policy {name!r}; valid policies: {', '.join(POLICIES)}") from None
    return factory(seed, global_mode)
