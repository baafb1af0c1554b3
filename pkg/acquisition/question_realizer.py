"""Template question realisation with a per-mode corruption model.

A question names its region symbolically ("in region r3") and carries the
claimed box alongside. Corruption either points the question at another region
of the same image or renders it with another relation's frame; the target
pattern itself is never altered.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .knowledge_store import MASK, MaskedTriplet
from .question_policy import Mode

if TYPE_CHECKING:
    from .world_generator import Image, ObjectInstance

logger = logging.getLogger(__name__)

REALIZE_STREAM = 501

REGION_REF = "in region {region_id}"

# relation -> (confirmation frame, exploration frame)
TEMPLATES = {
    "IsA": ("What is the {tail} {region}?", "What kind of thing is the object {region}?"),
    "UsedFor": ("What is used for {tail} {region}?", "What is the object {region} used for?"),
    "MadeOf": ("What is made of {tail} {region}?", "What is the object {region} made of?"),
    "AtLocation": ("What can be found at {tail} {region}?", "Where would you find the object {region}?"),
    "HasA": ("What has {tail} {region}?", "What does the object {region} have?"),
    "CapableOf": ("What is capable of {tail} {region}?", "What can the object {region} do?"),
}


class RealizationError(ValueError):
    """Raised for a relation without templates or a target that does not fit its mode."""


@dataclass(frozen=True)
class NoiseParams:
    p_confirmation: float = 0.05
    p_exploration: float = 0.45

    def __post_init__(self):
        for name in ("p_confirmation", "p_exploration"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def none(cls) -> "NoiseParams":
        return cls(0.0, 0.0)

    def probability(self, mode: Mode) -> float:
        return self.p_confirmation if mode is Mode.CONFIRMATION else self.p_exploration


@dataclass(frozen=True)
class Question:
    id: str
    image_id: str
    region_id: str  # claimed region
    region_box: object  # claimed RegionBox
    mode: Mode
    target: MaskedTriplet
    surface: str
    target_object_id: str
    corrupted: bool = False  # ground truth for tests and audits; the oracle never reads it

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "image_id": self.image_id,
            "region_id": self.region_id,
            "region_box": list(self.region_box.as_tuple()),
            "mode": self.mode.value,
            "relation": self.target.relation,
            "tail": self.target.tail if self.target.tail is not None else MASK,
            "surface": self.surface,
            "target_object_id": self.target_object_id,
            "corrupted": self.corrupted,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Question":
        from .oracle_answerer import RegionBox

        tail = None if record["tail"] == MASK else record["tail"]
        return cls(
            id=record["id"],
            image_id=record["image_id"],
            region_id=record["region_id"],
            region_box=RegionBox(*record["region_box"]),
            mode=Mode(record["mode"]),
            target=MaskedTriplet(record["relation"], tail),
            surface=record["surface"],
            target_object_id=record["target_object_id"],
            corrupted=bool(record.get("corrupted", False)),
        )


def templates(relation: str) -> tuple[str, str]:
    try:
        return TEMPLATES[relation]
    except KeyError:
        raise RealizationError(f"no question template for relation {relation!r}") from None


def render(mode: Mode, relation: str, tail: str | None, region_id: str) -> str:
    confirmation, exploration = templates(relation)
    region = REGION_REF.format(region_id=region_id)
    if mode is Mode.CONFIRMATION:
        return confirmation.format(tail=tail, region=region)
    return exploration.format(region=region)


def _check_target(target: MaskedTriplet, mode: Mode):
    templates(target.relation)
    if mode is Mode.CONFIRMATION and target.is_exploration:
        raise RealizationError("confirmation question needs an unmasked tail")
    if mode is Mode.EXPLORATION and not target.is_exploration:
        raise RealizationError("exploration question needs a masked tail")


def realize(target: MaskedTriplet, obj: "ObjectInstance", image: "Image", mode: Mode,
            noise: NoiseParams, rng, question_id: str | None = None) -> Question:
    """Render one question about ``obj``; ``rng`` is the question's own sampling stream."""
    mode = Mode(mode)
    _check_target(target, mode)
    region_id, box, relation = obj.region_id, obj.region, target.relation
    corrupted = False
    if rng.random() < noise.probability(mode):
        other_regions = [r for r in image.regions if r.id != obj.region_id]
        other_frames = sorted(r for r in TEMPLATES if r != target.relation)
        kinds = [kind for kind, options in (("region", other_regions), ("frame", other_frames)) if options]
        if kinds:
            kind = kinds[int(rng.integers(len(kinds)))]
            if kind == "region":
                swapped = other_regions[int(rng.integers(len(other_regions)))]
                region_id, box = swapped.id, swapped.box
            else:
                relation = other_frames[int(rng.integers(len(other_frames)))]
            corrupted = True
            logger.debug("Corrupted question for %s by %s swap", obj.id, kind)
    return Question(
        id=question_id or f"q-{obj.id}",
        image_id=obj.image_id,
        region_id=region_id,
        region_box=box,
        mode=mode,
        target=target,
        surface=render(mode, relation, target.tail, region_id),
        target_object_id=obj.id,
        corrupted=corrupted,
    )
