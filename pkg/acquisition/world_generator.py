"""Seeded synthetic worlds: heads, oracle knowledge, images with regions, splits.

A world stands in for an annotated image corpus plus its knowledge base. Object
features are the normalised sum of the concept vectors of the object's oracle
triplets plus gaussian noise, which gives the classifier a learnable and
checkable link between features and knowledge.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding_space import DEFAULT_DIM, ConceptTable
from .knowledge_store import DEFAULT_RELATIONS, KnowledgeSource, Triplet
from .oracle_answerer import RegionBox

logger = logging.getLogger(__name__)

WORLD_FORMAT = "curio-world"
WORLD_VERSION = 1
SPLITS = ("train", "query", "test")

WORLD_STREAM = 201
FEATURE_STREAM = 202

_SYLLABLES = (
    "ba", "ko", "ri", "len", "mo", "ta", "sel", "vi", "du", "ran", "pe", "lo", "zin", "ka", "tor",
    "mi", "gu", "fa", "nel", "sha", "bro", "ti", "quo", "ves", "ar", "dun", "pli", "ser", "om", "cha",
)


class InvalidWorldConfig(ValueError):
    """Raised when a world configuration cannot be generated."""


class WorldFileError(ValueError):
    """Raised when a world file is malformed or has an unknown version."""


def default_relation_dist(relations) -> dict[str, float]:
    """UsedFor ≈ 0.50 and IsA ≈ 0.25 when present; the remaining mass split uniformly."""
    relations = tuple(relations)
    fixed = {r: w for r, w in (("UsedFor", 0.50), ("IsA", 0.25)) if r in relations}
    others = [r for r in relations if r not in fixed]
    if not others:
        total = sum(fixed.values())
        return {r: fixed[r] / total for r in relations}
    remaining = 1.0 - sum(fixed.values())
    return {r: fixed.get(r, remaining / len(others)) for r in relations}


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 7
    d_raw: int = DEFAULT_DIM
    d: int = DEFAULT_DIM
    n_heads: int = 100
    novel_fraction: float = 0.1
    n_images: int = 600
    regions_per_image: tuple = (2, 5)
    triplets_per_head: tuple = (1, 4)
    relations: tuple = DEFAULT_RELATIONS
    relation_dist: tuple = ()  # (relation, weight) pairs; empty means default_relation_dist
    n_tails: int = 120
    feature_noise: float = 0.05
    split_fractions: tuple = (0.60, 0.25, 0.15)
    image_size: tuple = (640.0, 480.0)
    box_size: tuple = (48.0, 320.0)

    def __post_init__(self):
        for name in ("regions_per_image", "triplets_per_head", "relations", "relation_dist",
                     "split_fractions", "image_size", "box_size"):
            value = getattr(self, name)
            if isinstance(value, dict):
                value = tuple(sorted(value.items()))
            object.__setattr__(self, name, tuple(tuple(v) if isinstance(v, list) else v for v in value))
        self._validate()

    def _validate(self):
        if self.n_heads < 2:
            raise InvalidWorldConfig("a world needs at least 2 heads")
        if not self.relations:
            raise InvalidWorldConfig("a world needs at least 1 relation")
        if not 0.0 < self.novel_fraction < 1.0:
            raise InvalidWorldConfig(f"novel_fraction must lie strictly between 0 and 1, got {self.novel_fraction}")
        if not 1 <= self.n_novel < self.n_heads:
            raise InvalidWorldConfig(
                f"infeasible split: {self.n_novel} novel heads out of {self.n_heads} heads "
                "(need at least one novel and one known head)"
            )
        if self.d_raw != self.d:
            raise InvalidWorldConfig("raw features are generated in concept space, so d_raw must equal d")
        if self.d < 2:
            raise InvalidWorldConfig("feature dimension must be at least 2")
        low, high = self.regions_per_image
        if not 2 <= low <= high:
            raise InvalidWorldConfig("regions_per_image must satisfy 2 <= min <= max")
        low, high = self.triplets_per_head
        if not 1 <= low <= high:
            raise InvalidWorldConfig("triplets_per_head must satisfy 1 <= min <= max")
        if self.n_images < len(SPLITS):
            raise InvalidWorldConfig("a world needs at least one image per split")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise InvalidWorldConfig("split_fractions must be three fractions summing to 1")
        if min(self.split_fractions) <= 0:
            raise InvalidWorldConfig("every split needs a positive fraction")
        if self.feature_noise < 0:
            raise InvalidWorldConfig("feature_noise must be non-negative")
        if self.n_tails < len(self.relations):
            raise InvalidWorldConfig("n_tails must give every relation at least one tail")
        width, height = self.image_size
        smallest, largest = self.box_size
        if not 0 < smallest <= largest <= min(width, height):
            raise InvalidWorldConfig("box_size must fit inside the image frame")
        dist = dict(self.relation_dist)
        unknown = set(dist) - set(self.relations)
        if unknown:
            raise InvalidWorldConfig(f"relation_dist names relations outside the vocabulary: {sorted(unknown)}")
        if dist and (min(dist.values()) < 0 or sum(dist.values()) <= 0):
            raise InvalidWorldConfig("relation_dist weights must be non-negative with a positive sum")

    @property
    def n_novel(self) -> int:
        return int(round(self.n_heads * self.novel_fraction))

    @property
    def relation_weights(self) -> dict[str, float]:
        dist = dict(self.relation_dist) or default_relation_dist(self.relations)
        total = sum(dist.get(r, 0.0) for r in self.relations)
        return {r: dist.get(r, 0.0) / total for r in self.relations}

    def to_dict(self) -> dict:
        data = asdict(self)
        data["relation_dist"] = self.relation_weights
        return {key: list(value) if isinstance(value, tuple) else value for key, value in data.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidWorldConfig(f"unknown world config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Region:
    id: str
    box: RegionBox
    object_id: str


@dataclass(frozen=True)
class Image:
    id: str
    width: float
    height: float
    regions: tuple

    def region(self, region_id) -> Region:
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(f"image {self.id} has no region {region_id!r}")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    id: str
    image_id: str
    region_id: str
    region: RegionBox
    truth_head: str
    raw: np.ndarray = field(repr=False)


class World:
    """Immutable product of :func:`generate`; reloadable from its JSON document."""

    def __init__(self, config: WorldConfig, concept_seed: int, oracle_kb: KnowledgeSource,
                 known_heads, novel_heads, images, objects, splits):
        self.config = config
        self.concept_seed = int(concept_seed)
        self.oracle_kb = oracle_kb
        self.known_heads = frozenset(known_heads)
        self.novel_heads = frozenset(novel_heads)
        self.images = {image.id: image for image in images}
        self.objects = {obj.id: obj for obj in objects}
        self.splits = {name: tuple(ids) for name, ids in splits.items()}
        self.concepts = ConceptTable(self.concept_seed, config.d)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def heads(self) -> list[str]:
        return sorted(self.known_heads | self.novel_heads)

    def split_objects(self, name) -> list[ObjectInstance]:
        return [self.objects[object_id] for object_id in self.splits[name]]

    def image_of(self, obj: ObjectInstance) -> Image:
        return self.images[obj.image_id]

    def objects_in(self, image: Image) -> list[ObjectInstance]:
        return [self.objects[region.object_id] for region in image.regions]

    def summary(self) -> dict:
        return {
            "heads": len(self.known_heads) + len(self.novel_heads),
            "known_heads": len(self.known_heads),
            "novel_heads": len(self.novel_heads),
            "images": len(self.images),
            "objects": len(self.objects),
            "triplets": len(self.oracle_kb),
            **{f"{name}_objects": len(ids) for name, ids in self.splits.items()},
        }

    # ------------------------------------------------------------------
    # World file
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": WORLD_FORMAT,
            "version": WORLD_VERSION,
            "seed": self.seed,
            "concept_seed": self.concept_seed,
            "config": self.config.to_dict(),
            "known_heads": sorted(self.known_heads),
            "novel_heads": sorted(self.novel_heads),
            "oracle_triplets": [[t.head, t.relation, t.tail] for t in self.oracle_kb],
            "images": [
                {
                    "id": image.id,
                    "width": image.width,
                    "height": image.height,
                    "regions": [
                        {"id": r.id, "box": list(r.box.as_tuple()), "object_id": r.object_id}
                        for r in image.regions
                    ],
                }
                for image in self.images.values()
            ],
            "objects": [
                {
                    "id": obj.id,
                    "image_id": obj.image_id,
                    "region_id": obj.region_id,
                    "truth_head": obj.truth_head,
                    "raw": [float(value) for value in obj.raw],
                }
                for obj in self.objects.values()
            ],
            "splits": {name: list(ids) for name, ids in self.splits.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "World":
        if data.get("format") != WORLD_FORMAT:
            raise WorldFileError(f"not a world file (format={data.get('format')!r})")
        if data.get("version") != WORLD_VERSION:
            raise WorldFileError(f"unsupported world file version {data.get('version')!r}")
        try:
            config = WorldConfig.from_dict(data["config"])
            oracle_kb = KnowledgeSource(
                (Triplet.create(*fields, vocabulary=config.relations) for fields in data["oracle_triplets"]),
                vocabulary=config.relations,
            )
            images, boxes = [], {}
            for item in data["images"]:
                regions = []
                for region in item["regions"]:
                    box = RegionBox(*region["box"])
                    boxes[region["object_id"]] = box
                    regions.append(Region(region["id"], box, region["object_id"]))
                images.append(Image(item["id"], item["width"], item["height"], tuple(regions)))
            objects = [
                ObjectInstance(
                    id=item["id"],
                    image_id=item["image_id"],
                    region_id=item["region_id"],
                    region=boxes[item["id"]],
                    truth_head=item["truth_head"],
                    raw=_readonly(item["raw"]),
                )
                for item in data["objects"]
            ]
            return cls(config, data["concept_seed"], oracle_kb, data["known_heads"], data["novel_heads"],
                       images, objects, data["splits"])
        except (KeyError, TypeError) as exc:
            raise WorldFileError(f"malformed world file: missing or invalid {exc}") from exc

    @classmethod
    def load(cls, path) -> "World":
        with open(path, encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as exc:
                raise WorldFileError(f"world file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _readonly(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


def _pseudo_words(rng, count, taken=()):
    words, seen = [], set(taken)
    while len(words) < count:
        size = int(rng.integers(2, 4))
        word = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), size))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def generate(config: WorldConfig | None = None, seed: int | None = None) -> World:
    """Pure function of ``(config, seed)``; ``seed`` overrides ``config.seed``."""
    config = config or WorldConfig()
    if seed is not None and seed != config.seed:
        config = WorldConfig.from_dict({**config.to_dict(), "seed": int(seed)})
    rng = np.random.default_rng([config.seed, WORLD_STREAM])

    heads = _pseudo_words(rng, config.n_heads)
    order = rng.permutation(len(heads))
    novel_heads = sorted(heads[i] for i in order[:config.n_novel])
    known_heads = sorted(heads[i] for i in order[config.n_novel:])

    weights = config.relation_weights
    relations = list(config.relations)
    probabilities = np.array([weights[r] for r in relations])
    tail_pools = {}
    for relation in relations:
        size = max(4, int(round(config.n_tails * weights[relation])))
        tail_pools[relation] = _pseudo_words(rng, size, taken=heads)

    triplets = []
    low, high = config.triplets_per_head
    for head in heads:
        wanted = int(rng.integers(low, high + 1))
        chosen = set()
        attempts = 0
        while len(chosen) < wanted and attempts < 50 * wanted:
            attempts += 1
            relation = relations[int(rng.choice(len(relations), p=probabilities))]
            pool = tail_pools[relation]
            chosen.add((relation, pool[int(rng.integers(len(pool)))]))
        triplets.extend(Triplet(head, relation, tail) for relation, tail in sorted(chosen))
    oracle_kb = KnowledgeSource(triplets, vocabulary=config.relations)

    concept_seed = int(rng.integers(0, 2**31 - 1))
    concepts = ConceptTable(concept_seed, config.d)
    centroids = {
        head: np.sum([concepts.vector(t.relation, t.tail) for t in oracle_kb.triplets_for(head)], axis=0)
        for head in heads
    }

    image_order = rng.permutation(config.n_images)
    n_train = max(1, int(round(config.n_images * config.split_fractions[0])))
    n_query = max(1, int(round(config.n_images * config.split_fractions[1])))
    n_train = min(n_train, config.n_images - 2)
    n_query = min(n_query, config.n_images - n_train - 1)
    image_split = {}
    for rank, index in enumerate(image_order):
        image_split[int(index)] = "train" if rank < n_train else "query" if rank < n_train + n_query else "test"

    feature_rng = np.random.default_rng([config.seed, FEATURE_STREAM])
    width, height = config.image_size
    smallest, largest = config.box_size
    lo_regions, hi_regions = config.regions_per_image
    images, objects = [], []
    splits = {name: [] for name in SPLITS}
    for index in range(config.n_images):
        image_id = f"img{index:04d}"
        split = image_split[index]
        label_space = known_heads if split == "train" else heads
        regions = []
        for slot in range(int(rng.integers(lo_regions, hi_regions + 1))):
            w = round(float(rng.uniform(smallest, largest)), 2)
            h = round(float(rng.uniform(smallest, largest)), 2)
            x = round(float(rng.uniform(0.0, width - w)), 2)
            y = round(float(rng.uniform(0.0, height - h)), 2)
            box = RegionBox(x, y, w, h)
            head = label_space[int(rng.integers(len(label_space)))]
            object_id = f"o{len(objects):05d}"
            feature = centroids[head] + config.feature_noise * feature_rng.standard_normal(config.d)
            norm = np.linalg.norm(feature)
            raw = _readonly(feature / norm if norm > 0 else centroids[head] / np.linalg.norm(centroids[head]))
            region_id = f"r{slot}"
            objects.append(ObjectInstance(object_id, image_id, region_id, box, head, raw))
            regions.append(Region(region_id, box, object_id))
            splits[split].append(object_id)
        images.append(Image(image_id, float(width), float(height), tuple(regions)))

    world = World(config, concept_seed, oracle_kb, known_heads, novel_heads, images, objects, splits)
    logger.info("Generated world seed=%d: %s", config.seed, world.summary())
    return world


def train_knowledge(world: World) -> KnowledgeSource:
    """The classifier's starting K: every oracle triplet whose head is known."""
    return KnowledgeSource(
        (t for t in world.oracle_kb.entries if t.head in world.known_heads),
        vocabulary=world.oracle_kb.vocabulary,
    )
