"""Shared builders for constructed objects and small generated worlds."""
from pathlib import Path

import numpy as np

from acquisition.knowledge_store import KnowledgeSource, Triplet
from acquisition.object_classifier import ObjectClassifier, TrainingConfig
from acquisition.oracle_answerer import RegionBox
from acquisition.world_generator import Image, ObjectInstance, Region, World, WorldConfig, generate, train_knowledge

SMALL_WORLD = dict(seed=3, n_heads=12, novel_fraction=0.25, n_images=40, n_tails=24)


def small_world_config(**overrides):
    return WorldConfig(**{**SMALL_WORLD, **overrides})


def small_world(**overrides):
    return generate(small_world_config(**overrides))


def make_object(object_id, head, raw, box=(0, 0, 10, 10), image_id="img0", region_id="r0"):
    return ObjectInstance(object_id, image_id, region_id, RegionBox(*box), head, np.asarray(raw, dtype=float))


def knowledge(*triplets):
    return KnowledgeSource(Triplet.create(*fields) for fields in triplets)


def two_object_world(dog_box=(0, 0, 100, 100), cup_box=(300, 200, 100, 100), oracle=None):
    """One image holding a dog and a cup; the oracle knows one fact about each unless given."""
    oracle = oracle or knowledge(("dog", "IsA", "mammal"), ("cup", "UsedFor", "drinking"))
    dog = make_object("o0", "dog", [1, 0, 0, 0], dog_box, region_id="r0")
    cup = make_object("o1", "cup", [0, 1, 0, 0], cup_box, region_id="r1")
    image = Image("img0", 640.0, 480.0, (Region("r0", dog.region, "o0"), Region("r1", cup.region, "o1")))
    return World(
        WorldConfig(d_raw=4, d=4), 0, oracle, known_heads={"dog"}, novel_heads={"cup"},
        images=[image], objects=[dog, cup], splits={"train": ["o0"], "query": ["o1"], "test": ["o0", "o1"]},
    )


QUICK_EPISODE = {"fine_tune": {"epochs": 2, "learning_rate": 0.01, "negatives": 5}}


def write_experiment_files(directory, epochs=2):
    """Small world plus a briefly trained checkpoint on disk; returns ``(world path, checkpoint path)``."""
    world = small_world()
    classifier, _ = ObjectClassifier.train(
        world.split_objects("train"), train_knowledge(world), world.concepts, TrainingConfig(epochs=epochs, seed=1)
    )
    directory = Path(directory)
    return world.save(directory / "world.json"), classifier.projection.save(directory / "projection.ckpt")
